"""Architectures: patch geometry oracles, attention contracts, invariants."""

import numpy as np
import pytest

import melvit.autodiff as ad
from melvit.autodiff import ShapeError, Tensor, backward
from melvit.config import tiny_model
from melvit.models import (
    CNN_FILTERS,
    SSC_FILTERS,
    SSC_MLP,
    ModelConfig,
    attention,
    count_parameters,
    forward,
    grid_patchify,
    init_params,
    multi_head,
    transformer_block,
    vertical_patchify,
    vit_forward,
)
from melvit.rng import Rng

from fdcheck import check_param_grads, numerical_grad, assert_grads_close


def unpatchify_oracle(patches: np.ndarray, n_mels, n_frames, ph, pw) -> np.ndarray:
    """Independent grid reassembly by explicit loops."""
    gh, gw = n_mels // ph, n_frames // pw
    out = np.zeros((gh * ph, gw * pw), dtype=patches.dtype)
    k = 0
    for i in range(gh):
        for j in range(gw):
            out[i * ph : (i + 1) * ph, j * pw : (j + 1) * pw] = patches[k].reshape(ph, pw)
            k += 1
    return out


class TestGridPatchify:
    def test_counts_and_dim(self):
        values = np.random.default_rng(0).normal(size=(128, 48)).astype(np.float32)
        ps = grid_patchify(values, 16, 16)
        assert ps.n_patches == 24  # 8 * 3
        assert ps.patch_dim == 256
        assert ps.layout == "grid"

    def test_full_patch_is_flattened_input(self):
        values = np.random.default_rng(1).normal(size=(6, 5)).astype(np.float32)
        ps = grid_patchify(values, 6, 5)
        assert ps.n_patches == 1
        np.testing.assert_array_equal(ps.patches[0], values.reshape(-1))

    def test_round_trip_against_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            M, T = int(rng.integers(4, 40)), int(rng.integers(4, 40))
            ph, pw = int(rng.integers(1, M + 1)), int(rng.integers(1, T + 1))
            values = rng.normal(size=(M, T)).astype(np.float32)
            ps = grid_patchify(values, ph, pw)
            gh, gw = M // ph, T // pw
            assert ps.n_patches == gh * gw
            back = unpatchify_oracle(ps.patches, M, T, ph, pw)
            np.testing.assert_array_equal(back, values[: gh * ph, : gw * pw])

    def test_oversized_patch_rejected(self):
        with pytest.raises(ShapeError, match="larger"):
            grid_patchify(np.zeros((8, 8), dtype=np.float32), 9, 2)


class TestVerticalPatchify:
    def test_counts_and_dim(self):
        values = np.random.default_rng(3).normal(size=(128, 100)).astype(np.float32)
        ps = vertical_patchify(values, 7, 1)
        assert ps.n_patches == 94  # 100 - 7 + 1
        assert ps.patch_dim == 128 * 7
        assert ps.layout == "vertical"

    def test_width_equals_frames_single_patch(self):
        values = np.random.default_rng(4).normal(size=(10, 13)).astype(np.float32)
        ps = vertical_patchify(values, 13, 1)
        assert ps.n_patches == 1

    def test_time_major_flattening(self):
        values = np.random.default_rng(5).normal(size=(6, 9)).astype(np.float32)
        ps = vertical_patchify(values, 4, 1)
        for t in range(ps.n_patches):
            expect = values[:, t : t + 4].T.reshape(-1)  # frame by frame
            np.testing.assert_array_equal(ps.patches[t], expect)

    def test_stride_one_overlap(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            M = int(rng.integers(2, 20))
            T = int(rng.integers(8, 30))
            w = int(rng.integers(2, 7))
            ps = vertical_patchify(rng.normal(size=(M, T)).astype(np.float32), w, 1)
            for t in range(ps.n_patches - 1):
                np.testing.assert_array_equal(
                    ps.patches[t][M:], ps.patches[t + 1][: (w - 1) * M]
                )

    def test_stride_respects_count(self):
        values = np.zeros((4, 21), dtype=np.float32)
        assert vertical_patchify(values, 5, 2).n_patches == (21 - 5) // 2 + 1

    def test_too_wide_rejected(self):
        with pytest.raises(ShapeError, match="width"):
            vertical_patchify(np.zeros((4, 5), dtype=np.float32), 6, 1)


class TestAttention:
    def test_zero_queries_average_values(self):
        rng = np.random.default_rng(7)
        v = rng.normal(size=(5, 3))
        out = attention(
            Tensor(np.zeros((5, 3), dtype=np.float64)),
            Tensor(rng.normal(size=(5, 3))),
            Tensor(v),
        )
        np.testing.assert_allclose(out.data, np.broadcast_to(v.mean(axis=0), (5, 3)), rtol=1e-9)

    def test_single_token_returns_value(self):
        rng = np.random.default_rng(8)
        q, k, v = (Tensor(rng.normal(size=(1, 4))) for _ in range(3))
        np.testing.assert_allclose(attention(q, k, v).data, v.data, rtol=1e-12)

    def test_weights_row_stochastic(self):
        rng = np.random.default_rng(9)
        q, k, v = (Tensor(rng.normal(size=(2, 6, 4))) for _ in range(3))
        _, weights = attention(q, k, v, return_weights=True)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)
        assert (weights.data >= 0).all()

    def test_scale_override(self):
        rng = np.random.default_rng(10)
        q, k, v = (Tensor(rng.normal(size=(3, 4))) for _ in range(3))
        default = attention(q, k, v)
        by_seq = attention(q, k, v, scale=1.0 / np.sqrt(3))
        assert not np.allclose(default.data, by_seq.data)


def _mh_weights(d, inner, rng, dtype=np.float64, requires_grad=True):
    def w(shape):
        return Tensor(rng.normal(size=shape).astype(dtype) * 0.3, requires_grad=requires_grad)

    return {
        "wq": w((d, inner)), "bq": w((inner,)),
        "wk": w((d, inner)), "bk": w((inner,)),
        "wv": w((d, inner)), "bv": w((inner,)),
        "wo": w((inner, d)), "bo": w((d,)),
    }


class TestMultiHead:
    def test_single_head_identity_projections_reduce_to_attention(self):
        rng = np.random.default_rng(11)
        d = 4
        x = Tensor(rng.normal(size=(5, d)))
        eye = lambda: Tensor(np.eye(d, dtype=np.float64))
        zero = lambda: Tensor(np.zeros(d, dtype=np.float64))
        weights = {
            "wq": eye(), "bq": zero(), "wk": eye(), "bk": zero(),
            "wv": eye(), "bv": zero(), "wo": eye(), "bo": zero(),
        }
        out = multi_head(x, weights, n_heads=1, head_dim=d)
        expect = attention(x, x, x)
        np.testing.assert_allclose(out.data, expect.data, rtol=1e-10)

    @pytest.mark.parametrize("n_heads", [1, 2, 4])
    def test_output_shape_fixed(self, n_heads):
        rng = np.random.default_rng(12)
        d = 8
        x = Tensor(rng.normal(size=(2, 6, d)))
        weights = _mh_weights(d, n_heads * (d // n_heads), rng)
        assert multi_head(x, weights, n_heads, d // n_heads).shape == (2, 6, d)

    def test_zero_output_projection_still_gets_gradient(self):
        rng = np.random.default_rng(13)
        d = 4
        x = Tensor(rng.normal(size=(3, d)))
        weights = _mh_weights(d, d, rng)
        weights["wo"] = Tensor(np.zeros((d, d), dtype=np.float64), requires_grad=True)
        weights["bo"] = Tensor(np.zeros(d, dtype=np.float64), requires_grad=True)
        probe = Tensor(rng.normal(size=(3, d)))

        def loss():
            return ad.tsum(ad.mul(multi_head(x, weights, 2, 2), probe))

        out = multi_head(x, weights, 2, 2)
        np.testing.assert_array_equal(out.data, 0.0)
        backward(loss())
        assert np.abs(weights["wo"].grad).sum() > 0
        numeric = numerical_grad(lambda: loss().item(), weights["wo"].data)
        assert_grads_close(weights["wo"].grad, numeric, rtol=1e-4)


class TestTransformerBlock:
    def _cfg(self, **kw):
        defaults = dict(
            arch="vit", n_logits=2, n_mels=16, n_frames=16, dropout=0.0,
            embedding_size=8, n_heads=2, mlp_dim=12, n_blocks=1,
        )
        defaults.update(kw)
        return ModelConfig(**defaults)

    def _block_params(self, e, inner, mlp_dim, rng, zero_out=False):
        def w(shape, scale=0.3):
            return Tensor(rng.normal(size=shape).astype(np.float64) * scale, requires_grad=True)

        p = {
            "ln1.gamma": Tensor(np.ones(e, dtype=np.float64), requires_grad=True),
            "ln1.beta": Tensor(np.zeros(e, dtype=np.float64), requires_grad=True),
            "attn.q.w": w((e, inner)), "attn.q.b": w((inner,)),
            "attn.k.w": w((e, inner)), "attn.k.b": w((inner,)),
            "attn.v.w": w((e, inner)), "attn.v.b": w((inner,)),
            "attn.o.w": w((inner, e)), "attn.o.b": w((e,)),
            "ln2.gamma": Tensor(np.ones(e, dtype=np.float64), requires_grad=True),
            "ln2.beta": Tensor(np.zeros(e, dtype=np.float64), requires_grad=True),
            "mlp.fc1.w": w((e, 12)), "mlp.fc1.b": w((12,)),
            "mlp.fc2.w": w((12, e)), "mlp.fc2.b": w((e,)),
        }
        if zero_out:
            p["attn.o.w"] = Tensor(np.zeros((inner, e), dtype=np.float64), requires_grad=True)
            p["attn.o.b"] = Tensor(np.zeros(e, dtype=np.float64), requires_grad=True)
            p["mlp.fc2.w"] = Tensor(np.zeros((12, e), dtype=np.float64), requires_grad=True)
            p["mlp.fc2.b"] = Tensor(np.zeros(e, dtype=np.float64), requires_grad=True)
        return p

    def test_zeroed_projections_make_identity(self):
        rng = np.random.default_rng(14)
        cfg = self._cfg()
        p = self._block_params(8, 8, 12, rng, zero_out=True)
        x = Tensor(rng.normal(size=(2, 5, 8)))
        out = transformer_block(x, p, cfg, Rng(0), training=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_shape_preserved_over_stacked_blocks(self):
        rng = np.random.default_rng(15)
        cfg = self._cfg()
        x = Tensor(rng.normal(size=(3, 7, 8)))
        for _ in range(4):
            p = self._block_params(8, 8, 12, rng)
            x = transformer_block(x, p, cfg, Rng(0), training=False)
        assert x.shape == (3, 7, 8)

    def test_gradients_through_two_blocks(self):
        rng = np.random.default_rng(16)
        cfg = self._cfg()
        p1 = self._block_params(8, 8, 12, rng)
        p2 = self._block_params(8, 8, 12, rng)
        x = Tensor(rng.normal(size=(1, 4, 8)))
        probe = Tensor(rng.normal(size=(1, 4, 8)))
        params = {f"b1.{k}": v for k, v in p1.items()}
        params.update({f"b2.{k}": v for k, v in p2.items()})

        def make_loss():
            h = transformer_block(x, p1, cfg, Rng(0), training=False)
            h = transformer_block(h, p2, cfg, Rng(0), training=False)
            return ad.tsum(ad.mul(h, probe))

        check_param_grads(make_loss, params, np.random.default_rng(17), probes=6, rtol=1e-4)


def closed_form_cnn_params(cfg: ModelConfig) -> int:
    total = 0
    c_in = 1
    h, w = cfg.n_mels, cfg.n_frames
    for f in CNN_FILTERS:
        total += 2 * c_in  # batchnorm affine
        total += f * c_in * 9 + f  # conv
        c_in = f
        h //= 2
        w //= 2
    flat = CNN_FILTERS[-1] * h * w
    total += 2 * flat
    total += flat * 128 + 128
    total += 128 * cfg.n_logits + cfg.n_logits
    return total


def closed_form_ssc_params(cfg: ModelConfig) -> int:
    total = 0
    band = cfg.n_mels // cfg.n_bands
    h, w = band, cfg.n_frames
    per_band = 0
    c_in = 1
    for f in SSC_FILTERS:
        per_band += 2 * c_in + f * c_in * 9 + f
        c_in = f
        h //= 2
        w //= 2
    total += cfg.n_bands * per_band
    concat = cfg.n_bands * SSC_FILTERS[-1] * h * w
    total += concat * SSC_MLP[0] + SSC_MLP[0]
    total += SSC_MLP[0] * SSC_MLP[1] + SSC_MLP[1]
    total += SSC_MLP[1] * cfg.n_logits + cfg.n_logits
    return total


def closed_form_vit_params(cfg: ModelConfig, n_patches: int, patch_dim: int) -> int:
    e = cfg.embedding_size
    inner = cfg.n_heads * cfg.resolved_head_dim
    total = patch_dim * e + e  # embed
    total += e  # cls
    total += (n_patches + 1) * e  # pos
    per_block = 2 * e + 3 * (e * inner + inner) + inner * e + e + 2 * e
    per_block += e * cfg.mlp_dim + cfg.mlp_dim + cfg.mlp_dim * e + e
    total += cfg.n_blocks * per_block
    total += 2 * e
    total += e * cfg.lat_dim + cfg.lat_dim
    total += cfg.lat_dim * cfg.n_logits + cfg.n_logits
    return total


class TestArchitectures:
    def _batch(self, n_mels, n_frames, b=4, seed=20):
        return np.random.default_rng(seed).normal(size=(b, n_mels, n_frames))

    @pytest.mark.parametrize("arch", ["cnn", "ssc", "vit", "vvit"])
    @pytest.mark.parametrize("n_logits", [5, 1])
    def test_logit_lengths(self, arch, n_logits):
        cfg = tiny_model(arch, n_logits=n_logits, n_mels=32, n_frames=24)
        params, buffers = init_params(cfg, Rng(0))
        out = forward(self._batch(32, 24), cfg, params, buffers, Rng(1), training=False)
        assert out.shape == (4, n_logits)

    @pytest.mark.parametrize("arch", ["cnn", "ssc", "vit", "vvit"])
    def test_eval_mode_deterministic(self, arch):
        cfg = tiny_model(arch, n_logits=3, n_mels=32, n_frames=24)
        params, buffers = init_params(cfg, Rng(0))
        x = self._batch(32, 24)
        a = forward(x, cfg, params, buffers, Rng(1), training=False)
        b = forward(x, cfg, params, buffers, Rng(99), training=False)
        assert np.array_equal(a.data, b.data)

    @pytest.mark.parametrize("arch", ["cnn", "ssc", "vit", "vvit"])
    def test_every_parameter_gets_gradient(self, arch):
        cfg = tiny_model(arch, n_logits=3, n_mels=32, n_frames=24)
        params, buffers = init_params(cfg, Rng(0))
        out = forward(self._batch(32, 24), cfg, params, buffers, Rng(1), training=True)
        backward(ad.cross_entropy_logits(out, np.array([0, 1, 2, 0])))
        for name, p in params.items():
            assert p.grad is not None and np.abs(p.grad).sum() > 0, f"dead parameter {name}"

    def test_cnn_flatten_dim_closed_form(self):
        # 128x64 input -> four halvings -> 64 channels of 8x4
        cfg = ModelConfig(arch="cnn", n_logits=5, n_mels=128, n_frames=64)
        params, _ = init_params(cfg, Rng(0))
        assert params["fc.bn.gamma"].shape == (64 * 8 * 4,)

    def test_cnn_parameter_count_closed_form(self):
        cfg = ModelConfig(arch="cnn", n_logits=5, n_mels=32, n_frames=24)
        params, _ = init_params(cfg, Rng(0))
        assert count_parameters(params) == closed_form_cnn_params(cfg)

    def test_ssc_parameter_count_closed_form(self):
        cfg = ModelConfig(arch="ssc", n_logits=2, n_mels=32, n_frames=24)
        params, _ = init_params(cfg, Rng(0))
        assert count_parameters(params) == closed_form_ssc_params(cfg)

    def test_vit_parameter_count_closed_form(self):
        cfg = tiny_model("vit", n_logits=5, n_mels=32, n_frames=24)
        params, _ = init_params(cfg, Rng(0))
        n_patches = (32 // cfg.patch_h) * (24 // cfg.patch_w)
        assert count_parameters(params) == closed_form_vit_params(
            cfg, n_patches, cfg.patch_h * cfg.patch_w
        )

    def test_ssc_band_count(self):
        cfg = ModelConfig(arch="ssc", n_logits=2, n_mels=128, n_frames=24)
        params, _ = init_params(cfg, Rng(0))
        assert "band3.conv0.w" in params and "band4.conv0.w" not in params
        # four bands of 32 rows each
        assert cfg.n_mels // cfg.n_bands == 32

    def test_ssc_indivisible_mels_rejected(self):
        cfg = ModelConfig(arch="ssc", n_logits=2, n_mels=30, n_frames=24)
        with pytest.raises(ValueError, match="divisible"):
            init_params(cfg, Rng(0))

    def test_ssc_band_permutation_moves_embedding_slots(self):
        """Swapping two full input bands swaps which band network sees them."""
        cfg = ModelConfig(arch="ssc", n_logits=2, n_mels=32, n_frames=24, dropout=0.0)
        params, buffers = init_params(cfg, Rng(0))
        x = self._batch(32, 24, b=2)
        base = forward(x, cfg, params, buffers, Rng(1), training=False).data
        swapped = x.copy()
        swapped[:, 0:8], swapped[:, 8:16] = x[:, 8:16], x[:, 0:8]
        out = forward(swapped, cfg, params, buffers, Rng(1), training=False).data
        assert not np.allclose(base, out)

    def test_vit_finite_logits_at_large_magnitude(self):
        cfg = tiny_model("vit", n_logits=5, n_mels=32, n_frames=24)
        params, buffers = init_params(cfg, Rng(0))
        x = np.random.default_rng(21).uniform(-100, 100, size=(3, 32, 24))
        out = forward(x, cfg, params, buffers, Rng(1), training=False)
        assert np.isfinite(out.data).all()

    def test_vvit_equals_vit_when_layouts_coincide(self):
        """Full-height grid patches of width 1 and vertical width-1 windows
        produce identical token sequences, so logits agree bitwise."""
        n_mels, n_frames = 12, 10
        vit_cfg = ModelConfig(
            arch="vit", n_logits=3, n_mels=n_mels, n_frames=n_frames,
            embedding_size=16, n_heads=2, n_blocks=2, mlp_dim=24, lat_dim=16,
            patch_h=n_mels, patch_w=1,
        )
        vvit_cfg = ModelConfig(
            arch="vvit", n_logits=3, n_mels=n_mels, n_frames=n_frames,
            embedding_size=16, n_heads=2, n_blocks=2, mlp_dim=24, lat_dim=16,
            vpatch_width=1, vpatch_stride=1,
        )
        p_vit, b_vit = init_params(vit_cfg, Rng(5))
        p_vvit, b_vvit = init_params(vvit_cfg, Rng(5))
        for name in p_vit:
            assert np.array_equal(p_vit[name].data, p_vvit[name].data), name
        x = self._batch(n_mels, n_frames, b=2)
        out_vit = forward(x, vit_cfg, p_vit, b_vit, Rng(1), training=False)
        out_vvit = forward(x, vvit_cfg, p_vvit, b_vvit, Rng(1), training=False)
        assert np.array_equal(out_vit.data, out_vvit.data)

    def test_class_token_readout_is_permutation_consistent(self):
        """Permuting patches together with their positional embeddings leaves
        the class-token logits unchanged."""
        cfg = tiny_model("vit", n_logits=4, n_mels=32, n_frames=24)
        params, _ = init_params(cfg, Rng(3), dtype=np.float64)
        tokens = np.random.default_rng(22).normal(size=(2, 12, 64))  # 4x3 patches of 8x8
        out = vit_forward(Tensor(tokens), cfg, params, Rng(0), training=False)
        perm = np.random.default_rng(23).permutation(12)
        permuted_params = dict(params)
        pos = params["pos"].data.copy()
        pos[:, 1:] = pos[:, 1:][:, perm]
        permuted_params["pos"] = Tensor(pos, requires_grad=True)
        out_perm = vit_forward(
            Tensor(tokens[:, perm]), cfg, permuted_params, Rng(0), training=False
        )
        np.testing.assert_allclose(out.data, out_perm.data, rtol=1e-9, atol=1e-12)

    def test_batch_geometry_mismatch_rejected(self):
        cfg = tiny_model("cnn", n_logits=2, n_mels=32, n_frames=24)
        params, buffers = init_params(cfg, Rng(0))
        with pytest.raises(ShapeError, match="geometry"):
            forward(self._batch(32, 30), cfg, params, buffers, Rng(1), training=False)

    def test_init_is_seed_deterministic(self):
        cfg = tiny_model("vit", n_logits=2, n_mels=32, n_frames=24)
        a, _ = init_params(cfg, Rng(8))
        b, _ = init_params(cfg, Rng(8))
        for name in a:
            assert np.array_equal(a[name].data, b[name].data)

    def test_scale_by_seq_len_flag_changes_output(self):
        base = tiny_model("vit", n_logits=2, n_mels=32, n_frames=24)
        flagged = ModelConfig(**{**base.__dict__, "scale_by_seq_len": True})
        params, buffers = init_params(base, Rng(0))
        x = self._batch(32, 24, b=2)
        a = forward(x, base, params, buffers, Rng(1), training=False)
        b = forward(x, flagged, params, buffers, Rng(1), training=False)
        assert not np.allclose(a.data, b.data)
