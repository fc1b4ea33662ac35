"""The four classifier architectures over log-mel inputs.

cnn:  four conv blocks (batchnorm, dropout, 3x3 conv pad 1, 2x2 maxpool, GELU)
      with filter counts {32, 64, 128, 64}, then a linear module and head.
ssc:  the same block recipe as four small per-mel-band CNNs (filters {32, 64})
      whose embeddings are concatenated into a [128, 64, n_logits] MLP.
vit:  patch embedding, learned class token and positional embeddings, a stack
      of pre-norm transformer blocks, and a linear module before the head.
vvit: identical to vit except patches are overlapping full-height windows
      slid along the time axis.

Parameters live in a flat name -> Tensor dict; batch-norm running statistics
in a separate name -> ndarray buffer dict. Initialization is Kaiming-uniform
for conv/linear weights, zeros for biases, N(0, 0.02) for the class token and
positional embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .rng import Rng

ARCHITECTURES = ("cnn", "ssc", "vit", "vvit")

CNN_FILTERS = (32, 64, 128, 64)
SSC_FILTERS = (32, 64)
SSC_MLP = (128, 64)


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    n_logits: int
    n_mels: int
    n_frames: int
    dropout: float = 0.2
    # transformer geometry
    embedding_size: int = 64
    lat_dim: int = 64
    mlp_dim: int = 128
    n_heads: int = 4
    head_dim: int | None = None  # derived as embedding_size / n_heads when unset
    n_blocks: int = 4
    patch_h: int = 16
    patch_w: int = 16
    vpatch_width: int = 7
    vpatch_stride: int = 1
    # subspectral band count (8 selectable)
    n_bands: int = 4
    # scale attention by 1/sqrt(seq_len) instead of 1/sqrt(head_dim)
    scale_by_seq_len: bool = False

    @property
    def resolved_head_dim(self) -> int:
        if self.head_dim is not None:
            return self.head_dim
        return self.embedding_size // self.n_heads

    def problems(self) -> list[str]:
        out = []
        if self.arch not in ARCHITECTURES:
            out.append(f"model.arch must be one of {', '.join(ARCHITECTURES)}, got {self.arch!r}")
        if self.n_logits < 1:
            out.append(f"model.n_logits must be >= 1, got {self.n_logits}")
        if self.n_mels < 1 or self.n_frames < 1:
            out.append(f"model input extents must be positive, got {self.n_mels}x{self.n_frames}")
        if not 0.0 <= self.dropout < 1.0:
            out.append(f"model.dropout must be in [0, 1), got {self.dropout}")
        if self.arch in ("vit", "vvit"):
            if self.head_dim is None and self.embedding_size % self.n_heads != 0:
                out.append(
                    f"model.embedding_size {self.embedding_size} not divisible by "
                    f"n_heads {self.n_heads} and no explicit head_dim"
                )
            if self.n_blocks < 1:
                out.append(f"model.n_blocks must be >= 1, got {self.n_blocks}")
        if self.arch == "vit":
            if self.patch_h > self.n_mels or self.patch_w > self.n_frames:
                out.append(
                    f"model patch {self.patch_h}x{self.patch_w} larger than input "
                    f"{self.n_mels}x{self.n_frames}"
                )
        if self.arch == "vvit":
            if self.vpatch_width > self.n_frames:
                out.append(
                    f"model.vpatch_width {self.vpatch_width} exceeds n_frames {self.n_frames}"
                )
            if self.vpatch_width < 1 or self.vpatch_stride < 1:
                out.append("model.vpatch_width and vpatch_stride must be >= 1")
        if self.arch == "cnn" and (self.n_mels < 16 or self.n_frames < 16):
            out.append(
                f"cnn needs both extents >= 16 for four 2x2 pools, got "
                f"{self.n_mels}x{self.n_frames}"
            )
        if self.arch == "ssc":
            if self.n_mels % self.n_bands != 0:
                out.append(f"ssc needs n_mels divisible by {self.n_bands}, got {self.n_mels}")
            band = self.n_mels // max(self.n_bands, 1)
            if band < 4 or self.n_frames < 4:
                out.append(
                    f"ssc bands of {band} rows x {self.n_frames} frames too small for two 2x2 pools"
                )
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class PatchSequence:
    patches: np.ndarray  # [n_patches, patch_dim]
    layout: str  # grid | vertical

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]

    @property
    def patch_dim(self) -> int:
        return self.patches.shape[1]


# -- patch extraction --------------------------------------------------------------


def _grid_batch(x: np.ndarray, patch_h: int, patch_w: int) -> np.ndarray:
    """[B, M, T] -> [B, n_patches, patch_h * patch_w], row-major patches in
    row-major order; remainder rows/columns dropped."""
    B, M, T = x.shape
    gh, gw = M // patch_h, T // patch_w
    v = x[:, : gh * patch_h, : gw * patch_w].reshape(B, gh, patch_h, gw, patch_w)
    return v.transpose(0, 1, 3, 2, 4).reshape(B, gh * gw, patch_h * patch_w)


def _vertical_batch(x: np.ndarray, width: int, stride: int) -> np.ndarray:
    """[B, M, T] -> [B, n_patches, width * M]; each patch is a full-height
    window flattened time-major (frame by frame)."""
    win = sliding_window_view(x, width, axis=2)[:, :, ::stride]  # [B, M, n, width]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1)).reshape(
        x.shape[0], win.shape[2], width * x.shape[1]
    )


def grid_patchify(values: np.ndarray, patch_h: int, patch_w: int) -> PatchSequence:
    """Non-overlapping patches of a [n_mels, n_frames] spectrogram."""
    M, T = values.shape
    if patch_h > M or patch_w > T:
        raise ShapeError(f"patch {patch_h}x{patch_w} larger than spectrogram {M}x{T}")
    return PatchSequence(_grid_batch(values[None, :, :], patch_h, patch_w)[0], "grid")


def vertical_patchify(values: np.ndarray, width: int, stride: int = 1) -> PatchSequence:
    """Overlapping full-height windows [t, t + width) stepped by ``stride``."""
    M, T = values.shape
    if width > T:
        raise ShapeError(f"vertical patch width {width} exceeds n_frames {T}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return PatchSequence(_vertical_batch(values[None, :, :], width, stride)[0], "vertical")


def grid_patch_count(n_mels: int, n_frames: int, patch_h: int, patch_w: int) -> int:
    return (n_mels // patch_h) * (n_frames // patch_w)


def vertical_patch_count(n_frames: int, width: int, stride: int) -> int:
    return (n_frames - width) // stride + 1


# -- attention ----------------------------------------------------------------------


def _swap_last(t: Tensor) -> Tensor:
    axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2)
    return ad.transpose(t, axes)


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float | None = None,
              return_weights: bool = False):
    """Scaled dot-product attention over the last two axes.

    ``scale`` defaults to 1/sqrt(d_k), the per-head key width.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if scale is None:
        scale = 1.0 / math.sqrt(k.shape[-1])
    scores = ad.mul(ad.matmul(q, _swap_last(k)), scale)
    weights = ad.softmax(scores, axis=-1)
    out = ad.matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = ad.matmul(x, w)
    return y if b is None else ad.add(y, b)


def multi_head(x: Tensor, weights: dict, n_heads: int, head_dim: int,
               scale: float | None = None) -> Tensor:
    """Per-head projections, parallel attention, concat, output projection.

    ``weights`` holds wq/bq, wk/bk, wv/bv (d -> n_heads*head_dim) and wo/bo
    (n_heads*head_dim -> d). Accepts [n, d] or [batch, n, d].
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    B, n, d = x.shape

    def split_heads(t):
        t = ad.reshape(t, (B, n, n_heads, head_dim))
        return ad.transpose(t, (0, 2, 1, 3))  # [B, h, n, hd]

    q = split_heads(linear(x, weights["wq"], weights["bq"]))
    k = split_heads(linear(x, weights["wk"], weights["bk"]))
    v = split_heads(linear(x, weights["wv"], weights["bv"]))
    out = attention(q, k, v, scale=scale)
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, n, n_heads * head_dim))
    out = linear(out, weights["wo"], weights["bo"])
    if squeeze:
        out = ad.reshape(out, (n, d))
    return out


def transformer_block(x: Tensor, p: dict, cfg: ModelConfig, rng: Rng, training: bool) -> Tensor:
    """Pre-norm residual block: x + MHA(norm(x)); x + MLP(norm(x))."""
    scale = None
    if cfg.scale_by_seq_len:
        scale = 1.0 / math.sqrt(x.shape[-2])
    h = ad.layer_norm(x, p["ln1.gamma"], p["ln1.beta"])
    attn = {
        "wq": p["attn.q.w"], "bq": p["attn.q.b"],
        "wk": p["attn.k.w"], "bk": p["attn.k.b"],
        "wv": p["attn.v.w"], "bv": p["attn.v.b"],
        "wo": p["attn.o.w"], "bo": p["attn.o.b"],
    }
    x = ad.add(x, multi_head(h, attn, cfg.n_heads, cfg.resolved_head_dim, scale=scale))
    h = ad.layer_norm(x, p["ln2.gamma"], p["ln2.beta"])
    m = ad.gelu(linear(h, p["mlp.fc1.w"], p["mlp.fc1.b"]))
    m = ad.dropout(m, cfg.dropout, rng, training)
    m = linear(m, p["mlp.fc2.w"], p["mlp.fc2.b"])
    m = ad.dropout(m, cfg.dropout, rng, training)
    return ad.add(x, m)


# -- parameter initialization -----------------------------------------------------------


def _kaiming_uniform(rng: Rng, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _Builder:
    def __init__(self, rng: Rng, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def conv(self, name, f, c, k=3):
        self.params[f"{name}.w"] = Tensor(
            _kaiming_uniform(self.rng, (f, c, k, k), c * k * k, self.dtype), requires_grad=True
        )
        self.params[f"{name}.b"] = Tensor(np.zeros(f, dtype=self.dtype), requires_grad=True)

    def fc(self, name, d_in, d_out):
        self.params[f"{name}.w"] = Tensor(
            _kaiming_uniform(self.rng, (d_in, d_out), d_in, self.dtype), requires_grad=True
        )
        self.params[f"{name}.b"] = Tensor(np.zeros(d_out, dtype=self.dtype), requires_grad=True)

    def norm(self, name, d):
        self.params[f"{name}.gamma"] = Tensor(np.ones(d, dtype=self.dtype), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(d, dtype=self.dtype), requires_grad=True)

    def bn(self, name, d):
        self.norm(name, d)
        self.buffers[f"{name}.mean"] = np.zeros(d, dtype=self.dtype)
        self.buffers[f"{name}.var"] = np.ones(d, dtype=self.dtype)

    def embedding(self, name, shape):
        self.params[name] = Tensor(
            self.rng.normal(0.0, 0.02, size=shape).astype(self.dtype), requires_grad=True
        )


def _pooled_hw(h: int, w: int, n_pools: int) -> tuple[int, int]:
    for _ in range(n_pools):
        h //= 2
        w //= 2
    return h, w


def patch_geometry(cfg: ModelConfig) -> tuple[int, int]:
    """(n_patches, patch_dim) for the configured transformer layout."""
    if cfg.arch == "vit":
        return (
            grid_patch_count(cfg.n_mels, cfg.n_frames, cfg.patch_h, cfg.patch_w),
            cfg.patch_h * cfg.patch_w,
        )
    return (
        vertical_patch_count(cfg.n_frames, cfg.vpatch_width, cfg.vpatch_stride),
        cfg.n_mels * cfg.vpatch_width,
    )


def init_params(cfg: ModelConfig, rng: Rng, dtype=np.float32):
    """Freshly initialized (params, buffers) for the configured architecture."""
    cfg.validate()
    b = _Builder(rng.derive("init"), dtype)
    if cfg.arch == "cnn":
        c_in = 1
        for i, f in enumerate(CNN_FILTERS):
            b.bn(f"conv{i}.bn", c_in)
            b.conv(f"conv{i}", f, c_in)
            c_in = f
        h, w = _pooled_hw(cfg.n_mels, cfg.n_frames, len(CNN_FILTERS))
        flat = CNN_FILTERS[-1] * h * w
        b.bn("fc.bn", flat)
        b.fc("fc", flat, 128)
        b.fc("head", 128, cfg.n_logits)
    elif cfg.arch == "ssc":
        band_rows = cfg.n_mels // cfg.n_bands
        h, w = _pooled_hw(band_rows, cfg.n_frames, len(SSC_FILTERS))
        for band in range(cfg.n_bands):
            c_in = 1
            for i, f in enumerate(SSC_FILTERS):
                b.bn(f"band{band}.conv{i}.bn", c_in)
                b.conv(f"band{band}.conv{i}", f, c_in)
                c_in = f
        concat_dim = cfg.n_bands * SSC_FILTERS[-1] * h * w
        b.fc("mlp.fc1", concat_dim, SSC_MLP[0])
        b.fc("mlp.fc2", SSC_MLP[0], SSC_MLP[1])
        b.fc("mlp.fc3", SSC_MLP[1], cfg.n_logits)
    else:
        n_patches, patch_dim = patch_geometry(cfg)
        e = cfg.embedding_size
        inner = cfg.n_heads * cfg.resolved_head_dim
        b.fc("embed", patch_dim, e)
        b.embedding("cls", (1, 1, e))
        b.embedding("pos", (1, n_patches + 1, e))
        for i in range(cfg.n_blocks):
            pre = f"block{i}."
            b.norm(pre + "ln1", e)
            b.fc(pre + "attn.q", e, inner)
            b.fc(pre + "attn.k", e, inner)
            b.fc(pre + "attn.v", e, inner)
            b.fc(pre + "attn.o", inner, e)
            b.norm(pre + "ln2", e)
            b.fc(pre + "mlp.fc1", e, cfg.mlp_dim)
            b.fc(pre + "mlp.fc2", cfg.mlp_dim, e)
        b.norm("final.ln", e)
        b.fc("final.fc", e, cfg.lat_dim)
        b.fc("head", cfg.lat_dim, cfg.n_logits)
    return b.params, b.buffers


# -- forwards -----------------------------------------------------------------------


def _conv_block(x, params, buffers, name, p_drop, rng, training):
    x = ad.batch_norm(
        x,
        params[f"{name}.bn.gamma"],
        params[f"{name}.bn.beta"],
        buffers[f"{name}.bn.mean"],
        buffers[f"{name}.bn.var"],
        training,
    )
    x = ad.dropout(x, p_drop, rng, training)
    x = ad.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], pad=1)
    x = ad.maxpool2d(x, 2)
    return ad.gelu(x)


def cnn_forward(x: Tensor, cfg: ModelConfig, params, buffers, rng: Rng, training: bool) -> Tensor:
    B = x.shape[0]
    for i in range(len(CNN_FILTERS)):
        x = _conv_block(x, params, buffers, f"conv{i}", cfg.dropout, rng, training)
    x = ad.reshape(x, (B, -1))
    x = ad.batch_norm(
        x, params["fc.bn.gamma"], params["fc.bn.beta"],
        buffers["fc.bn.mean"], buffers["fc.bn.var"], training,
    )
    x = ad.dropout(x, cfg.dropout, rng, training)
    x = ad.gelu(linear(x, params["fc.w"], params["fc.b"]))
    return linear(x, params["head.w"], params["head.b"])


def ssc_forward(x: Tensor, cfg: ModelConfig, params, buffers, rng: Rng, training: bool) -> Tensor:
    B = x.shape[0]
    band_rows = cfg.n_mels // cfg.n_bands
    embeddings = []
    for band in range(cfg.n_bands):
        lo = band * band_rows
        h = x[:, :, lo : lo + band_rows, :]
        for i in range(len(SSC_FILTERS)):
            h = _conv_block(h, params, buffers, f"band{band}.conv{i}", cfg.dropout, rng, training)
        embeddings.append(ad.reshape(h, (B, -1)))
    z = ad.concatenate(embeddings, axis=1)
    z = ad.gelu(linear(z, params["mlp.fc1.w"], params["mlp.fc1.b"]))
    z = ad.gelu(linear(z, params["mlp.fc2.w"], params["mlp.fc2.b"]))
    return linear(z, params["mlp.fc3.w"], params["mlp.fc3.b"])


def vit_forward(tokens: Tensor, cfg: ModelConfig, params, rng: Rng, training: bool) -> Tensor:
    """Shared trunk for vit and vvit; ``tokens`` is the patch batch [B, n, p]."""
    B = tokens.shape[0]
    x = linear(tokens, params["embed.w"], params["embed.b"])
    cls = ad.broadcast_to(params["cls"], (B, 1, cfg.embedding_size))
    x = ad.concatenate([cls, x], axis=1)
    x = ad.add(x, params["pos"])
    for i in range(cfg.n_blocks):
        pre = f"block{i}."
        block_params = {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}
        x = transformer_block(x, block_params, cfg, rng, training)
    feat = x[:, 0, :]
    feat = ad.layer_norm(feat, params["final.ln.gamma"], params["final.ln.beta"])
    feat = ad.dropout(feat, cfg.dropout, rng, training)
    feat = ad.gelu(linear(feat, params["final.fc.w"], params["final.fc.b"]))
    return linear(feat, params["head.w"], params["head.b"])


def forward(batch: np.ndarray, cfg: ModelConfig, params, buffers, rng: Rng,
            training: bool) -> Tensor:
    """Run one architecture forward on a [B, n_mels, n_frames] batch."""
    dtype = next(iter(params.values())).dtype
    xb = np.ascontiguousarray(np.asarray(batch), dtype=dtype)
    if xb.ndim == 2:
        xb = xb[None]
    if xb.shape[1] != cfg.n_mels or xb.shape[2] != cfg.n_frames:
        raise ShapeError(
            f"batch geometry {xb.shape[1]}x{xb.shape[2]} does not match configured "
            f"{cfg.n_mels}x{cfg.n_frames}"
        )
    if cfg.arch == "cnn":
        return cnn_forward(Tensor(xb[:, None]), cfg, params, buffers, rng, training)
    if cfg.arch == "ssc":
        return ssc_forward(Tensor(xb[:, None]), cfg, params, buffers, rng, training)
    if cfg.arch == "vit":
        tokens = _grid_batch(xb, cfg.patch_h, cfg.patch_w)
    elif cfg.arch == "vvit":
        tokens = _vertical_batch(xb, cfg.vpatch_width, cfg.vpatch_stride)
    else:
        raise ValueError(f"unknown architecture {cfg.arch!r}")
    return vit_forward(Tensor(tokens), cfg, params, rng, training)


def count_parameters(params: dict[str, Tensor]) -> int:
    return sum(int(np.prod(p.shape)) for p in params.values())
