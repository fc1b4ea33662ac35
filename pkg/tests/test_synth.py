"""Synthetic dataset generator: determinism, counts, and separability."""

import numpy as np
import pytest

from melvit.audio import FrontendConfig, SpectrogramStore, crop_or_pad, decode_wav
from melvit.config import synth_frontend
from melvit.metrics import confusion, uar
from melvit.rng import Rng
from melvit.sampling import parse_manifest
from melvit.synth import SynthSpec, generate


class TestCounts:
    def test_total_is_n_per_class_times_classes(self):
        assert sum(SynthSpec(n_per_class=20, n_classes=2).class_counts()) == 40
        assert sum(SynthSpec(n_per_class=20, n_classes=5).class_counts()) == 100

    def test_imbalance_ratio(self):
        counts = SynthSpec(n_per_class=20, n_classes=2, imbalance=3.0).class_counts()
        assert counts == [30, 10]

    def test_balanced_when_ratio_one(self):
        assert SynthSpec(n_per_class=20, n_classes=2, imbalance=1.0).class_counts() == [20, 20]

    def test_five_class_monotone(self):
        counts = SynthSpec(n_per_class=20, n_classes=5, imbalance=3.0).class_counts()
        assert counts == sorted(counts, reverse=True)
        assert sum(counts) == 100

    def test_unsupported_class_count_rejected(self):
        with pytest.raises(ValueError, match="n_classes"):
            SynthSpec(n_classes=3).class_counts()


class TestGenerate:
    def test_manifest_rows_match_wav_count(self, tmp_path):
        manifest_path = generate(tmp_path, SynthSpec(n_per_class=20, n_classes=2))
        manifest = parse_manifest(manifest_path.read_text())
        assert len(manifest.samples) == 40
        assert len(list((tmp_path / "wavs").glob("*.wav"))) == 40

    def test_same_seed_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        spec = SynthSpec(n_per_class=12, n_classes=2, seed=7)
        generate(a, spec)
        generate(b, spec)
        assert (a / "manifest.csv").read_bytes() == (b / "manifest.csv").read_bytes()
        for wav in sorted((a / "wavs").glob("*.wav")):
            assert wav.read_bytes() == (b / "wavs" / wav.name).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        generate(tmp_path / "a", SynthSpec(n_per_class=8, seed=0))
        generate(tmp_path / "b", SynthSpec(n_per_class=8, seed=1))
        a = sorted((tmp_path / "a" / "wavs").glob("*.wav"))[0]
        b = sorted((tmp_path / "b" / "wavs").glob("*.wav"))[0]
        assert a.read_bytes() != b.read_bytes()

    def test_all_splits_populated_per_class(self, tmp_path):
        manifest = parse_manifest(
            generate(tmp_path, SynthSpec(n_per_class=20, n_classes=5)).read_text()
        )
        for c in range(5):
            for split in ("train", "devel", "test"):
                assert any(
                    s.label == c and s.split == split for s in manifest.samples
                ), (c, split)

    def test_decodable_at_declared_rate(self, tmp_path):
        generate(tmp_path, SynthSpec(n_per_class=6, n_classes=2))
        wav = sorted((tmp_path / "wavs").glob("*.wav"))[0]
        samples, rate = decode_wav(wav)
        assert rate == 16000
        assert np.abs(samples).max() <= 0.95
        assert len(samples) >= 8000  # at least 0.5 s


class TestSeparability:
    def test_nearest_neighbor_oracle_devel_uar(self, tmp_path):
        """1-NN on mean mel vectors must reach devel UAR >= 0.9: guarantees
        the end-to-end acceptance task is winnable."""
        manifest = parse_manifest(
            generate(tmp_path, SynthSpec(n_per_class=32, n_classes=2, imbalance=3.0)).read_text()
        )
        cfg = synth_frontend()
        store = SpectrogramStore(cfg, base_dir=tmp_path)

        def mean_vector(sample):
            spec = crop_or_pad(store(sample), cfg.target_frames(), Rng(0), training=False)
            return spec.values.mean(axis=1)

        train = manifest.split("train")
        devel = manifest.split("devel")
        train_vecs = np.stack([mean_vector(s) for s in train])
        train_labels = np.array([s.label for s in train])
        preds = []
        for s in devel:
            v = mean_vector(s)
            preds.append(train_labels[np.linalg.norm(train_vecs - v, axis=1).argmin()])
        cm = confusion([s.label for s in devel], preds, 2)
        assert uar(cm) >= 0.9
