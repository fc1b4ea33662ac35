"""Synthetic class-separable audio: band-limited noise around a class
frequency plus a class tone. Enables end-to-end runs without real corpora.

Class counts follow a linear interpolation from the majority count down to
count/imbalance, so the train split is deliberately skewed and exercises the
oversampler; same seed reproduces every byte.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import write_wav
from .rng import Rng

SUPPORTED_CLASS_COUNTS = (2, 5)


def class_tone_hz(class_index: int) -> float:
    return 500.0 + 700.0 * class_index


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 30  # total clips = n_per_class * n_classes
    n_classes: int = 2
    seed: int = 0
    imbalance: float = 3.0  # largest:smallest class-count ratio
    sample_rate: int = 16000
    duration_range: tuple[float, float] = (0.5, 0.8)
    devel_fraction: float = 0.15
    test_fraction: float = 0.15

    def class_counts(self) -> list[int]:
        """Distribute n_per_class * n_classes clips at the requested skew.

        Class weights fall linearly from 1 to 1/imbalance; counts keep the
        exact total via largest-remainder rounding, with a floor of 4 per
        class so every split stays populated.
        """
        if self.n_classes not in SUPPORTED_CLASS_COUNTS:
            raise ValueError(f"n_classes must be one of {SUPPORTED_CLASS_COUNTS}, got {self.n_classes}")
        if self.imbalance < 1.0:
            raise ValueError(f"imbalance must be >= 1, got {self.imbalance}")
        total = self.n_per_class * self.n_classes
        weights = np.array(
            [
                1.0 - (1.0 - 1.0 / self.imbalance) * (c / max(self.n_classes - 1, 1))
                for c in range(self.n_classes)
            ]
        )
        shares = weights / weights.sum() * total
        counts = np.floor(shares).astype(int)
        remainder = total - counts.sum()
        for c in np.argsort(-(shares - counts), kind="stable")[:remainder]:
            counts[c] += 1
        counts = np.maximum(counts, 4)
        counts[0] -= counts.sum() - total  # keep the exact total
        if counts[0] < 4:
            raise ValueError(f"n_per_class={self.n_per_class} too small for {self.n_classes} classes")
        return counts.tolist()


def _band_noise(rng: Rng, n: int, sample_rate: int, center_hz: float, half_width_hz: float):
    white = rng.normal(0.0, 1.0, size=n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spectrum[np.abs(freqs - center_hz) > half_width_hz] = 0.0
    x = np.fft.irfft(spectrum, n)
    peak = np.abs(x).max()
    return x / peak if peak > 0 else x


def synth_clip(rng: Rng, class_index: int, spec: SynthSpec) -> np.ndarray:
    """One mono clip for a class: tone + band noise at the class frequency."""
    duration = rng.uniform(*spec.duration_range)
    n = int(round(duration * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    f = class_tone_hz(class_index)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    tone_amp = rng.uniform(0.5, 1.0)
    noise_amp = rng.uniform(0.5, 1.0)
    x = (
        0.45 * tone_amp * np.sin(2.0 * np.pi * f * t + phase)
        + 0.35 * noise_amp * _band_noise(rng, n, spec.sample_rate, f, 150.0)
        + 0.02 * rng.normal(0.0, 1.0, size=n)
    )
    peak = np.abs(x).max()
    if peak > 0.9:
        x = x * (0.9 / peak)
    return x


def _split_counts(total: int, spec: SynthSpec) -> tuple[int, int, int]:
    n_devel = max(1, round(spec.devel_fraction * total))
    n_test = max(1, round(spec.test_fraction * total))
    n_train = total - n_devel - n_test
    if n_train < 1:
        raise ValueError(f"class of {total} samples too small for the requested splits")
    return n_train, n_devel, n_test


def generate(out_dir, spec: SynthSpec) -> Path:
    """Write WAVs plus manifest.csv under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    root = Rng(spec.seed).derive("synth")
    rows = []
    for c, total in enumerate(spec.class_counts()):
        n_train, n_devel, _ = _split_counts(total, spec)
        for i in range(total):
            clip = synth_clip(root.derive(c, i), c, spec)
            rel = f"wavs/c{c}_{i:03d}.wav"
            write_wav(out_dir / rel, clip, spec.sample_rate)
            if i < n_train:
                split = "train"
            elif i < n_train + n_devel:
                split = "devel"
            else:
                split = "test"
            rows.append((rel, f"c{c}", split))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("path", "label", "split"))
    writer.writerows(rows)
    manifest_path = out_dir / "manifest.csv"
    manifest_path.write_text(buf.getvalue())
    return manifest_path
