"""Mel-spectrogram augmentations: temporal shift, relative Gaussian noise,
time/frequency masking, and loudness scaling.

All four are ratio-parameterized; a ratio of 0 disables the augmentation and
returns the input untouched (no draws consumed). Draw order is documented per
function so tests can replay a cloned stream and reconstruct the applied
transform. Every draw happens per call ("per sample draw").
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio import MelSpectrogram
from .rng import Rng


@dataclass(frozen=True)
class AugmentParams:
    shift_ratio: float = 0.0
    noise_ratio: float = 0.0
    mask_ratio: float = 0.0
    loudness_ratio: float = 0.0

    def problems(self) -> list[str]:
        out = []
        for name in ("shift_ratio", "noise_ratio", "mask_ratio", "loudness_ratio"):
            v = getattr(self, name)
            if not np.isfinite(v):
                out.append(f"augment.{name} must be finite, got {v}")
        if not 0.0 <= self.shift_ratio <= 1.0:
            out.append(f"augment.shift_ratio must be in [0, 1], got {self.shift_ratio}")
        if self.noise_ratio < 0.0:
            out.append(f"augment.noise_ratio must be >= 0, got {self.noise_ratio}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            out.append(f"augment.mask_ratio must be in [0, 1], got {self.mask_ratio}")
        if self.loudness_ratio < 0.0:
            out.append(f"augment.loudness_ratio must be >= 0, got {self.loudness_ratio}")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))


def shift(spec: MelSpectrogram, shift_ratio: float, rng: Rng) -> MelSpectrogram:
    """Shift columns left or right, zero-filling the vacated edge.

    Draws, in order: direction ~ Bernoulli(0.5) (True = right), then
    fraction ~ U(0, shift_ratio); the column offset is round(fraction * n_frames).
    """
    if not 0.0 <= shift_ratio <= 1.0:
        raise ValueError(f"shift_ratio must be in [0, 1], got {shift_ratio}")
    if shift_ratio == 0.0:
        return spec
    right = rng.bernoulli(0.5)
    fraction = rng.uniform(0.0, shift_ratio)
    k = int(round(fraction * spec.n_frames))
    if k == 0:
        return spec
    v = spec.values
    out = np.zeros_like(v)
    if k < v.shape[1]:
        if right:
            out[:, k:] = v[:, :-k]
        else:
            out[:, :-k] = v[:, k:]
    return replace(spec, values=out)


def add_noise(spec: MelSpectrogram, noise_ratio: float, rng: Rng) -> MelSpectrogram:
    """Relative Gaussian noise: S + S * n with n ~ N(0, noise_ratio) per cell.

    Multiplicative by construction, so zero-valued cells stay zero.
    """
    if noise_ratio < 0:
        raise ValueError(f"noise_ratio must be >= 0, got {noise_ratio}")
    if noise_ratio == 0.0:
        return spec
    noise = rng.normal(0.0, noise_ratio, size=spec.values.shape)
    out = (spec.values * (1.0 + noise)).astype(spec.values.dtype)
    return replace(spec, values=out)


def mask_indices(start: float, width: float, axis_len: int) -> np.ndarray:
    """Boolean mask of cells with index in [start, min(start + width, axis_len))."""
    idx = np.arange(axis_len)
    return (idx >= start) & (idx < min(start + width, axis_len))


def spec_augment(spec: MelSpectrogram, mask_ratio: float, rng: Rng) -> MelSpectrogram:
    """Zero one random temporal window and one random mel window.

    Draws, in order: temporal start ~ U(0, n_frames), temporal width
    ~ U(0, mask_ratio * n_frames), mel start ~ U(0, n_mels), mel width
    ~ U(0, mask_ratio * n_mels). Windows clip at the axis end.
    """
    if not 0.0 <= mask_ratio <= 1.0:
        raise ValueError(f"mask_ratio must be in [0, 1], got {mask_ratio}")
    if mask_ratio == 0.0:
        return spec
    n_mels, n_frames = spec.values.shape
    t_start = rng.uniform(0.0, n_frames)
    t_width = rng.uniform(0.0, mask_ratio * n_frames)
    m_start = rng.uniform(0.0, n_mels)
    m_width = rng.uniform(0.0, mask_ratio * n_mels)
    out = spec.values.copy()
    out[:, mask_indices(t_start, t_width, n_frames)] = 0.0
    out[mask_indices(m_start, m_width, n_mels), :] = 0.0
    return replace(spec, values=out)


def loudness(spec: MelSpectrogram, loudness_ratio: float, rng: Rng) -> MelSpectrogram:
    """Scale by (1 + l) with l ~ U(0, loudness_ratio): adds l of the signal back."""
    if loudness_ratio < 0:
        raise ValueError(f"loudness_ratio must be >= 0, got {loudness_ratio}")
    if loudness_ratio == 0.0:
        return spec
    l = rng.uniform(0.0, loudness_ratio)
    out = (spec.values * (1.0 + l)).astype(spec.values.dtype)
    return replace(spec, values=out)


def apply_all(spec: MelSpectrogram, params: AugmentParams, rng: Rng) -> MelSpectrogram:
    """Apply shift, noise, masking, loudness in that fixed order."""
    params.validate()
    spec = shift(spec, params.shift_ratio, rng)
    spec = add_noise(spec, params.noise_ratio, rng)
    spec = spec_augment(spec, params.mask_ratio, rng)
    spec = loudness(spec, params.loudness_ratio, rng)
    return spec
