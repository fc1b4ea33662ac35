"""WAV decoding, log-mel spectrograms, and length normalization.

The DSP chain is deliberately small: 16-bit PCM in, Hann-windowed STFT,
Slaney-style area-normalized mel filterbank, floored log. Files whose sample
rate does not match the configuration are rejected rather than resampled;
convert offline first.
"""

from __future__ import annotations

import hashlib
import io
import math
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import checkpoint
from .rng import Rng


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop_length: int = 256
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float | None = None  # defaults to sample_rate / 2
    sample_length: float = 0.4  # seconds; the HP-searched crop length
    log_floor: float = 1e-10

    @property
    def resolved_f_max(self) -> float:
        return self.sample_rate / 2 if self.f_max is None else self.f_max

    @property
    def floor_value(self) -> float:
        """Value a silent cell takes after the floored log."""
        return math.log(self.log_floor)

    def target_frames(self) -> int:
        """Frame count of a ``sample_length``-seconds clip under this config."""
        n = round(self.sample_length * self.sample_rate)
        return max(1, 1 + (n - self.n_fft) // self.hop_length)

    def problems(self) -> list[str]:
        out = []
        if self.sample_rate <= 0:
            out.append(f"frontend.sample_rate must be positive, got {self.sample_rate}")
        if self.hop_length > self.n_fft:
            out.append(f"frontend.hop_length {self.hop_length} exceeds n_fft {self.n_fft}")
        if self.hop_length <= 0 or self.n_fft <= 0:
            out.append("frontend.n_fft and hop_length must be positive")
        if not self.f_min < self.resolved_f_max <= self.sample_rate / 2:
            out.append(
                f"frontend requires f_min < f_max <= sample_rate/2, got "
                f"[{self.f_min}, {self.resolved_f_max}] at rate {self.sample_rate}"
            )
        if self.sample_length <= 0:
            out.append(f"frontend.sample_length must be positive, got {self.sample_length}")
        if self.n_mels <= 0:
            out.append(f"frontend.n_mels must be positive, got {self.n_mels}")
        if self.log_floor <= 0:
            out.append(f"frontend.log_floor must be positive, got {self.log_floor}")
        return out


# Crop-length presets mirroring the tuned per-task sample lengths.
PRESETS = {
    "prs": FrontendConfig(sample_length=0.4),
    "ccs": FrontendConfig(sample_length=1.2),
}


@dataclass
class MelSpectrogram:
    """Log-power mel spectrogram: rows are mel bins, columns are frames."""

    values: np.ndarray  # [n_mels, n_frames] float32
    sample_rate: int
    hop_length: int
    source_id: str = ""
    floor: float = math.log(1e-10)  # value silent/padded cells take

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


# -- decoding -----------------------------------------------------------------


def decode_wav(source) -> tuple[np.ndarray, int]:
    """Decode 16-bit PCM RIFF/WAVE bytes, a path, or a file object.

    Returns (samples, sample_rate) with samples normalized by 32768 to
    [-1, 1). Stereo is averaged to mono. Compressed, float, or >16-bit
    encodings are rejected.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(bytes(source))
    elif isinstance(source, (str, Path)):
        source = io.BytesIO(Path(source).read_bytes())
    try:
        with wave.open(source, "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            payload = wf.readframes(n_frames)
    except (wave.Error, EOFError) as e:
        raise AudioError(f"cannot decode WAV stream: {e}") from e
    if width != 2:
        raise AudioError(f"unsupported encoding: only 16-bit PCM supported, got {8 * width}-bit")
    if n_channels not in (1, 2):
        raise AudioError(f"unsupported channel count {n_channels} (mono or stereo only)")
    if len(payload) < n_frames * n_channels * 2:
        raise AudioError(
            f"truncated WAV payload: header promises {n_frames} frames, "
            f"got {len(payload)} bytes"
        )
    x = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    return x, rate


def write_wav(path, samples: np.ndarray, sample_rate: int):
    """Write mono float samples in [-1, 1] as 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(pcm.tobytes())


# -- mel filterbank -------------------------------------------------------------

_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = 15.0
_LOG_STEP = math.log(6.4) / 27.0


def hz_to_mel(hz):
    hz = np.asarray(hz, dtype=np.float64)
    mel = hz * 3.0 / 200.0
    log_region = hz >= _MIN_LOG_HZ
    mel = np.where(
        log_region,
        _MIN_LOG_MEL + np.log(np.maximum(hz, _MIN_LOG_HZ) / _MIN_LOG_HZ) / _LOG_STEP,
        mel,
    )
    return mel


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    hz = mel * 200.0 / 3.0
    log_region = mel >= _MIN_LOG_MEL
    hz = np.where(log_region, _MIN_LOG_HZ * np.exp(_LOG_STEP * (mel - _MIN_LOG_MEL)), hz)
    return hz


def mel_band_edges(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """n_mels + 2 triangle edge frequencies in Hz; centers are edges[1:-1]."""
    mels = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Area-normalized triangular filters, [n_mels, n_fft//2 + 1]."""
    edges = mel_band_edges(cfg.n_mels, cfg.f_min, cfg.resolved_f_max)
    fft_hz = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lower = edges[:-2, None]
    center = edges[1:-1, None]
    upper = edges[2:, None]
    up = (fft_hz[None, :] - lower) / (center - lower)
    down = (upper - fft_hz[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb *= (2.0 / (upper - lower))  # area normalization
    return fb


def mel_spectrogram(samples: np.ndarray, cfg: FrontendConfig, source_id: str = "") -> MelSpectrogram:
    """STFT -> power -> mel filterbank -> floored log.

    Frames start at multiples of ``hop_length`` with no padding, so
    ``n_frames = 1 + (len(samples) - n_fft) // hop_length``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise AudioError(f"expected mono samples, got shape {x.shape}")
    if len(x) < cfg.n_fft:
        raise AudioError(
            f"signal of {len(x)} samples is shorter than one FFT window ({cfg.n_fft})"
        )
    frames = sliding_window_view(x, cfg.n_fft)[:: cfg.hop_length]
    # periodic Hann window
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(cfg.n_fft) / cfg.n_fft)
    spectrum = np.fft.rfft(frames * window, axis=1)
    power = spectrum.real**2 + spectrum.imag**2  # [n_frames, n_bins]
    mel = mel_filterbank(cfg) @ power.T  # [n_mels, n_frames]
    values = np.log(np.maximum(mel, cfg.log_floor)).astype(np.float32)
    return MelSpectrogram(
        values=values,
        sample_rate=cfg.sample_rate,
        hop_length=cfg.hop_length,
        source_id=source_id,
        floor=cfg.floor_value,
    )


def crop_or_pad(spec: MelSpectrogram, target_frames: int, rng: Rng, training: bool) -> MelSpectrogram:
    """Normalize frame count: crop (random in training, centered otherwise) or
    pad symmetrically with the spectrogram's floor value."""
    if target_frames < 1:
        raise ValueError(f"target_frames must be >= 1, got {target_frames}")
    n = spec.n_frames
    if n == target_frames:
        return spec
    if n > target_frames:
        if training:
            start = int(rng.integers(0, n - target_frames + 1))
        else:
            start = (n - target_frames) // 2
        values = spec.values[:, start : start + target_frames].copy()
    else:
        deficit = target_frames - n
        left = deficit // 2
        values = np.full(
            (spec.n_mels, target_frames), spec.floor, dtype=spec.values.dtype
        )
        values[:, left : left + n] = spec.values
    return replace(spec, values=values)


# -- cached loading ---------------------------------------------------------------


def cache_key(source_path: Path, cfg: FrontendConfig) -> str:
    """Content hash identifying (wav bytes, frontend settings)."""
    h = hashlib.blake2s()
    h.update(Path(source_path).read_bytes())
    h.update(repr(cfg).encode())
    return h.hexdigest()


def cache_file(cache_dir: Path, source: str) -> Path:
    stem = hashlib.blake2s(str(source).encode()).hexdigest()[:24]
    return Path(cache_dir) / f"{stem}.spec"


def save_cached(path: Path, spec: MelSpectrogram, content_hash: str):
    checkpoint.save_arrays(
        path,
        {"values": spec.values},
        meta={
            "sample_rate": spec.sample_rate,
            "hop_length": spec.hop_length,
            "source_id": spec.source_id,
            "floor": spec.floor,
            "content_hash": content_hash,
        },
    )


def load_cached(path: Path) -> tuple[MelSpectrogram, str]:
    arrays, meta = checkpoint.load_arrays(path)
    spec = MelSpectrogram(
        values=arrays["values"],
        sample_rate=int(meta["sample_rate"]),
        hop_length=int(meta["hop_length"]),
        source_id=meta.get("source_id", ""),
        floor=float(meta.get("floor", math.log(1e-10))),
    )
    return spec, meta.get("content_hash", "")


class SpectrogramStore:
    """Maps manifest sources to spectrograms, memoizing in RAM.

    Resolution order per sample: in-memory override, disk cache (if the
    content hash still matches), then decode + transform from the WAV.
    """

    def __init__(
        self,
        cfg: FrontendConfig,
        base_dir: Path | str = ".",
        cache_dir: Path | str | None = None,
        overrides: dict[str, MelSpectrogram] | None = None,
    ):
        self.cfg = cfg
        self.base_dir = Path(base_dir)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.overrides = overrides or {}
        self._memo: dict[str, MelSpectrogram] = {}

    def __call__(self, sample) -> MelSpectrogram:
        return self.get(sample.source)

    def get(self, source: str) -> MelSpectrogram:
        if source in self.overrides:
            return self.overrides[source]
        hit = self._memo.get(source)
        if hit is not None:
            return hit
        spec = self._load(source)
        self._memo[source] = spec
        return spec

    def _load(self, source: str) -> MelSpectrogram:
        wav_path = self.base_dir / source
        if self.cache_dir is not None:
            cpath = cache_file(self.cache_dir, source)
            if cpath.exists():
                spec, stored_hash = load_cached(cpath)
                if stored_hash == cache_key(wav_path, self.cfg):
                    return spec
        samples, rate = decode_wav(wav_path)
        if rate != self.cfg.sample_rate:
            raise AudioError(
                f"{source}: sample rate {rate} != configured {self.cfg.sample_rate}; "
                f"resampling is not performed, convert the file offline"
            )
        return mel_spectrogram(samples, self.cfg, source_id=source)
