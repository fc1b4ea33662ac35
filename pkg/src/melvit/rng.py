"""Deterministic, splittable random streams.

Every random decision in the package (initialization, dropout, augmentation,
oversampling, hyper-parameter search) goes through an explicit :class:`Rng`
handle backed by the counter-based Philox generator, so a run is a pure
function of its seed. Independent substreams are derived with :meth:`Rng.derive`
rather than by sharing one global generator, which keeps results stable no
matter how work is reordered or parallelized.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _tag_to_int(tag) -> int:
    if isinstance(tag, str):
        return int.from_bytes(hashlib.blake2s(tag.encode()).digest()[:8], "little")
    return int(tag) & _MASK64


def _splitmix64(h: int, v: int) -> int:
    """One splitmix64 mixing round folding ``v`` into state ``h``."""
    h = (h + _GOLDEN + v) & _MASK64
    z = h
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based random stream with uniform, Bernoulli, and Gaussian draws.

    ``Rng(seed)`` always yields the same draw sequence; ``derive(*tags)``
    returns an independent child stream identified by the integer tags
    (e.g. ``rng.derive(epoch, sample_index)``).
    """

    algorithm = "philox"

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def derive(self, *tags) -> "Rng":
        """Independent child stream keyed by (this stream, *tags).

        Tags are integers or strings, e.g. ``rng.derive("epoch", 3)``.
        """
        h = self.stream
        for t in tags:
            h = _splitmix64(h, _tag_to_int(t))
        h = _splitmix64(h, len(tags))
        return Rng(self.seed, h)

    def clone(self) -> "Rng":
        """Copy at the current position; the copy replays upcoming draws."""
        out = Rng(self.seed, self.stream)
        out._gen.bit_generator.state = self._gen.bit_generator.state
        return out

    # -- draws ---------------------------------------------------------------

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None):
        return self._gen.normal(mean, std, size)

    def bernoulli(self, p: float, size=None):
        if size is None:
            return bool(self._gen.random() < p)
        return self._gen.random(size) < p

    def integers(self, low, high, size=None):
        """Integer draws in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
