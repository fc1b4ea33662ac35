"""Dataset manifests and the class-rebalancing oversampler.

A manifest is a CSV with header ``path,label,split``; labels are class-name
strings and splits one of train/devel/test. Training epochs are drawn with
replacement, class-uniform first and sample-uniform within the class, so each
class contributes equally in expectation regardless of its raw count.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

SPLITS = ("train", "devel", "test")
HEADER = ("path", "label", "split")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledSample:
    source: str  # file path or in-memory spectrogram id
    label: int
    split: str


@dataclass
class Manifest:
    samples: list[LabeledSample]
    class_names: list[str]
    _by_split: dict = field(default_factory=dict, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> list[LabeledSample]:
        if name not in SPLITS:
            raise ManifestError(f"unknown split {name!r}")
        if name not in self._by_split:
            self._by_split[name] = [s for s in self.samples if s.split == name]
        return self._by_split[name]

    def train_class_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_classes, dtype=np.int64)
        for s in self.split("train"):
            counts[s.label] += 1
        return counts


def parse_manifest(text: str) -> Manifest:
    """Parse manifest CSV text (UTF-8, LF or CRLF)."""
    text = text.lstrip("﻿")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [(i, [c.strip() for c in r]) for i, r in enumerate(rows, start=1) if any(c.strip() for c in r)]
    if not rows:
        raise ManifestError("empty manifest: expected a 'path,label,split' header")
    first_line, header = rows[0]
    if tuple(header) != HEADER:
        raise ManifestError(
            f"line {first_line}: expected header 'path,label,split', got {','.join(header)!r}"
        )
    body = rows[1:]
    for lineno, row in body:
        if tuple(row) == HEADER:
            raise ManifestError(f"line {lineno}: duplicate header")
        if len(row) != 3:
            raise ManifestError(f"line {lineno}: expected 3 columns, got {len(row)}")
        if row[2] not in SPLITS:
            raise ManifestError(
                f"line {lineno}: unknown split {row[2]!r} (expected one of {', '.join(SPLITS)})"
            )
    class_names = sorted({row[1] for _, row in body})
    index = {name: i for i, name in enumerate(class_names)}
    samples = [
        LabeledSample(source=row[0], label=index[row[1]], split=row[2]) for _, row in body
    ]
    return Manifest(samples=samples, class_names=class_names)


def epoch_size(manifest: Manifest) -> int:
    """Oversampled epoch length: max per-class train count times n_classes."""
    counts = manifest.train_class_counts()
    if len(counts) == 0:
        raise ManifestError("manifest has no classes")
    empty = [manifest.class_names[i] for i in np.nonzero(counts == 0)[0]]
    if empty:
        raise ManifestError(f"classes with zero train samples: {', '.join(empty)}")
    return int(counts.max()) * manifest.n_classes


def draw_epoch(manifest: Manifest, rng: Rng) -> list[LabeledSample]:
    """Draw one rebalanced epoch with replacement.

    Each draw picks a class uniformly, then a train sample uniformly within
    that class, so the class marginal is exactly uniform by construction.
    """
    size = epoch_size(manifest)
    per_class: list[list[LabeledSample]] = [[] for _ in range(manifest.n_classes)]
    for s in manifest.split("train"):
        per_class[s.label].append(s)
    counts = np.array([len(c) for c in per_class], dtype=np.int64)
    classes = rng.integers(0, manifest.n_classes, size=size)
    indices = rng.integers(0, counts[classes])
    return [per_class[c][i] for c, i in zip(classes, indices)]
