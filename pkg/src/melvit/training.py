"""Training loop: AdamW with decoupled weight decay, task losses, the
exponential learning-rate family, and best-devel-UAR model selection.

Train epochs are rebalanced draws (see :mod:`melvit.sampling`) with
augmentation applied per sample; devel evaluation always uses centered crops
and no augmentation. All randomness is derived from the config seed, so a run
is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import augment as augmod
from . import autodiff as ad
from .audio import MelSpectrogram, crop_or_pad
from .autodiff import NumericsError, Tensor
from .metrics import ConfusionMatrix, confusion, uar
from .models import ModelConfig, forward, init_params
from .rng import Rng
from .sampling import LabeledSample, Manifest, draw_epoch

TASKS = ("multiclass", "binary")
SCHEDULERS = ("none", "exponential")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    scheduler: str = "none"
    scheduler_base: float = 0.95  # the n in lr * n**epoch, searched in U(0.88, 1)
    seed: int = 0  # protocol fixes seeds 0..19
    task: str = "multiclass"
    oversample: bool = True  # diagnostic: off trains on the raw imbalanced split

    def problems(self) -> list[str]:
        out = []
        if self.epochs < 0:
            out.append(f"train.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            out.append(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            out.append(f"train.lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            out.append(f"train.weight_decay must be >= 0, got {self.weight_decay}")
        if self.scheduler not in SCHEDULERS:
            out.append(f"train.scheduler must be one of {', '.join(SCHEDULERS)}, got {self.scheduler!r}")
        if self.scheduler == "exponential" and not 0.88 <= self.scheduler_base < 1.0:
            out.append(
                f"train.scheduler_base must be in [0.88, 1), got {self.scheduler_base}"
            )
        if self.task not in TASKS:
            out.append(f"train.task must be one of {', '.join(TASKS)}, got {self.task!r}")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))


# -- optimizer ------------------------------------------------------------------


class AdamWState:
    """First/second moment buffers plus step counter for a parameter dict."""

    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999), eps=1e-8,
                 weight_decay: float = 0.0):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay


def adamw_step(params: dict[str, Tensor], state: AdamWState, lr: float):
    """One AdamW update; weight decay is decoupled from the adaptive step."""
    b1, b2 = state.betas
    state.t += 1
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient in parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# -- losses and predictions ---------------------------------------------------------


def loss(logits: Tensor, labels, task: str) -> Tensor:
    """Batch-averaged loss: softmax cross-entropy (multiclass) or sigmoid BCE
    on the single logit (binary)."""
    labels = np.asarray(labels)
    if task == "multiclass":
        return ad.cross_entropy_logits(logits, labels)
    if task == "binary":
        if logits.shape[-1] != 1:
            raise ValueError(f"binary task expects a single logit, got {logits.shape}")
        bad = set(np.unique(labels)) - {0, 1}
        if bad:
            raise ValueError(f"binary labels must be 0/1, got {sorted(bad)}")
        return ad.bce_with_logits(logits, labels.astype(logits.dtype))
    raise ValueError(f"unknown task {task!r}")


def predict(logits: np.ndarray, task: str) -> np.ndarray:
    """Hard labels from logits; binary thresholds the sigmoid at 0.5."""
    if task == "binary":
        return (logits[:, 0] > 0.0).astype(np.int64)
    return logits.argmax(axis=1).astype(np.int64)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate at an epoch: constant, or lr * n**epoch with n fixed per run."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if cfg.scheduler == "exponential":
        return cfg.lr * cfg.scheduler_base**epoch
    return cfg.lr


# -- batching -----------------------------------------------------------------------


def _stack(specs: list[MelSpectrogram]) -> np.ndarray:
    return np.stack([s.values for s in specs]).astype(np.float32)


def eval_batch(provider, samples: list[LabeledSample], target_frames: int) -> np.ndarray:
    """Deterministic evaluation inputs: centered crop, no augmentation."""
    rng = Rng(0)  # never consumed on the eval path
    specs = [crop_or_pad(provider(s), target_frames, rng, training=False) for s in samples]
    return _stack(specs)


def evaluate(provider, samples: list[LabeledSample], cfg: ModelConfig, params, buffers,
             batch_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Forward a split in eval mode; returns (labels, logits)."""
    rng = Rng(0)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    outs = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x = eval_batch(provider, chunk, cfg.n_frames)
        outs.append(forward(x, cfg, params, buffers, rng, training=False).data)
    logits = np.concatenate(outs, axis=0) if outs else np.zeros((0, cfg.n_logits))
    return labels, logits


def devel_uar(provider, samples, cfg, params, buffers, task: str,
              batch_size: int = 32) -> tuple[float, ConfusionMatrix]:
    labels, logits = evaluate(provider, samples, cfg, params, buffers, batch_size)
    n_classes = 2 if task == "binary" else cfg.n_logits
    cm = confusion(labels, predict(logits, task), n_classes)
    return uar(cm), cm


# -- training loop ---------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]  # best-devel snapshot
    buffers: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    best_uar: float | None = None
    best_epoch: int | None = None


def _snapshot(params: dict[str, Tensor], buffers: dict[str, np.ndarray]):
    return (
        {k: p.data.copy() for k, p in params.items()},
        {k: b.copy() for k, b in buffers.items()},
    )


def train(manifest: Manifest, model_cfg: ModelConfig, train_cfg: TrainConfig,
          augment_params: augmod.AugmentParams, provider) -> TrainResult:
    """Train one model; retains the parameters of the best devel-UAR epoch.

    ``provider`` maps a LabeledSample to its full-length MelSpectrogram.
    Augmentation touches training draws only.
    """
    train_cfg.validate()
    model_cfg.validate()
    augment_params.validate()
    devel = manifest.split("devel")
    if not devel:
        raise ValueError("empty devel split: model selection needs devel samples")
    if not manifest.split("train"):
        raise ValueError("empty train split")

    root = Rng(train_cfg.seed)
    params, buffers = init_params(model_cfg, root.derive("model"))
    state = AdamWState(params, weight_decay=train_cfg.weight_decay)
    target = model_cfg.n_frames

    result = TrainResult(*_snapshot(params, buffers))
    for epoch in range(train_cfg.epochs):
        if train_cfg.oversample:
            epoch_samples = draw_epoch(manifest, root.derive("oversample", epoch))
        else:
            base = manifest.split("train")
            order = root.derive("shuffle", epoch).permutation(len(base))
            epoch_samples = [base[i] for i in order]
        lr = lr_at(epoch, train_cfg)
        total_loss = 0.0
        for step, start in enumerate(range(0, len(epoch_samples), train_cfg.batch_size)):
            chunk = epoch_samples[start : start + train_cfg.batch_size]
            specs = []
            for offset, sample in enumerate(chunk):
                srng = root.derive("augment", epoch, start + offset)
                spec = crop_or_pad(provider(sample), target, srng, training=True)
                specs.append(augmod.apply_all(spec, augment_params, srng))
            x = _stack(specs)
            labels = np.array([s.label for s in chunk], dtype=np.int64)
            logits = forward(
                x, model_cfg, params, buffers, root.derive("dropout", epoch, step), training=True
            )
            batch_loss = loss(logits, labels, train_cfg.task)
            if not np.isfinite(batch_loss.data):
                raise NumericsError(
                    f"non-finite training loss at epoch {epoch}, step {step}"
                )
            for p in params.values():
                p.grad = None
            ad.backward(batch_loss)
            adamw_step(params, state, lr)
            total_loss += batch_loss.item() * len(chunk)
        epoch_uar, _ = devel_uar(
            provider, devel, model_cfg, params, buffers, train_cfg.task, train_cfg.batch_size
        )
        result.history.append(
            {
                "epoch": epoch,
                "train_loss": total_loss / len(epoch_samples),
                "devel_uar": epoch_uar,
                "lr": lr,
            }
        )
        if result.best_uar is None or epoch_uar > result.best_uar:
            result.best_uar = epoch_uar
            result.best_epoch = epoch
            result.params, result.buffers = _snapshot(params, buffers)
    return result
