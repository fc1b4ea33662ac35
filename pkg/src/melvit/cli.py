"""Command-line entry point: dataset preparation, synthetic data, training,
evaluation, hyper-parameter search, and augmentation preview.

Every run writes its fully resolved configuration next to its outputs, so
re-running from that file with the same seed reproduces results bit-exactly.
Relative paths inside a config resolve against the config file's directory.

Exit codes: 0 success, 1 user/config error, 2 internal/numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import config as configmod
from . import hpo
from . import synth as synthmod
from . import training
from .audio import (
    AudioError,
    FrontendConfig,
    SpectrogramStore,
    cache_file,
    cache_key,
    crop_or_pad,
    decode_wav,
    mel_spectrogram,
    save_cached,
)
from .augment import apply_all
from .autodiff import NumericsError, Tensor
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .config import ConfigError, RunConfig, SearchConfig
from .metrics import confusion, per_class_recall, roc_points, uar
from .models import ModelConfig
from .rng import Rng
from .sampling import Manifest, ManifestError, parse_manifest
from .training import TrainConfig, evaluate, predict

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


class UserError(ValueError):
    pass


# -- config plumbing ------------------------------------------------------------


def _load_config(args) -> tuple[RunConfig, Path]:
    """Load --config, apply flag overrides, and return (config, config dir)."""
    path = Path(args.config)
    if not path.exists():
        raise UserError(f"config file not found: {path}")
    cfg = configmod.load(path)
    train = cfg.train
    model = cfg.model
    paths = cfg.paths
    if getattr(args, "arch", None):
        model = dataclasses.replace(model, arch=args.arch)
    if getattr(args, "seed", None) is not None:
        train = dataclasses.replace(train, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        train = dataclasses.replace(train, epochs=args.epochs)
    if getattr(args, "no_oversample", False):
        train = dataclasses.replace(train, oversample=False)
    if getattr(args, "out", None):
        paths = dataclasses.replace(paths, out_dir=str(args.out))
    cfg = dataclasses.replace(cfg, train=train, model=model, paths=paths)
    cfg.validate()
    return cfg, path.parent


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def _read_manifest(cfg: RunConfig, base: Path) -> tuple[Manifest, Path]:
    mpath = _resolve(base, cfg.paths.manifest)
    if not mpath.exists():
        raise UserError(f"manifest not found: {mpath}")
    return parse_manifest(mpath.read_text()), mpath.parent


def _store(cfg: RunConfig, base: Path, manifest_dir: Path) -> SpectrogramStore:
    cache_dir = _resolve(base, cfg.paths.cache_dir) if cfg.paths.cache_dir else None
    return SpectrogramStore(cfg.frontend, base_dir=manifest_dir, cache_dir=cache_dir)


def _out_dir(cfg: RunConfig, base: Path) -> Path:
    out = _resolve(base, cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    configmod.save(cfg, out / "resolved-config.json")
    return out


# -- checkpoints -----------------------------------------------------------------


def save_model_checkpoint(path, params, buffers, model_cfg: ModelConfig, meta: dict):
    arrays = {f"p/{k}": (v.data if isinstance(v, Tensor) else v) for k, v in params.items()}
    arrays.update({f"b/{k}": v for k, v in buffers.items()})
    full_meta = dict(meta)
    full_meta["model"] = dataclasses.asdict(model_cfg)
    save_arrays(path, arrays, meta=full_meta)


def load_model_checkpoint(path):
    arrays, meta = load_arrays(path)
    model_cfg = ModelConfig(**meta["model"])
    params = {k[2:]: Tensor(v) for k, v in arrays.items() if k.startswith("p/")}
    buffers = {k[2:]: v for k, v in arrays.items() if k.startswith("b/")}
    return model_cfg, params, buffers, meta


# -- reports ------------------------------------------------------------------------


def write_reports(out: Path, labels, logits, task: str, class_names: list[str]) -> float:
    """metrics.txt, confusion.csv, and (binary) roc.csv; returns the UAR."""
    preds = predict(logits, task)
    cm = confusion(labels, preds, len(class_names))
    recalls = per_class_recall(cm)
    value = uar(cm)
    lines = [f"uar: {value:.6f}", "per-class recall:"]
    for name, r in zip(class_names, recalls):
        lines.append(f"  {name}: {r:.6f}")
    if task == "binary":
        scores = expit(logits[:, 0].astype(np.float64))
        points, auc = roc_points(scores, labels)
        lines.append(f"auc: {auc:.6f}")
        lines.append(f"sensitivity: {recalls[1]:.6f}")
        lines.append(f"specificity: {recalls[0]:.6f}")
        with open(out / "roc.csv", "w") as f:
            f.write("fpr,tpr\n")
            for fpr, tpr in points:
                f.write(f"{fpr!r},{tpr!r}\n")
    lines.append("confusion (rows true, cols predicted):")
    for name, row in zip(class_names, cm.counts):
        lines.append("  " + name + ": " + " ".join(str(int(c)) for c in row))
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    with open(out / "confusion.csv", "w") as f:
        f.write("true\\pred," + ",".join(class_names) + "\n")
        for name, row in zip(class_names, cm.counts):
            f.write(name + "," + ",".join(str(int(c)) for c in row) + "\n")
    return value


def write_history(path: Path, history: list[dict]):
    with open(path, "w") as f:
        for record in history:
            f.write(json.dumps(record) + "\n")


# -- subcommands -----------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = synthmod.SynthSpec(
        n_per_class=args.n_per_class,
        n_classes=args.classes,
        seed=args.seed,
        imbalance=args.imbalance,
        devel_fraction=args.devel_fraction,
    )
    manifest_path = synthmod.generate(args.out, spec)
    manifest = parse_manifest(manifest_path.read_text())
    task = "binary" if args.classes == 2 else "multiclass"
    cfg = configmod.tiny_run_config(
        arch="cnn", task=task, manifest="manifest.csv", out_dir="runs", seed=args.seed
    )
    configmod.save(cfg, Path(args.out) / "config.json")
    counts = {name: 0 for name in manifest.class_names}
    for s in manifest.samples:
        counts[manifest.class_names[s.label]] += 1
    train_counts = manifest.train_class_counts()
    print(f"wrote {len(manifest.samples)} clips to {args.out}")
    print(f"class totals: {counts}")
    print(f"train counts: {dict(zip(manifest.class_names, train_counts.tolist()))}")
    print(f"config: {Path(args.out) / 'config.json'}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    cfg, base = _load_config(args)
    manifest, manifest_dir = _read_manifest(cfg, base)
    if cfg.paths.cache_dir is None:
        raise UserError("prepare needs paths.cache_dir set in the config")
    cache_dir = _resolve(base, cfg.paths.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    written = skipped = 0
    failures = []
    for source in dict.fromkeys(s.source for s in manifest.samples):
        wav_path = manifest_dir / source
        try:
            digest = cache_key(wav_path, cfg.frontend)
            target = cache_file(cache_dir, source)
            if target.exists():
                from .audio import load_cached

                _, stored = load_cached(target)
                if stored == digest:
                    skipped += 1
                    continue
            samples, rate = decode_wav(wav_path)
            if rate != cfg.frontend.sample_rate:
                raise AudioError(
                    f"sample rate {rate} != configured {cfg.frontend.sample_rate}"
                )
            spec = mel_spectrogram(samples, cfg.frontend, source_id=source)
            save_cached(target, spec, digest)
            written += 1
        except (OSError, AudioError, CheckpointError) as e:
            failures.append(f"{source}: {e}")
    print(f"cached {written} spectrograms, {skipped} up to date")
    if failures:
        print(f"{len(failures)} file(s) failed:", file=sys.stderr)
        for line in failures:
            print(f"  {line}", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, base = _load_config(args)
    manifest, manifest_dir = _read_manifest(cfg, base)
    out = _out_dir(cfg, base)
    provider = _store(cfg, base, manifest_dir)
    result = training.train(manifest, cfg.model, cfg.train, cfg.augment, provider)
    write_history(out / "history.log", result.history)
    params = {k: Tensor(v) for k, v in result.params.items()}
    save_model_checkpoint(
        out / "best.ckpt",
        params,
        result.buffers,
        cfg.model,
        {
            "task": cfg.train.task,
            "class_names": manifest.class_names,
            "best_epoch": result.best_epoch,
            "best_devel_uar": result.best_uar,
        },
    )
    labels, logits = evaluate(
        provider, manifest.split("devel"), cfg.model, params, result.buffers,
        cfg.train.batch_size,
    )
    value = write_reports(out, labels, logits, cfg.train.task, manifest.class_names)
    print(f"best devel UAR {result.best_uar:.4f} at epoch {result.best_epoch}"
          if result.best_uar is not None else "no epochs trained")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, base = _load_config(args)
    manifest, manifest_dir = _read_manifest(cfg, base)
    out = _out_dir(cfg, base)
    ckpt = _resolve(base, args.checkpoint)
    if not ckpt.exists():
        raise UserError(f"checkpoint not found: {ckpt}")
    model_cfg, params, buffers, meta = load_model_checkpoint(ckpt)
    task = meta.get("task", cfg.train.task)
    samples = manifest.split(args.split)
    if not samples:
        raise UserError(f"split {args.split!r} is empty")
    provider = _store(cfg, base, manifest_dir)
    labels, logits = evaluate(provider, samples, model_cfg, params, buffers,
                              cfg.train.batch_size)
    value = write_reports(out, labels, logits, task, manifest.class_names)
    print(f"{args.split} UAR {value:.4f}")
    print(f"outputs in {out}")
    return EXIT_OK


# dimensions applied to each config section during search
_TRAIN_DIMS = ("lr", "scheduler", "scheduler_base", "weight_decay", "batch_size")
_AUGMENT_DIMS = ("shift_ratio", "noise_ratio", "mask_ratio", "loudness_ratio")
_MODEL_DIMS = (
    "dropout", "embedding_size", "head_dim", "mlp_dim", "lat_dim", "n_heads",
    "n_blocks", "patch_h", "patch_w", "vpatch_width", "vpatch_stride", "n_bands",
)
_FRONTEND_DIMS = ("sample_length",)


def apply_assignment(cfg: RunConfig, assignment: dict) -> RunConfig:
    """Produce the run config of one trial; re-derives the model geometry."""
    train = cfg.train
    model = cfg.model
    augment = cfg.augment
    frontend = cfg.frontend
    for name, value in assignment.items():
        if name in _TRAIN_DIMS:
            train = dataclasses.replace(train, **{name: value})
        elif name in _AUGMENT_DIMS:
            augment = dataclasses.replace(augment, **{name: value})
        elif name in _MODEL_DIMS:
            model = dataclasses.replace(model, **{name: value})
        elif name in _FRONTEND_DIMS:
            frontend = dataclasses.replace(frontend, **{name: value})
        else:
            raise UserError(f"search dimension {name!r} maps to no config field")
    model = dataclasses.replace(model, n_frames=frontend.target_frames())
    out = dataclasses.replace(
        cfg, train=train, model=model, augment=augment, frontend=frontend
    )
    out.validate()
    return out


_DIM_KINDS = {
    "uniform": (hpo.Uniform, ("low", "high")),
    "loguniform": (hpo.LogUniform, ("low", "high")),
    "integer": (hpo.Integer, ("low", "high")),
    "categorical": (hpo.Categorical, ("options",)),
}


def space_from_dict(doc: dict) -> hpo.SearchSpace:
    dims = {}
    for name, entry in doc.items():
        if not isinstance(entry, dict) or "type" not in entry:
            raise ConfigError([f"search.space.{name}: expected an object with a 'type' key"])
        kind = entry["type"]
        if kind not in _DIM_KINDS:
            raise ConfigError(
                [f"search.space.{name}: unknown type {kind!r} "
                 f"(expected one of {', '.join(_DIM_KINDS)})"]
            )
        cls, fields = _DIM_KINDS[kind]
        extra = set(entry) - {"type", *fields}
        if extra:
            raise ConfigError([f"search.space.{name}: unknown keys {sorted(extra)}"])
        try:
            kwargs = {f: entry[f] for f in fields}
        except KeyError as e:
            raise ConfigError([f"search.space.{name}: missing key {e.args[0]!r}"]) from e
        if kind == "categorical":
            kwargs["options"] = tuple(kwargs["options"])
        dims[name] = cls(**kwargs)
    return hpo.SearchSpace(dims)


def default_space(arch: str) -> hpo.SearchSpace:
    """Documented default bounds; implementer choices, searched per run."""
    dims = {
        "lr": hpo.LogUniform(1e-4, 1e-2),
        "scheduler": hpo.Categorical(("none", "exponential")),
        "scheduler_base": hpo.Uniform(0.88, 0.999),
        "shift_ratio": hpo.Uniform(0.0, 0.5),
        "noise_ratio": hpo.Uniform(0.0, 0.5),
        "mask_ratio": hpo.Uniform(0.0, 0.5),
        "loudness_ratio": hpo.Uniform(0.0, 1.0),
        "dropout": hpo.Uniform(0.0, 0.5),
    }
    if arch in ("vit", "vvit"):
        dims.update(
            {
                "embedding_size": hpo.Integer(8, 64),
                "head_dim": hpo.Integer(4, 32),
                "mlp_dim": hpo.Integer(16, 128),
                "lat_dim": hpo.Integer(16, 128),
            }
        )
    if arch == "vvit":
        dims["vpatch_width"] = hpo.Integer(5, 9)
    return hpo.SearchSpace(dims)


def cmd_search(args) -> int:
    cfg, base = _load_config(args)
    manifest, manifest_dir = _read_manifest(cfg, base)
    out = _out_dir(cfg, base)
    provider = _store(cfg, base, manifest_dir)
    if cfg.search.space is not None:
        space = space_from_dict(cfg.search.space)
    else:
        space = default_space(cfg.model.arch)
    known = _TRAIN_DIMS + _AUGMENT_DIMS + _MODEL_DIMS + _FRONTEND_DIMS
    unmapped = [name for name in space.dims if name not in known]
    if unmapped:
        raise UserError(f"search dimensions map to no config field: {', '.join(unmapped)}")
    budget = args.budget if args.budget is not None else cfg.search.budget

    def objective(assignment: dict) -> float:
        trial_cfg = apply_assignment(cfg, assignment)
        result = training.train(
            manifest, trial_cfg.model, trial_cfg.train, trial_cfg.augment, provider
        )
        return result.best_uar if result.best_uar is not None else float("nan")

    def on_trial(trial: hpo.Trial):
        shown = trial.objective if trial.objective is not None else "failed"
        print(f"trial {trial.id}: {shown}")

    trials = hpo.run_search(
        space,
        objective,
        budget=budget,
        rng=Rng(cfg.train.seed).derive("search"),
        history_path=out / "trials.log",
        on_trial=on_trial,
    )
    best = next((t for t in trials if t.status == "complete"), None)
    if best is None:
        raise UserError("no trial completed; see trials.log")
    configmod.save(apply_assignment(cfg, best.assignment), out / "best-config.json")
    print(f"best trial {best.id}: devel UAR {best.objective:.4f}")
    print(f"outputs in {out}")
    return EXIT_OK


def write_pgm(path, values: np.ndarray, lo: float, hi: float):
    """8-bit binary PGM of a [n_mels, n_frames] matrix on a fixed value scale."""
    if hi > lo:
        scaled = np.clip((values - lo) / (hi - lo) * 255.0, 0, 255)
    else:
        scaled = np.zeros_like(values)
    img = scaled.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def _write_csv_matrix(path, values: np.ndarray):
    with open(path, "w") as f:
        for row in values:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_preview(args) -> int:
    cfg, base = _load_config(args)
    manifest, manifest_dir = _read_manifest(cfg, base)
    out = _out_dir(cfg, base)
    provider = _store(cfg, base, manifest_dir)
    samples = manifest.split("train")[: args.count]
    if not samples:
        raise UserError("no train samples to preview")
    rng = Rng(cfg.train.seed).derive("preview")
    target = cfg.model.n_frames
    for i, sample in enumerate(samples):
        srng = rng.derive(i)
        before = crop_or_pad(provider(sample), target, srng, training=True)
        after = apply_all(before, cfg.augment, srng)
        lo = float(min(before.values.min(), after.values.min()))
        hi = float(max(before.values.max(), after.values.max()))
        write_pgm(out / f"sample{i:02d}_before.pgm", before.values, lo, hi)
        write_pgm(out / f"sample{i:02d}_after.pgm", after.values, lo, hi)
        _write_csv_matrix(out / f"sample{i:02d}_before.csv", before.values)
        _write_csv_matrix(out / f"sample{i:02d}_after.csv", after.values)
    print(f"wrote {len(samples)} before/after pairs to {out}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="melvit",
        description="Mel-spectrogram audio classification workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, arch=True):
        p.add_argument("--config", required=True, help="run config JSON")
        if arch:
            p.add_argument("--arch", choices=("cnn", "ssc", "vit", "vvit"))
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--out", help="output directory (overrides paths.out_dir)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=64)
    p.add_argument("--classes", type=int, choices=(2, 5), default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--imbalance", type=float, default=3.0)
    p.add_argument("--devel-fraction", type=float, default=0.15)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="cache spectrograms for a manifest")
    add_config_flags(p, arch=False)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one architecture")
    add_config_flags(p)
    p.add_argument("--no-oversample", action="store_true",
                   help="diagnostic: train on the raw imbalanced split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "devel", "test"), default="devel")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="TPE hyper-parameter search")
    add_config_flags(p)
    p.add_argument("--budget", type=int, help="total trials (default from config)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("preview", help="dump before/after augmentation images")
    add_config_flags(p)
    p.add_argument("--count", type=int, default=4)
    p.set_defaults(func=cmd_preview)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, AudioError, UserError, CheckpointError,
            hpo.SearchSpaceError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except NumericsError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
