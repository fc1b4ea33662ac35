"""Run configuration: one JSON document aggregating frontend, model, training,
augmentation, and path settings.

The document carries a versioned ``schema_version`` field; unknown keys are
errors (they are almost always typos in hyper-parameter names), and validation
reports every violated invariant at once, not only the first.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .audio import FrontendConfig
from .augment import AugmentParams
from .models import ModelConfig
from .training import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass(frozen=True)
class PathsConfig:
    manifest: str = "manifest.csv"
    cache_dir: str | None = None
    out_dir: str = "out"

    def problems(self) -> list[str]:
        out = []
        if not self.manifest:
            out.append("paths.manifest must not be empty")
        if not self.out_dir:
            out.append("paths.out_dir must not be empty")
        return out


@dataclass(frozen=True)
class SearchConfig:
    budget: int = 400  # paper-fidelity preset; desk runs pass a smaller budget
    space: dict | None = None  # name -> dimension document; None = arch preset

    def problems(self) -> list[str]:
        out = []
        if self.budget < 1:
            out.append(f"search.budget must be >= 1, got {self.budget}")
        if self.space is not None and not isinstance(self.space, dict):
            out.append("search.space must be an object mapping names to dimensions")
        return out


@dataclass(frozen=True)
class RunConfig:
    frontend: FrontendConfig
    model: ModelConfig
    train: TrainConfig
    augment: AugmentParams
    paths: PathsConfig
    search: SearchConfig = SearchConfig()
    schema_version: int = SCHEMA_VERSION

    def problems(self) -> list[str]:
        out = []
        out += self.frontend.problems()
        out += self.model.problems()
        out += self.train.problems()
        out += self.augment.problems()
        out += self.paths.problems()
        out += self.search.problems()
        if self.model.n_mels != self.frontend.n_mels:
            out.append(
                f"model.n_mels {self.model.n_mels} != frontend.n_mels {self.frontend.n_mels}"
            )
        if self.model.n_frames != self.frontend.target_frames():
            out.append(
                f"model.n_frames {self.model.n_frames} != frames of frontend.sample_length "
                f"({self.frontend.target_frames()})"
            )
        if self.train.task == "binary" and self.model.n_logits != 1:
            out.append(f"binary task needs model.n_logits=1, got {self.model.n_logits}")
        if self.train.task == "multiclass" and self.model.n_logits < 2:
            out.append(f"multiclass task needs model.n_logits >= 2, got {self.model.n_logits}")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)


_SECTIONS = {
    "frontend": FrontendConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "augment": AugmentParams,
    "paths": PathsConfig,
    "search": SearchConfig,
}

# fields derivable from the frontend section when omitted
_DERIVED_MODEL_FIELDS = ("n_mels", "n_frames")


def _build_section(cls, data: dict, section: str, problems: list[str]):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            problems.append(f"unknown key {section}.{key}")
            continue
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        problems.append(f"section {section}: {e}")
        return None


def from_dict(doc: dict) -> RunConfig:
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["config document must be a JSON object"])
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        problems.append(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    for key in doc:
        if key != "schema_version" and key not in _SECTIONS:
            problems.append(f"unknown section {key!r}")
    sections = {}
    model_data = {}
    for name, cls in _SECTIONS.items():
        raw = doc.get(name, {})
        if not isinstance(raw, dict):
            problems.append(f"section {name!r} must be a JSON object")
            raw = {}
        data = dict(raw)
        if name == "model":
            model_data = data
            continue
        sections[name] = _build_section(cls, data, name, problems)
    frontend = sections.get("frontend")
    if frontend is not None:
        model_data.setdefault("n_mels", frontend.n_mels)
        model_data.setdefault("n_frames", frontend.target_frames())
    sections["model"] = _build_section(ModelConfig, model_data, "model", problems)
    if problems or any(v is None for v in sections.values()):
        raise ConfigError(problems or ["could not build configuration"])
    cfg = RunConfig(**sections)
    cfg.validate()
    return cfg


def to_dict(cfg: RunConfig) -> dict:
    """Fully resolved document: every default expanded."""
    doc = {"schema_version": cfg.schema_version}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
        doc[name] = section
    return doc


def save(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2) + "\n")


def load(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}: not valid JSON: {e}"]) from e
    return from_dict(doc)


# -- presets -----------------------------------------------------------------------


def synth_frontend() -> FrontendConfig:
    """Small geometry matched to the synthetic datasets: 32 mels, 32 frames."""
    return FrontendConfig(
        sample_rate=16000,
        n_fft=512,
        hop_length=160,
        n_mels=32,
        sample_length=0.342,
        log_floor=1e-10,
    )


def tiny_model(arch: str, n_logits: int, n_mels: int, n_frames: int) -> ModelConfig:
    """Documented tiny defaults: embedding 16, 2 blocks, 2 heads."""
    return ModelConfig(
        arch=arch,
        n_logits=n_logits,
        n_mels=n_mels,
        n_frames=n_frames,
        dropout=0.2,
        embedding_size=16,
        lat_dim=32,
        mlp_dim=32,
        n_heads=2,
        n_blocks=2,
        patch_h=8,
        patch_w=8,
        vpatch_width=7,
        vpatch_stride=1,
    )


def tiny_run_config(arch: str, task: str = "binary", manifest: str = "manifest.csv",
                    out_dir: str = "out", seed: int = 0, epochs: int = 30,
                    oversample: bool = True) -> RunConfig:
    """End-to-end defaults for the synthetic 2-class task."""
    frontend = synth_frontend()
    n_logits = 1 if task == "binary" else 5
    model = tiny_model(arch, n_logits, frontend.n_mels, frontend.target_frames())
    train = TrainConfig(
        epochs=epochs,
        batch_size=16,
        lr=3e-3,
        weight_decay=0.0,
        scheduler="none",
        seed=seed,
        task=task,
        oversample=oversample,
    )
    augment = AugmentParams(shift_ratio=0.1, noise_ratio=0.05, mask_ratio=0.1, loudness_ratio=0.2)
    paths = PathsConfig(manifest=manifest, cache_dir=None, out_dir=out_dir)
    return RunConfig(frontend=frontend, model=model, train=train, augment=augment, paths=paths)
