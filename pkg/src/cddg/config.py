"""Experiment config files.

A YAML (or JSON) document with the sections below. Every key is optional;
unknown keys are rejected so typos fail loudly::

    output_dir: runs
    data:          {source: synthetic, root: null, image_size: 16, num_classes: 5,
                    num_domains: 4, n_per_cell: 100, nuisance_strength: 1.0, seed: 0}
    train:         {variant: full_comb, batch_size: 32, steps: 3000, eval_every: 250,
                    lr: 0.001, weight_decay: 0.0, seed: 0, threads: 1}
    loss:          {temperature: 0.1, alpha: 1.0}
    encoder:       {architecture: small_cnn, embedding_dim: 128, widths: [32, 64, 128],
                    projection_head: false}
    augmentation:  {enabled: true, crop_scale: [0.6, 1.0], crop_ratio: [0.75, 1.333],
                    flip_prob: 0.5, brightness: 0.4, contrast: 0.4, saturation: 0.4,
                    hue: 0.1, grayscale_prob: 0.2, identity_second_view: false}

Relative ``output_dir`` values resolve against ``$CDDG_OUTPUT_ROOT`` when set.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Literal

import yaml

from .augment import AugmentConfig
from .data import DGDataset, SyntheticSpec, generate_synthetic, load_directory
from .losses import LossConfig
from .networks import EncoderSpec
from .training import TrainConfig

OUTPUT_ROOT_ENV = "CDDG_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSection:
    source: Literal["synthetic", "directory"] = "synthetic"
    root: str | None = None
    image_size: int = 16
    num_classes: int = 5
    num_domains: int = 4
    n_per_cell: int = 100
    nuisance_strength: float = 1.0
    seed: int = 0

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(self.num_classes, self.num_domains, self.n_per_cell, self.image_size,
                             self.nuisance_strength, self.seed)


@dataclass(frozen=True)
class TrainSection:
    variant: str = "full_comb"
    batch_size: int = 32
    steps: int = 3000
    eval_every: int = 250
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    threads: int = 1


@dataclass(frozen=True)
class LossSection:
    temperature: float = 0.1
    alpha: float = 1.0


@dataclass(frozen=True)
class EncoderSection:
    architecture: str = "small_cnn"
    embedding_dim: int = 128
    widths: tuple[int, ...] = (32, 64, 128)
    projection_head: bool = False


_SECTIONS = {
    "data": DataSection,
    "train": TrainSection,
    "loss": LossSection,
    "encoder": EncoderSection,
    "augmentation": AugmentConfig,
}


def _build(cls, values, where: str):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(known))}")
    for key in ("widths", "crop_scale", "crop_ratio"):
        if key in values and isinstance(values[key], list):
            values = {**values, key: tuple(values[key])}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: str = "runs"
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossSection = field(default_factory=LossSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        d = d or {}
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping at the top level")
        allowed = {"output_dir", *_SECTIONS}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")
        kwargs = {name: _build(cls_, d.get(name), name) for name, cls_ in _SECTIONS.items()}
        cfg = cls(output_dir=str(d.get("output_dir", "runs")), **kwargs)
        cfg.train_config()  # validate cross-section constraints early
        return cfg

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_train(self, **changes) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, **changes))

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                variant=self.train.variant,
                loss=LossConfig(self.loss.temperature, self.loss.alpha),
                encoder=EncoderSpec(self.encoder.architecture, self.encoder.embedding_dim, self.encoder.widths,
                                    self.data.image_size, 3, self.encoder.projection_head),
                augmentation=self.augmentation,
                batch_size=self.train.batch_size,
                steps=self.train.steps,
                eval_every=self.train.eval_every,
                lr=self.train.lr,
                weight_decay=self.train.weight_decay,
                seed=self.train.seed,
                threads=self.train.threads,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def load_dataset(self) -> DGDataset:
        if self.data.source == "synthetic":
            try:
                return generate_synthetic(self.data.synthetic_spec())
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.data.source == "directory":
            if not self.data.root:
                raise ConfigError("data.root is required when data.source is 'directory'")
            return load_directory(self.data.root, self.data.image_size)
        raise ConfigError(f"data.source must be 'synthetic' or 'directory', got {self.data.source!r}")

    def output_path(self) -> Path:
        path = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not path.is_absolute():
            path = Path(root) / path
        return path


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return ExperimentConfig.from_dict(doc)
