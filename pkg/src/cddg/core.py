"""Shared domain types: examples, label spaces and batch containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import torch

Kind = Literal["class", "domain"]

# float32 normalisation leaves ~1e-7 * sqrt(D) of slack per row.
_NORM_TOL = {torch.float64: 1e-6, torch.float32: 1e-5}


class LabelRangeError(ValueError):
    """A class or domain label falls outside its label space."""


class ShapeError(ValueError):
    """Tensor shapes disagree with the declared layout."""


class ContractError(ValueError):
    """An input violates a documented precondition (e.g. non-unit embeddings)."""


@dataclass(frozen=True)
class LabelSpace:
    """Class space of size K and domain space of size M.

    The combined encoding puts classes at ``[0, K)`` and domains at
    ``[K, K + M)`` so the two never collide.
    """

    num_classes: int
    num_domains: int

    def __post_init__(self):
        if self.num_classes < 1 or self.num_domains < 1:
            raise ValueError(f"label space sizes must be positive, got {self}")

    @property
    def combined_size(self) -> int:
        return self.num_classes + self.num_domains

    def combined_label(self, kind: Kind, raw: int) -> int:
        if kind == "class":
            if not 0 <= raw < self.num_classes:
                raise LabelRangeError(f"class label {raw} not in [0, {self.num_classes})")
            return int(raw)
        if kind == "domain":
            if not 0 <= raw < self.num_domains:
                raise LabelRangeError(f"domain label {raw} not in [0, {self.num_domains})")
            return self.num_classes + int(raw)
        raise ValueError(f"unknown label kind {kind!r}")

    def decode(self, combined: int) -> tuple[Kind, int]:
        if 0 <= combined < self.num_classes:
            return "class", int(combined)
        if self.num_classes <= combined < self.combined_size:
            return "domain", int(combined - self.num_classes)
        raise LabelRangeError(f"combined label {combined} not in [0, {self.combined_size})")


def combined_label(space: LabelSpace, kind: Kind, raw: int) -> int:
    return space.combined_label(kind, raw)


@dataclass(frozen=True)
class LabeledExample:
    image: np.ndarray  # [H, W, C], float32 in [0, 1]
    class_label: int
    domain_label: int
    domain_name: str
    example_id: str

    def __post_init__(self):
        if self.image.ndim != 3:
            raise ShapeError(f"image must be [H, W, C], got shape {self.image.shape}")
        if self.class_label < 0 or self.domain_label < 0:
            raise LabelRangeError(f"negative label in example {self.example_id}")


def _check_labels(labels: torch.Tensor, n: int, name: str) -> None:
    if labels.ndim != 1 or labels.shape[0] != n:
        raise ShapeError(f"{name} must be a vector of length {n}, got {tuple(labels.shape)}")


@dataclass(frozen=True)
class AugmentedBatch:
    """Two augmented views of N examples, stacked as ``[view1 block; view2 block]``."""

    images: torch.Tensor  # [2N, H, W, C]
    class_labels: torch.Tensor  # [2N]
    domain_labels: torch.Tensor  # [2N]
    example_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        b = self.images.shape[0]
        if self.images.ndim != 4 or b % 2:
            raise ShapeError(f"batch images must be [2N, H, W, C], got {tuple(self.images.shape)}")
        _check_labels(self.class_labels, b, "class_labels")
        _check_labels(self.domain_labels, b, "domain_labels")
        n = b // 2
        if not (torch.equal(self.class_labels[:n], self.class_labels[n:])
                and torch.equal(self.domain_labels[:n], self.domain_labels[n:])):
            raise ContractError("rows i and i+N must carry identical labels")

    @property
    def n(self) -> int:
        return self.images.shape[0] // 2


def check_unit_rows(z: torch.Tensor, name: str = "embeddings") -> None:
    if z.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {tuple(z.shape)}")
    tol = _NORM_TOL.get(z.dtype, 1e-3)
    err = (z.detach().norm(dim=1) - 1).abs().max().item() if len(z) else 0.0
    if err > tol:
        raise ContractError(f"{name} rows are not unit-norm (max deviation {err:.3g} > {tol:g})")


@dataclass(frozen=True)
class DualEmbeddings:
    z_v: torch.Tensor  # class features [B, D]
    z_s: torch.Tensor  # domain features [B, D]
    class_labels: torch.Tensor
    domain_labels: torch.Tensor
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.z_v.shape != self.z_s.shape:
            raise ShapeError(f"z_v {tuple(self.z_v.shape)} and z_s {tuple(self.z_s.shape)} differ")
        b = self.z_v.shape[0]
        _check_labels(self.class_labels, b, "class_labels")
        _check_labels(self.domain_labels, b, "domain_labels")
        if self.validate:
            check_unit_rows(self.z_v, "z_v")
            check_unit_rows(self.z_s, "z_s")

    def __len__(self) -> int:
        return self.z_v.shape[0]


def concat_mixed(d: DualEmbeddings, space: LabelSpace) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack ``[Z_v; Z_s]`` with labels mapped into the combined (K + M) space."""
    if d.z_v.shape[1] != d.z_s.shape[1]:
        raise ShapeError("Z_v and Z_s embedding widths differ")
    y, yd = d.class_labels, d.domain_labels
    if len(y) and (y.min() < 0 or y.max() >= space.num_classes):
        raise LabelRangeError(f"class labels outside [0, {space.num_classes})")
    if len(yd) and (yd.min() < 0 or yd.max() >= space.num_domains):
        raise LabelRangeError(f"domain labels outside [0, {space.num_domains})")
    z = torch.cat([d.z_v, d.z_s], dim=0)
    labels = torch.cat([y, yd + space.num_classes], dim=0)
    return z, labels
