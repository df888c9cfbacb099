"""Objective terms: supervised contrastive loss, the two disentangled
contrastive variants, the disentangled cross-entropy and their sum.

All contrastive terms are averaged over anchors that have at least one
positive. Anchors without positives are skipped; a batch where every anchor
is skipped yields 0 (still attached to the graph so ``backward`` works).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn.functional as F

from .core import DualEmbeddings, LabelRangeError, LabelSpace, ShapeError, check_unit_rows, concat_mixed

ContrastiveVariant = Literal["comb", "ind", "none"]


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    alpha: float = 1.0
    variant: ContrastiveVariant = "comb"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.variant not in ("comb", "ind", "none"):
            raise ValueError(f"unknown contrastive variant {self.variant!r}")


def _masked_scl(z: torch.Tensor, labels: torch.Tensor, groups: torch.Tensor,
                anchors: torch.Tensor, temperature: float) -> torch.Tensor:
    """Contrastive term over the rows selected by ``anchors``.

    Every other row sits in the denominator. Positives share both the label
    and the group of the anchor, so rows from another group only ever act as
    negatives.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    b = z.shape[0]
    if b < 2:
        raise ShapeError(f"need at least 2 rows, got {b}")
    not_self = ~torch.eye(b, dtype=torch.bool, device=z.device)
    logits = z @ z.T / temperature
    logits = logits.masked_fill(~not_self, float("-inf"))
    logits = logits - logits.max(dim=1, keepdim=True).values.detach()
    log_prob = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    log_prob = log_prob.masked_fill(~not_self, 0.0)

    positives = (labels[:, None] == labels[None, :]) & (groups[:, None] == groups[None, :]) & not_self
    positives = positives & anchors[:, None]
    n_pos = positives.sum(dim=1)
    contributing = n_pos > 0
    if not contributing.any():
        return z.sum() * 0.0
    per_anchor = -(log_prob * positives).sum(dim=1)[contributing] / n_pos[contributing]
    return per_anchor.mean()


def sup_contrastive(z: torch.Tensor, labels: torch.Tensor, temperature: float,
                    *, validate: bool = True) -> torch.Tensor:
    """Supervised contrastive loss over unit-norm rows of ``z``."""
    if validate:
        check_unit_rows(z)
    if labels.shape != (z.shape[0],):
        raise ShapeError(f"labels shape {tuple(labels.shape)} does not match {z.shape[0]} rows")
    everyone = torch.ones(z.shape[0], dtype=torch.bool, device=z.device)
    groups = torch.zeros(z.shape[0], dtype=torch.long, device=z.device)
    return _masked_scl(z, labels, groups, everyone, temperature)


def dscl_comb(d: DualEmbeddings, space: LabelSpace, temperature: float,
              *, validate: bool = True) -> torch.Tensor:
    """Mixed label space: class and domain features contrasted in one (K+M)-way space."""
    z, labels = concat_mixed(d, space)
    return sup_contrastive(z, labels, temperature, validate=validate)


def dscl_ind(d: DualEmbeddings, temperature: float, *, validate: bool = True) -> torch.Tensor:
    """Independent label spaces: each feature type is contrasted on its own
    labels while the other type joins the denominator as extra negatives."""
    if validate:
        check_unit_rows(d.z_v, "z_v")
        check_unit_rows(d.z_s, "z_s")
    b = len(d)
    z = torch.cat([d.z_s, d.z_v], dim=0)
    labels = torch.cat([d.domain_labels, d.class_labels], dim=0)
    groups = torch.cat([torch.zeros(b, dtype=torch.long), torch.ones(b, dtype=torch.long)]).to(z.device)
    domain_term = _masked_scl(z, labels, groups, groups == 0, temperature)
    class_term = _masked_scl(z, labels, groups, groups == 1, temperature)
    return domain_term + class_term


def _check_targets(logits: torch.Tensor, targets: torch.Tensor, name: str) -> None:
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"{name}: logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    if len(targets) and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise LabelRangeError(f"{name} outside [0, {logits.shape[1]})")


def ce_dis(class_logits: torch.Tensor, domain_logits: torch.Tensor,
           class_labels: torch.Tensor, domain_labels: torch.Tensor) -> torch.Tensor:
    """Batch mean of class cross-entropy plus domain cross-entropy."""
    _check_targets(class_logits, class_labels, "class labels")
    _check_targets(domain_logits, domain_labels, "domain labels")
    return F.cross_entropy(class_logits, class_labels) + F.cross_entropy(domain_logits, domain_labels)


def dscl(d: DualEmbeddings, space: LabelSpace, cfg: LossConfig) -> torch.Tensor:
    if cfg.variant == "comb":
        return dscl_comb(d, space, cfg.temperature)
    if cfg.variant == "ind":
        return dscl_ind(d, cfg.temperature)
    return d.z_v.sum() * 0.0


def total_loss(ce, contrastive, alpha: float):
    return ce + alpha * contrastive
