"""Dual feature extractors and their linear classifiers."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import torch
import torch.nn.functional as F
from torch import nn

from .core import DualEmbeddings, LabelSpace, ShapeError


@dataclass(frozen=True)
class EncoderSpec:
    architecture: Literal["small_cnn", "mlp"] = "small_cnn"
    embedding_dim: int = 128
    widths: tuple[int, ...] = (32, 64, 128)
    image_size: int = 16
    channels: int = 3
    projection_head: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.architecture not in ("small_cnn", "mlp"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be at least 2")
        if not self.widths or any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


def normalize(z: torch.Tensor) -> torch.Tensor:
    return F.normalize(z, dim=1, eps=1e-12)


class SmallCNN(nn.Module):
    """conv -> ReLU -> max-pool blocks, global average pool, linear to D."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        layers = []
        c_in = spec.channels
        for w in spec.widths:
            layers += [nn.Conv2d(c_in, w, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2, ceil_mode=True)]
            c_in = w
        self.features = nn.Sequential(*layers)
        self.out = nn.Linear(c_in, spec.embedding_dim)

    def forward(self, x):
        # channels-last in, channels-first for conv
        h = self.features(x.permute(0, 3, 1, 2))
        return self.out(h.mean(dim=(2, 3)))


class MLPEncoder(nn.Module):
    def __init__(self, spec: EncoderSpec):
        super().__init__()
        dims = [spec.image_size * spec.image_size * spec.channels, *spec.widths]
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [nn.Linear(a, b), nn.ReLU()]
        layers.append(nn.Linear(dims[-1], spec.embedding_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x.flatten(1))


def _projection(dim: int) -> nn.Module:
    return nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim))


def build_encoder(spec: EncoderSpec) -> nn.Module:
    return SmallCNN(spec) if spec.architecture == "small_cnn" else MLPEncoder(spec)


class ModelBundle(nn.Module):
    """g_v / f_v (class branch) and g_s / f_s (domain branch).

    The branches share no parameters. With ``projection_head`` each branch
    gets an extra 2-layer head whose output feeds the contrastive loss only.
    """

    def __init__(self, spec: EncoderSpec, space: LabelSpace):
        super().__init__()
        self.spec = spec
        self.space = space
        self.g_v = build_encoder(spec)
        self.g_s = build_encoder(spec)
        self.f_v = nn.Linear(spec.embedding_dim, space.num_classes)
        self.f_s = nn.Linear(spec.embedding_dim, space.num_domains)
        if spec.projection_head:
            self.h_v = _projection(spec.embedding_dim)
            self.h_s = _projection(spec.embedding_dim)
        else:
            self.h_v = self.h_s = None

    def _check_images(self, images: torch.Tensor) -> None:
        s, c = self.spec.image_size, self.spec.channels
        if images.ndim != 4 or tuple(images.shape[1:]) != (s, s, c):
            raise ShapeError(f"expected images [B, {s}, {s}, {c}], got {tuple(images.shape)}")

    def encode(self, images: torch.Tensor, class_labels=None, domain_labels=None) -> DualEmbeddings:
        self._check_images(images)
        b = images.shape[0]
        if class_labels is None:
            class_labels = torch.zeros(b, dtype=torch.long)
        if domain_labels is None:
            domain_labels = torch.zeros(b, dtype=torch.long)
        z_v = normalize(self.g_v(images))
        z_s = normalize(self.g_s(images))
        return DualEmbeddings(z_v, z_s, class_labels, domain_labels)

    def classify(self, d: DualEmbeddings) -> tuple[torch.Tensor, torch.Tensor]:
        dim = self.spec.embedding_dim
        if d.z_v.shape[1] != dim or d.z_s.shape[1] != dim:
            raise ShapeError(f"embedding width must be {dim}")
        return self.f_v(d.z_v), self.f_s(d.z_s)

    def project(self, d: DualEmbeddings) -> DualEmbeddings:
        """Embeddings seen by the contrastive loss."""
        if self.h_v is None:
            return d
        return DualEmbeddings(normalize(self.h_v(d.z_v)), normalize(self.h_s(d.z_s)),
                              d.class_labels, d.domain_labels)

    def forward(self, images):
        return self.classify(self.encode(images))


def init_bundle(spec: EncoderSpec, space: LabelSpace, seed: int) -> ModelBundle:
    """Build a bundle whose parameters depend only on ``(spec, space, seed)``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        bundle = ModelBundle(spec, space)
    return bundle


def encode(bundle: ModelBundle, images, class_labels=None, domain_labels=None) -> DualEmbeddings:
    return bundle.encode(images, class_labels, domain_labels)


def classify(bundle: ModelBundle, d: DualEmbeddings):
    return bundle.classify(d)


@torch.no_grad()
def predict_classes(bundle: ModelBundle, images: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    """argmax of f_v(g_v(x)); ties resolve to the lowest class index."""
    was_training = bundle.training
    bundle.eval()
    preds = []
    for start in range(0, images.shape[0], batch_size):
        chunk = images[start:start + batch_size]
        bundle._check_images(chunk)
        preds.append(bundle.f_v(normalize(bundle.g_v(chunk))).argmax(dim=1))
    bundle.train(was_training)
    return torch.cat(preds)


def class_accuracy(bundle: ModelBundle, images: torch.Tensor, labels: torch.Tensor) -> float:
    if images.shape[0] == 0:
        raise ValueError("accuracy needs at least one example")
    return float((predict_classes(bundle, images) == labels).double().mean())
