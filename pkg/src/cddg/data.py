"""Datasets for leave-one-domain-out training.

Two sources produce a :class:`DGDataset`: a synthetic shape/style generator
and a ``root/<domain>/<class>/<image>`` directory corpus. Domain and class
labels always follow the lexicographic order of their names.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal

import numpy as np
import torch

from .augment import AugmentConfig, two_views
from .core import AugmentedBatch, LabeledExample, LabelSpace

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}
MIN_IMAGE_SIZE = 8


class IngestionError(RuntimeError):
    """A directory corpus is malformed or contains unreadable files."""


class DataConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DGDataset:
    examples: tuple[LabeledExample, ...]
    space: LabelSpace
    domain_names: tuple[str, ...]
    class_names: tuple[str, ...]
    provenance: Literal["synthetic", "directory"]
    images: np.ndarray = field(init=False, repr=False)
    class_labels: np.ndarray = field(init=False, repr=False)
    domain_labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.examples:
            raise DataConfigError("dataset has no examples")
        if len(self.domain_names) != self.space.num_domains or len(self.class_names) != self.space.num_classes:
            raise DataConfigError("name lists do not match the label space")
        shape = self.examples[0].image.shape
        for ex in self.examples:
            if ex.image.shape != shape:
                raise DataConfigError(f"{ex.example_id}: image shape {ex.image.shape} != {shape}")
            if ex.class_label >= self.space.num_classes or ex.domain_label >= self.space.num_domains:
                raise DataConfigError(f"{ex.example_id}: label outside {self.space}")
        images = np.stack([ex.image for ex in self.examples]).astype(np.float32)
        images.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "class_labels", np.array([e.class_label for e in self.examples], dtype=np.int64))
        object.__setattr__(self, "domain_labels", np.array([e.domain_label for e in self.examples], dtype=np.int64))
        object.__setattr__(self, "_index", {e.example_id: i for i, e in enumerate(self.examples)})
        if len(self._index) != len(self.examples):
            raise DataConfigError("duplicate example ids")

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def image_size(self) -> int:
        return self.images.shape[1]

    def indices(self, ids) -> np.ndarray:
        return np.array([self._index[i] for i in ids], dtype=np.int64)

    def domain_label_of(self, name: str) -> int:
        try:
            return self.domain_names.index(name)
        except ValueError:
            raise KeyError(f"unknown domain {name!r}; known domains: {', '.join(self.domain_names)}") from None

    def tensors(self, ids=None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        idx = slice(None) if ids is None else self.indices(ids)
        return (torch.from_numpy(self.images[idx].copy()),
                torch.from_numpy(self.class_labels[idx]),
                torch.from_numpy(self.domain_labels[idx]))


# --------------------------------------------------------------------------
# synthetic generator

SHAPES = ("circle", "square", "triangle", "plus", "crescent", "cross", "ring", "frame")


def _shape_distance(name: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed distance (negative inside) in shape units, circumradius ~1."""
    r = np.hypot(x, y)
    if name == "circle":
        return r - 0.9
    if name == "square":
        return np.maximum(np.abs(x), np.abs(y)) - 0.75
    if name == "triangle":
        c, s = np.sqrt(3) / 2, 0.5
        return np.maximum.reduce([-y - 0.5, c * x + s * y - 0.5, -c * x + s * y - 0.5]) / 1.0
    if name == "plus":
        return np.minimum(np.maximum(np.abs(x) - 0.3, np.abs(y) - 0.95),
                          np.maximum(np.abs(x) - 0.95, np.abs(y) - 0.3))
    if name == "ring":
        return np.abs(r - 0.7) - 0.22
    if name == "cross":
        u, v = (x + y) / np.sqrt(2), (x - y) / np.sqrt(2)
        return _shape_distance("plus", u, v)
    if name == "frame":
        return np.abs(np.maximum(np.abs(x), np.abs(y)) - 0.62) - 0.2
    if name == "crescent":
        return np.maximum(r - 0.9, 0.75 - np.hypot(x - 0.45, y))
    raise ValueError(name)


@dataclass(frozen=True)
class DomainStyle:
    foreground: tuple[float, float, float]
    background: tuple[float, float, float]
    texture: str  # flat | stripes | checker | blotch
    texture_amplitude: float
    texture_frequency: float
    texture_angle: float
    hollow: float  # 1 draws outlines only
    noise: float


NEUTRAL_STYLE = DomainStyle((0.85, 0.85, 0.85), (0.2, 0.2, 0.2), "flat", 0.0, 1.0, 0.0, 0.0, 0.02)
TEXTURES = ("flat", "stripes", "checker", "blotch")
_LUMA = np.array([0.299, 0.587, 0.114])


def domain_styles(num_domains: int, seed: int) -> list[DomainStyle]:
    """One rendering style per domain; depends on nothing but ``seed``."""
    rng = np.random.default_rng([seed, 7919])
    textures = [TEXTURES[i % len(TEXTURES)] for i in rng.permutation(max(num_domains, len(TEXTURES)))]
    styles = []
    for d in range(num_domains):
        # foreground always brighter than background, so glyph polarity is shared
        while True:
            fg, bg = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
            if _LUMA @ fg - _LUMA @ bg > 0.3:
                break
        styles.append(DomainStyle(
            foreground=tuple(float(v) for v in fg),
            background=tuple(float(v) for v in bg),
            texture=textures[d],
            texture_amplitude=float(rng.uniform(0.08, 0.16)),
            texture_frequency=float(rng.uniform(2.0, 4.0)),
            texture_angle=float(rng.uniform(0, np.pi)),
            hollow=float(d % 2),
            noise=float(rng.uniform(0.02, 0.08)),
        ))
    return styles


def _blend(a: DomainStyle, b: DomainStyle, t: float) -> DomainStyle:
    mix = lambda p, q: tuple((1 - t) * np.asarray(p) + t * np.asarray(q))
    return DomainStyle(
        foreground=mix(a.foreground, b.foreground),
        background=mix(a.background, b.background),
        texture=b.texture,
        texture_amplitude=t * b.texture_amplitude,
        texture_frequency=b.texture_frequency,
        texture_angle=b.texture_angle,
        hollow=t * b.hollow,
        noise=(1 - t) * a.noise + t * b.noise,
    )


def _texture(style: DomainStyle, u, v, rng: np.random.Generator) -> np.ndarray:
    phase = rng.uniform(0, 2 * np.pi)
    f = style.texture_frequency * np.pi
    if style.texture == "stripes":
        t = u * np.cos(style.texture_angle) + v * np.sin(style.texture_angle)
        return np.sin(f * t + phase)
    if style.texture == "checker":
        return np.sign(np.sin(f * u + phase) * np.sin(f * v + phase))
    if style.texture == "blotch":
        k = rng.normal(size=(3, 3))
        return np.tanh(sum(k[i, j] * np.cos((i + 1) * u * f / 3 + (j + 1) * v * f / 3 + phase * (i - j))
                           for i in range(3) for j in range(3)) / 2)
    return np.zeros_like(u)


def render(shape: str, style: DomainStyle, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one glyph with random pose in the given style; returns [H, W, 3]."""
    coords = (np.arange(size) + 0.5) / size * 2 - 1
    u, v = np.meshgrid(coords, -coords)
    cx, cy = rng.uniform(-0.2, 0.2, 2)
    radius = rng.uniform(0.5, 0.75)
    angle = rng.uniform(-0.3, 0.3)
    du, dv = u - cx, v - cy
    x = (du * np.cos(angle) + dv * np.sin(angle)) / radius
    y = (-du * np.sin(angle) + dv * np.cos(angle)) / radius
    sd_px = _shape_distance(shape, x, y) * radius * size / 2
    fill = np.clip(0.5 - sd_px, 0, 1)
    outline = np.clip(1.5 - np.abs(sd_px + 0.75), 0, 1)
    mask = (1 - style.hollow) * fill + style.hollow * outline

    fg, bg = np.asarray(style.foreground), np.asarray(style.background)
    img = bg + (fg - bg) * mask[..., None]
    img = img + style.texture_amplitude * _texture(style, u, v, rng)[..., None]
    img = img + rng.normal(0, style.noise, img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 5
    num_domains: int = 4
    n_per_cell: int = 100
    image_size: int = 16
    nuisance_strength: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2 or self.num_domains < 2:
            raise DataConfigError(f"need at least 2 classes and 2 domains, got K={self.num_classes}, M={self.num_domains}")
        if self.num_classes > len(SHAPES):
            raise DataConfigError(f"at most {len(SHAPES)} classes are available, got {self.num_classes}")
        if self.n_per_cell < 1:
            raise DataConfigError("n_per_cell must be at least 1")
        if self.image_size < MIN_IMAGE_SIZE:
            raise DataConfigError(f"image_size {self.image_size} is too small to render glyphs (min {MIN_IMAGE_SIZE})")
        if not 0 <= self.nuisance_strength <= 1:
            raise DataConfigError("nuisance_strength must be in [0, 1]")


def synthetic_names(spec: SyntheticSpec) -> tuple[tuple[str, ...], tuple[str, ...]]:
    dw, cw = len(str(spec.num_domains - 1)), len(str(spec.num_classes - 1))
    domains = tuple(f"domain{d:0{dw}d}" for d in range(spec.num_domains))
    classes = tuple(f"{k:0{cw}d}_{SHAPES[k]}" for k in range(spec.num_classes))
    return domains, classes


def generate_synthetic(spec: SyntheticSpec) -> DGDataset:
    """K * M * n_per_cell glyph images; the shape is the class, the style is the domain.

    Style is chosen per domain and pose/noise per example, both independently
    of the class, so the two factors are disentangled by construction.
    """
    spec.validate()
    domain_names, class_names = synthetic_names(spec)
    styles = [_blend(NEUTRAL_STYLE, s, spec.nuisance_strength) for s in domain_styles(spec.num_domains, spec.seed)]
    space = LabelSpace(spec.num_classes, spec.num_domains)
    examples = []
    for d, style in enumerate(styles):
        for k in range(spec.num_classes):
            rng = np.random.default_rng([spec.seed, d, k])
            for i in range(spec.n_per_cell):
                img = render(SHAPES[k], style, spec.image_size, rng)
                img.setflags(write=False)
                examples.append(LabeledExample(img, k, d, domain_names[d],
                                               f"{domain_names[d]}/{class_names[k]}/{i:05d}"))
    return DGDataset(tuple(examples), space, domain_names, class_names, "synthetic")


# --------------------------------------------------------------------------
# directory corpora


def _decode(path: Path, size: int) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            return np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc


def load_directory(root, image_size: int = 16) -> DGDataset:
    """Read ``root/<domain>/<class>/*.{png,jpg,...}`` into a dataset."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} is not a directory")
    domains = sorted(p.name for p in root.iterdir() if p.is_dir())
    if len(domains) < 2:
        raise IngestionError(f"{root}: need at least 2 domain directories, found {len(domains)}")
    classes = sorted({c.name for d in domains for c in (root / d).iterdir() if c.is_dir()})
    if len(classes) < 2:
        raise IngestionError(f"{root}: need at least 2 class directories, found {len(classes)}")

    missing, empty, files = [], [], {}
    for d in domains:
        for c in classes:
            cell = root / d / c
            if not cell.is_dir():
                missing.append(f"{d}/{c}")
                continue
            found = sorted(p for p in cell.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
            if not found:
                empty.append(str(cell))
            files[d, c] = found
    if missing:
        raise IngestionError(f"{root}: missing (domain, class) cells: {', '.join(missing)}")
    if empty:
        raise IngestionError(f"empty class directories: {', '.join(empty)}")

    examples = []
    for di, d in enumerate(domains):
        for ci, c in enumerate(classes):
            for path in files[d, c]:
                img = _decode(path, image_size)
                img.setflags(write=False)
                examples.append(LabeledExample(img, ci, di, d, f"{d}/{c}/{path.name}"))
    log.info("loaded %d images from %s (%d domains, %d classes)", len(examples), root, len(domains), len(classes))
    return DGDataset(tuple(examples), LabelSpace(len(classes), len(domains)),
                     tuple(domains), tuple(classes), "directory")


def export_directory(ds: DGDataset, root) -> Path:
    """Write the dataset as PNGs in the directory corpus layout."""
    from PIL import Image

    root = Path(root)
    for i, ex in enumerate(ds.examples):
        cell = root / ex.domain_name / ds.class_names[ex.class_label]
        cell.mkdir(parents=True, exist_ok=True)
        pixels = np.clip(np.rint(ex.image * 255), 0, 255).astype(np.uint8)
        Image.fromarray(pixels, "RGB").save(cell / f"{i:05d}.png")
    return root


# --------------------------------------------------------------------------
# splits and batches


@dataclass(frozen=True)
class SplitPlan:
    target_domain: str
    source_train: tuple[str, ...]
    source_val: tuple[str, ...]
    target_all: tuple[str, ...]
    # held-out slice of the target domain, used only for oracle selection
    target_val: tuple[str, ...]
    seed: int


def _holdout(ids: list[str], fraction: float, rng: np.random.Generator) -> tuple[list[str], list[str]]:
    perm = rng.permutation(len(ids))
    n_out = int(round(fraction * len(ids)))
    out = sorted(perm[:n_out])
    keep = sorted(perm[n_out:])
    return [ids[i] for i in keep], [ids[i] for i in out]


def leave_one_out(ds: DGDataset, target: str, seed: int, holdout_fraction: float = 0.2) -> SplitPlan:
    """Hold out ``target`` entirely; split every source domain 80/20 into train/val."""
    target_label = ds.domain_label_of(target)
    by_domain: dict[int, list[str]] = {d: [] for d in range(ds.space.num_domains)}
    for ex in ds.examples:
        by_domain[ex.domain_label].append(ex.example_id)

    train, val = [], []
    for d, ids in by_domain.items():
        if d == target_label:
            continue
        tr, va = _holdout(ids, holdout_fraction, np.random.default_rng([seed, d]))
        train += tr
        val += va
    _, target_val = _holdout(by_domain[target_label], holdout_fraction,
                             np.random.default_rng([seed, target_label, 1]))
    return SplitPlan(target, tuple(train), tuple(val), tuple(by_domain[target_label]), tuple(target_val), seed)


def make_batches(plan: SplitPlan, ds: DGDataset, batch_size: int, augmentation: AugmentConfig,
                 seed: int) -> Iterator[AugmentedBatch]:
    """Endless stream of two-view batches over ``plan.source_train``.

    Every epoch reshuffles with a seed derived from ``(seed, epoch)`` and
    every batch augments with one derived from ``(seed, epoch, batch)``.
    """
    n_train = len(plan.source_train)
    if batch_size < 2:
        raise DataConfigError("batch size must be at least 2")
    if batch_size > n_train:
        raise DataConfigError(f"batch size {batch_size} exceeds the {n_train} training examples")
    train_idx = ds.indices(plan.source_train)
    images = torch.from_numpy(ds.images.copy())
    y = torch.from_numpy(ds.class_labels)
    yd = torch.from_numpy(ds.domain_labels)
    epoch = 0
    while True:
        order = train_idx[np.random.default_rng([seed, epoch]).permutation(n_train)]
        for b in range(n_train // batch_size):
            idx = torch.from_numpy(order[b * batch_size:(b + 1) * batch_size])
            views = two_views(images[idx], np.random.default_rng([seed, epoch, b]), augmentation)
            yield AugmentedBatch(views, y[idx].repeat(2), yd[idx].repeat(2))
        epoch += 1
