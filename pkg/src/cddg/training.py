"""Joint optimisation of the four networks, checkpointing and model selection."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch
import torch.nn.functional as F

from .augment import AugmentConfig
from .core import LabelSpace
from .data import DGDataset, SplitPlan, make_batches
from .losses import LossConfig, ce_dis, dscl, sup_contrastive, total_loss
from .networks import EncoderSpec, ModelBundle, class_accuracy, init_bundle, normalize

log = logging.getLogger(__name__)

VARIANTS = ("full_comb", "full_ind", "disentangle_only", "contrastive_only", "erm")
SELECTION_METHODS = ("TDVS", "Oracle")
CHECKPOINT_FORMAT = "cddg-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    """A checkpoint does not match what the caller expects."""


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "full_comb"
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    batch_size: int = 32
    steps: int = 3000
    eval_every: int = 250
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if not self.steps >= self.eval_every >= 1:
            raise ValueError(f"need steps >= eval_every >= 1, got steps={self.steps}, eval_every={self.eval_every}")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay nonnegative")

    @property
    def effective_loss(self) -> LossConfig:
        """Loss settings after applying the variant's ablation flags."""
        if self.variant == "full_comb":
            return replace(self.loss, variant="comb")
        if self.variant == "full_ind":
            return replace(self.loss, variant="ind")
        if self.variant == "disentangle_only":
            return replace(self.loss, variant="none", alpha=0.0)
        if self.variant == "erm":
            return replace(self.loss, variant="none", alpha=0.0)
        return replace(self.loss, variant="none")  # contrastive_only: plain SCL on g_v

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        d["augmentation"]["crop_scale"] = list(self.augmentation.crop_scale)
        d["augmentation"]["crop_ratio"] = list(self.augmentation.crop_ratio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss"] = LossConfig(**d.get("loss", {}))
        d["encoder"] = EncoderSpec(**d.get("encoder", {}))
        d["augmentation"] = AugmentConfig(**d.get("augmentation", {}))
        return cls(**d)


def stable_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def config_hash(config: TrainConfig) -> str:
    return stable_hash(config.to_dict())


def architecture_hash(spec: EncoderSpec, space: LabelSpace) -> str:
    return stable_hash({"encoder": spec.to_dict(), "space": asdict(space)})


@dataclass(frozen=True)
class EvalRecord:
    step: int
    losses: dict
    source_val_acc: float
    target_val_acc: float
    checkpoint_id: str


@dataclass
class TrainHistory:
    records: list[EvalRecord] = field(default_factory=list)
    loss_trace: list[float] = field(default_factory=list)

    def append(self, record: EvalRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("history steps must increase strictly")
        self.records.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainHistory":
        h = cls()
        for line in text.splitlines():
            if line.strip():
                h.append(EvalRecord(**json.loads(line)))
        return h


def select_model(history: TrainHistory, method: str) -> str:
    """Checkpoint with the best validation accuracy; earliest step wins ties.

    ``TDVS`` ranks by held-out source-domain accuracy, ``Oracle`` by
    held-out target-domain accuracy.
    """
    if not history.records:
        raise ValueError("cannot select from an empty history")
    key = {"tdvs": "source_val_acc", "oracle": "target_val_acc"}.get(method.lower())
    if key is None:
        raise ValueError(f"unknown selection method {method!r}")
    best = max(history.records, key=lambda r: (getattr(r, key), -r.step))
    return best.checkpoint_id


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(bundle: ModelBundle, path, *, step: int, config_hash: str = "",
                    metrics: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder": bundle.spec.to_dict(),
        "space": asdict(bundle.space),
        "architecture_hash": architecture_hash(bundle.spec, bundle.space),
        "config_hash": config_hash,
        "step": step,
        "metrics": metrics or {},
    }
    torch.save({"manifest": manifest, "state_dict": bundle.state_dict()}, path)
    return path


def read_manifest(path) -> dict:
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    return blob["manifest"]


def load_checkpoint(path, spec: EncoderSpec | None = None, space: LabelSpace | None = None,
                    config_hash: str | None = None) -> ModelBundle:
    """Rebuild a bundle from disk, refusing files that disagree with the
    expected encoder spec, label space or config hash."""
    blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    manifest = blob.get("manifest", {})
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    stored_spec = EncoderSpec(**manifest["encoder"])
    stored_space = LabelSpace(**manifest["space"])
    if architecture_hash(stored_spec, stored_space) != manifest["architecture_hash"]:
        raise CheckpointError(f"{path}: manifest hash does not match its contents")
    if spec is not None and spec != stored_spec:
        raise CheckpointError(f"{path}: encoder spec {stored_spec} does not match expected {spec}")
    if space is not None and space != stored_space:
        raise CheckpointError(f"{path}: label space {stored_space} does not match expected {space}")
    if config_hash is not None and config_hash != manifest["config_hash"]:
        raise CheckpointError(f"{path}: config hash {manifest['config_hash']} != expected {config_hash}")
    bundle = ModelBundle(stored_spec, stored_space)
    bundle.load_state_dict(blob["state_dict"])
    return bundle


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    config: TrainConfig
    plan: SplitPlan
    space: LabelSpace
    history: TrainHistory
    checkpoints: dict  # checkpoint id -> state dict
    checkpoint_paths: dict = field(default_factory=dict)

    def bundle(self, checkpoint_id: str | None = None) -> ModelBundle:
        if checkpoint_id is None:
            checkpoint_id = self.history.records[-1].checkpoint_id
        bundle = ModelBundle(self.config.encoder, self.space)
        bundle.load_state_dict(self.checkpoints[checkpoint_id])
        bundle.eval()
        return bundle

    def selected(self, method: str) -> str:
        return select_model(self.history, method)


def loss_components(bundle: ModelBundle, batch, config: TrainConfig) -> dict[str, torch.Tensor]:
    """Per-variant loss terms for one batch; ``total`` is what gets minimised."""
    cfg = config.effective_loss
    images, y, yd = batch.images, batch.class_labels, batch.domain_labels
    if config.variant in ("contrastive_only", "erm"):
        # single encoder: the domain branch is never evaluated
        bundle._check_images(images)
        z_v = normalize(bundle.g_v(images))
        ce = F.cross_entropy(bundle.f_v(z_v), y)
        if config.variant == "contrastive_only":
            z_c = normalize(bundle.h_v(z_v)) if bundle.h_v is not None else z_v
            contrast = sup_contrastive(z_c, y, cfg.temperature)
        else:
            contrast = ce * 0.0
    else:
        d = bundle.encode(images, y, yd)
        class_logits, domain_logits = bundle.classify(d)
        ce = ce_dis(class_logits, domain_logits, y, yd)
        contrast = dscl(bundle.project(d), bundle.space, cfg) if cfg.alpha > 0 else ce * 0.0
    return {"ce": ce, "dscl": contrast, "total": total_loss(ce, contrast, cfg.alpha)}


def train(config: TrainConfig, plan: SplitPlan, ds: DGDataset, out_dir=None) -> TrainResult:
    """Run the optimisation loop and keep a checkpoint every ``eval_every`` steps.

    With ``out_dir`` set, checkpoints go to ``out_dir/checkpoints`` and the
    history to ``out_dir/history.jsonl``.
    """
    torch.set_num_threads(config.threads)
    spec = config.encoder
    if spec.image_size != ds.image_size:
        spec = replace(spec, image_size=ds.image_size)
        config = replace(config, encoder=spec)
    chash = config_hash(config)
    bundle = init_bundle(spec, ds.space, config.seed)
    bundle.train()
    optimizer = torch.optim.AdamW(bundle.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    batches = make_batches(plan, ds, config.batch_size, config.augmentation, config.seed)

    src_x, src_y, _ = ds.tensors(plan.source_val) if plan.source_val else ds.tensors(plan.source_train)
    tgt_x, tgt_y, _ = ds.tensors(plan.target_val or plan.target_all)

    history = TrainHistory()
    checkpoints, paths = {}, {}
    out_dir = Path(out_dir) if out_dir is not None else None
    window: dict[str, list[float]] = {"ce": [], "dscl": [], "total": []}

    for step in range(1, config.steps + 1):
        parts = loss_components(bundle, next(batches), config)
        values = {k: float(v.detach()) for k, v in parts.items()}
        if not all(math.isfinite(v) for v in values.values()):
            raise TrainingDiverged(f"non-finite loss at step {step}: {values}")
        optimizer.zero_grad(set_to_none=True)
        parts["total"].backward()
        optimizer.step()
        history.loss_trace.append(values["total"])
        for k, v in values.items():
            window[k].append(v)

        if step % config.eval_every == 0 or step == config.steps:
            ckpt_id = f"step{step:06d}"
            losses = {k: sum(v) / len(v) for k, v in window.items()}
            window = {k: [] for k in window}
            record = EvalRecord(step, losses, class_accuracy(bundle, src_x, src_y),
                                class_accuracy(bundle, tgt_x, tgt_y), ckpt_id)
            history.append(record)
            checkpoints[ckpt_id] = copy.deepcopy(bundle.state_dict())
            if out_dir is not None:
                paths[ckpt_id] = save_checkpoint(bundle, out_dir / "checkpoints" / f"{ckpt_id}.pt", step=step,
                                                 config_hash=chash, metrics=asdict(record))
            log.info("step %d  loss %.4f (ce %.4f, dscl %.4f)  src-val %.3f  tgt-val %.3f", step,
                     losses["total"], losses["ce"], losses["dscl"], record.source_val_acc, record.target_val_acc)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "history.jsonl").write_text(history.to_jsonl())
        (out_dir / "loss_trace.json").write_text(json.dumps(history.loss_trace))
    return TrainResult(config, plan, ds.space, history, checkpoints, paths)
