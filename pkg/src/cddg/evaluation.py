"""Leave-one-domain-out benchmarking, ablations, linear probes and embedding export."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression

from .core import LabeledExample
from .data import DGDataset, SplitPlan, leave_one_out
from .networks import ModelBundle, class_accuracy
from .training import SELECTION_METHODS, TrainConfig, TrainResult, config_hash, train

log = logging.getLogger(__name__)

ABLATION_VARIANTS = ("full_comb", "full_ind", "disentangle_only", "contrastive_only")
VARIANT_LABELS = {
    "full_comb": "CDDG",
    "full_ind": "w/ L_dscl_ind",
    "disentangle_only": "w/o L_dscl_comb",
    "contrastive_only": "w/o L_ce_dis",
    "erm": "ERM",
}


class ProbeError(ValueError):
    pass


def accuracy(bundle: ModelBundle, examples: Sequence[LabeledExample]) -> float:
    """Fraction of examples whose argmax class logit equals the label."""
    if not examples:
        raise ValueError("accuracy needs at least one example")
    images = torch.from_numpy(np.stack([e.image for e in examples]).astype(np.float32))
    labels = torch.tensor([e.class_label for e in examples])
    return class_accuracy(bundle, images, labels)


@dataclass(frozen=True)
class RunResult:
    target: str
    method: str
    seed: int
    variant: str
    accuracy: float
    config_hash: str
    checkpoint_id: str


def run_one(config: TrainConfig, ds: DGDataset, target: str, seed: int,
            out_dir=None) -> tuple[TrainResult, list[RunResult]]:
    """Train on every domain but ``target`` and score both selection rules on it."""
    config = replace(config, seed=seed)
    plan = leave_one_out(ds, target, seed)
    result = train(config, plan, ds, out_dir=out_dir)
    x, y, _ = ds.tensors(plan.target_all)
    chash = config_hash(result.config)
    records = []
    for method in SELECTION_METHODS:
        ckpt = result.selected(method)
        acc = class_accuracy(result.bundle(ckpt), x, y)
        records.append(RunResult(target, method, seed, config.variant, acc, chash, ckpt))
    return result, records


def _job(args):
    config, ds, target, seed = args
    return run_one(config, ds, target, seed)[1]


def _run_jobs(jobs, workers: int) -> list[RunResult]:
    if workers <= 1:
        return [r for job in jobs for r in _job(job)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [r for rs in pool.map(_job, jobs) for r in rs]


@dataclass(frozen=True)
class SummaryRow:
    variant: str
    target: str
    method: str
    mean: float
    std: float
    n: int

    def formatted(self) -> str:
        return format_mean_std(self.mean, self.std)


def format_mean_std(mean: float, std: float) -> str:
    """Percentages in the ``xx.x ± x.x`` style."""
    return f"{100 * mean:.1f} ± {100 * std:.1f}"


def summarize(records: Sequence[RunResult]) -> list[SummaryRow]:
    """Mean and sample standard deviation over seeds per (variant, target, method)."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault((r.variant, r.target, r.method), []).append(r.accuracy)
    rows = []
    for (variant, target, method), accs in groups.items():
        std = statistics.stdev(accs) if len(accs) > 1 else 0.0
        rows.append(SummaryRow(variant, target, method, statistics.fmean(accs), std, len(accs)))
    return rows


def average_over_targets(records: Sequence[RunResult], variant: str, method: str) -> float:
    accs = [r.accuracy for r in records if r.variant == variant and r.method == method]
    return statistics.fmean(accs) if accs else float("nan")


@dataclass
class BenchmarkResult:
    records: list[RunResult]
    summary: list[SummaryRow]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    def render(self) -> str:
        targets = list(dict.fromkeys(r.target for r in self.summary))
        cells = {(r.variant, r.target, r.method): r for r in self.summary}
        variants = list(dict.fromkeys(r.variant for r in self.summary))
        header = ["method", "variant", *targets, "avg"]
        lines = [header]
        for method in SELECTION_METHODS:
            for v in variants:
                row = [method, VARIANT_LABELS.get(v, v)]
                row += [cells[v, t, method].formatted() for t in targets]
                row.append(f"{100 * average_over_targets(self.records, v, method):.1f}")
                lines.append(row)
        widths = [max(len(str(line[i])) for line in lines) for i in range(len(header))]
        return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines)


def run_benchmark(config: TrainConfig, ds: DGDataset, seeds: Sequence[int],
                  workers: int = 1) -> BenchmarkResult:
    """Every domain as target, every seed, both selection rules: M * |seeds| * 2 records."""
    if not seeds:
        raise ValueError("need at least one seed")
    jobs = [(config, ds, target, seed) for target in ds.domain_names for seed in seeds]
    records = _run_jobs(jobs, workers)
    return BenchmarkResult(records, summarize(records))


@dataclass
class AblationResult:
    benchmark: BenchmarkResult
    flags: dict

    def render(self) -> str:
        lines = [self.benchmark.render(), ""]
        for name, flag in self.flags.items():
            verdict = "PASS" if flag["holds"] else "FAIL"
            lines.append(f"trend {name}: {verdict} ({100 * flag['lhs']:.1f} vs {100 * flag['rhs']:.1f})")
        return "\n".join(lines)


def trend_flags(records: Sequence[RunResult], method: str = "TDVS") -> dict:
    def flag(a, b):
        lhs, rhs = average_over_targets(records, a, method), average_over_targets(records, b, method)
        return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs >= rhs), "method": method}

    return {
        "full_comb >= disentangle_only": flag("full_comb", "disentangle_only"),
        "full_comb >= full_ind": flag("full_comb", "full_ind"),
        "full_comb >= contrastive_only": flag("full_comb", "contrastive_only"),
    }


def run_ablation(config: TrainConfig, ds: DGDataset, seeds: Sequence[int],
                 workers: int = 1, variants: Sequence[str] = ABLATION_VARIANTS) -> AblationResult:
    """The four ablation variants through the same pipeline as :func:`run_benchmark`."""
    records = []
    for variant in variants:
        records += run_benchmark(replace(config, variant=variant), ds, seeds, workers).records
    return AblationResult(BenchmarkResult(records, summarize(records)), trend_flags(records))


# --------------------------------------------------------------------------
# probes and export


@dataclass(frozen=True)
class ProbeReport:
    branch: str  # g_v | g_s
    target: str  # class | domain
    accuracy: float
    chance: float
    n_train: int
    n_test: int


@torch.no_grad()
def embed(bundle: ModelBundle, images: torch.Tensor, batch_size: int = 512) -> tuple[np.ndarray, np.ndarray]:
    bundle.eval()
    zv, zs = [], []
    for start in range(0, images.shape[0], batch_size):
        d = bundle.encode(images[start:start + batch_size])
        zv.append(d.z_v.double().numpy())
        zs.append(d.z_s.double().numpy())
    return np.concatenate(zv), np.concatenate(zs)


def parameter_hash(bundle: ModelBundle) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(bundle.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def fit_probe(train_x, train_y, test_x, test_y) -> float:
    if len(np.unique(train_y)) < 2:
        raise ProbeError("probe training data has a single label")
    clf = LogisticRegression(max_iter=2000)
    clf.fit(train_x, train_y)
    return float((clf.predict(test_x) == test_y).mean())


def _stratified_halves(labels: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, 4242])
    first, second = [], []
    for value in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == value))
        half = len(idx) // 2
        first += idx[:half].tolist()
        second += idx[half:].tolist()
    return np.sort(first), np.sort(second)


def probe_disentanglement(bundle: ModelBundle, plan: SplitPlan, ds: DGDataset, seed: int = 0) -> list[ProbeReport]:
    """Linear probes on frozen g_v and g_s features.

    Class probes fit on source-validation embeddings and test on the target
    domain. The target's domain label never occurs among the sources, so
    domain probes fit on one stratified half of source-validation and test
    on the other; their chance level is 1 / (number of source domains).
    """
    src_x, src_y, src_d = ds.tensors(plan.source_val)
    tgt_x, tgt_y, _ = ds.tensors(plan.target_all)
    src_v, src_s = embed(bundle, src_x)
    tgt_v, tgt_s = embed(bundle, tgt_x)
    src_y, src_d, tgt_y = src_y.numpy(), src_d.numpy(), tgt_y.numpy()
    fit_idx, test_idx = _stratified_halves(src_d, seed)
    n_src_domains = len(np.unique(src_d))

    reports = []
    for branch, src_z, tgt_z in (("g_v", src_v, tgt_v), ("g_s", src_s, tgt_s)):
        acc = fit_probe(src_z, src_y, tgt_z, tgt_y)
        reports.append(ProbeReport(branch, "class", acc, 1 / ds.space.num_classes, len(src_y), len(tgt_y)))
        acc = fit_probe(src_z[fit_idx], src_d[fit_idx], src_z[test_idx], src_d[test_idx])
        reports.append(ProbeReport(branch, "domain", acc, 1 / n_src_domains, len(fit_idx), len(test_idx)))
    return reports


def export_embeddings(bundle: ModelBundle, ds: DGDataset, ids: Sequence[str], path) -> Path:
    """CSV with one row per (example, branch) and 9 significant digits per value."""
    path = Path(path)
    x, y, d = ds.tensors(ids)
    z = dict(zip(("g_v", "g_s"), embed(bundle, x)))
    dim = z["g_v"].shape[1]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["example_id", "branch", "class_label", "domain_label", *(f"e{i}" for i in range(dim))])
        for i, ex_id in enumerate(ids):
            for branch in ("g_v", "g_s"):
                writer.writerow([ex_id, branch, int(y[i]), int(d[i]), *(f"{v:.9g}" for v in z[branch][i])])
    return path


def export_projection(bundle: ModelBundle, ds: DGDataset, ids: Sequence[str], path) -> Path:
    """2-D PCA coordinates per branch, ready for scatter plots."""
    path = Path(path)
    x, y, d = ds.tensors(ids)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["example_id", "branch", "class_label", "domain_label", "pc1", "pc2"])
        for branch, z in zip(("g_v", "g_s"), embed(bundle, x)):
            centered = z - z.mean(axis=0)
            _, _, vt = np.linalg.svd(centered, full_matrices=False)
            xy = centered @ vt[:2].T
            for i, ex_id in enumerate(ids):
                writer.writerow([ex_id, branch, int(y[i]), int(d[i]), f"{xy[i, 0]:.9g}", f"{xy[i, 1]:.9g}"])
    return path
