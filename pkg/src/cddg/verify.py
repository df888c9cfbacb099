"""Fast self-check suite: oracle agreement, gradient checks and loss invariants.

Gradients are checked two ways against central finite differences: the
hand-derived closed form below, and autograd. Loss implementations can be
swapped in through :class:`LossImpl`, which is how a deliberately broken
loss is shown to fail the suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from . import losses, oracle
from .core import DualEmbeddings, LabelSpace, concat_mixed
from .networks import EncoderSpec, init_bundle

FD_STEP = 1e-5
GRAD_TOL = 1e-4
ORACLE_TOL = 1e-6
PERMUTATION_TOL = 1e-9
TAU_LIMIT_TOL = 1e-3
CLOSED_FORM_TOL = 1e-9


@dataclass(frozen=True)
class LossImpl:
    sup_contrastive: Callable = losses.sup_contrastive
    dscl_comb: Callable = losses.dscl_comb
    dscl_ind: Callable = losses.dscl_ind
    ce_dis: Callable = losses.ce_dis


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured {self.measured:.3e} (threshold {self.threshold:.0e}) {self.detail}".rstrip()


@dataclass
class Report:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def render(self) -> str:
        return "\n".join(c.line() for c in self.checks)


# --------------------------------------------------------------------------
# closed-form gradients (numpy, float64)


def _scl_grad(z: np.ndarray, labels: np.ndarray, groups: np.ndarray, anchors: np.ndarray, tau: float) -> np.ndarray:
    b = len(z)
    sims = z @ z.T / tau
    np.fill_diagonal(sims, -np.inf)
    q = np.exp(sims - sims.max(axis=1, keepdims=True))
    q /= q.sum(axis=1, keepdims=True)
    pos = (labels[:, None] == labels[None, :]) & (groups[:, None] == groups[None, :]) & ~np.eye(b, dtype=bool)
    pos &= anchors[:, None]
    n_pos = pos.sum(axis=1)
    contributing = n_pos > 0
    if not contributing.any():
        return np.zeros_like(z)
    g = np.zeros((b, b))
    g[contributing] = q[contributing] - pos[contributing] / n_pos[contributing, None]
    g /= tau * contributing.sum()
    return (g + g.T) @ z


def grad_sup_contrastive(z, labels, tau):
    n = len(z)
    return _scl_grad(z, labels, np.zeros(n, int), np.ones(n, bool), tau)


def grad_dscl_comb(z_v, z_s, y, yd, num_classes, tau):
    n = len(z_v)
    grad = grad_sup_contrastive(np.vstack([z_v, z_s]), np.concatenate([y, yd + num_classes]), tau)
    return grad[:n], grad[n:]


def grad_dscl_ind(z_v, z_s, y, yd, tau):
    n = len(z_v)
    z = np.vstack([z_s, z_v])
    labels = np.concatenate([yd, y])
    groups = np.repeat([0, 1], n)
    grad = _scl_grad(z, labels, groups, groups == 0, tau) + _scl_grad(z, labels, groups, groups == 1, tau)
    return grad[n:], grad[:n]


def grad_cross_entropy(logits, targets):
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(targets)), targets] -= 1
    return p / len(targets)


# --------------------------------------------------------------------------
# finite differences


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def _autograd(f: Callable[[torch.Tensor], torch.Tensor], x: np.ndarray) -> np.ndarray:
    t = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    f(t).backward()
    return t.grad.numpy()


def _unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _t(a, dtype=torch.float64):
    return torch.tensor(a, dtype=dtype)


def _lt(a):
    return torch.tensor(a, dtype=torch.long)


# --------------------------------------------------------------------------
# individual checks


def check_oracle(impl: LossImpl, n_batches: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = {"sup_contrastive": 0.0, "dscl_comb": 0.0, "dscl_ind": 0.0}
    started = time.perf_counter()
    for _ in range(n_batches):
        b, d = int(rng.integers(4, 33)), int(rng.integers(2, 17))
        k, m = int(rng.integers(2, 8)), int(rng.integers(2, 6))
        tau = float(rng.uniform(0.05, 1.0))
        z_v, z_s = _unit_rows(rng, b, d), _unit_rows(rng, b, d)
        y, yd = rng.integers(0, k, b), rng.integers(0, m, b)
        emb = DualEmbeddings(_t(z_v), _t(z_s), _lt(y), _lt(yd))
        pairs = {
            "sup_contrastive": (float(impl.sup_contrastive(_t(z_v), _lt(y), tau)), oracle.oracle_scl(z_v, y, tau)),
            "dscl_comb": (float(impl.dscl_comb(emb, LabelSpace(k, m), tau)),
                          oracle.oracle_dscl_comb(z_v, z_s, y, yd, k, tau)),
            "dscl_ind": (float(impl.dscl_ind(emb, tau)), oracle.oracle_dscl_ind(z_v, z_s, y, yd, tau)),
        }
        for name, (fast, slow) in pairs.items():
            worst[name] = max(worst[name], abs(fast - slow))
    elapsed = time.perf_counter() - started
    return [CheckResult(f"oracle_equivalence/{name}", err < ORACLE_TOL, err, ORACLE_TOL,
                        f"over {n_batches} random batches", elapsed) for name, err in worst.items()]


def four_point_example():
    z = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], dtype=torch.float64)
    return z, torch.tensor([0, 0, 1, 1])


def check_closed_forms(impl: LossImpl) -> list[CheckResult]:
    expected = math.log(1 + 2 / math.e)
    z, labels = four_point_example()
    scl = float(impl.sup_contrastive(z, labels, 1.0))
    one_v = torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64)
    one_s = torch.tensor([[0.0, 1.0], [0.0, 1.0]], dtype=torch.float64)
    emb = DualEmbeddings(one_v, one_s, torch.tensor([0, 0]), torch.tensor([0, 0]))
    comb = float(impl.dscl_comb(emb, LabelSpace(1, 1), 1.0))
    ind = float(impl.dscl_ind(emb, 1.0))
    ce = float(impl.ce_dis(torch.zeros(3, 7, dtype=torch.float64), torch.zeros(3, 4, dtype=torch.float64),
                           torch.tensor([0, 3, 6]), torch.tensor([1, 2, 3])))
    cases = [
        ("closed_form/four_point_scl", scl, expected),
        ("closed_form/dscl_comb_pair", comb, expected),
        ("closed_form/dscl_ind_pair", ind, 2 * expected),
        ("closed_form/uniform_ce_dis", ce, math.log(7) + math.log(4)),
    ]
    return [CheckResult(name, abs(got - want) <= CLOSED_FORM_TOL, abs(got - want), CLOSED_FORM_TOL,
                        f"value {got:.9f}, expected {want:.9f}") for name, got, want in cases]


def check_gradients(impl: LossImpl, n_instances: int = 20, seed: int = 1) -> list[CheckResult]:
    """Closed-form and autograd gradients against central differences."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def record(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    started = time.perf_counter()
    for _ in range(n_instances):
        n, d = int(rng.integers(4, 11)), int(rng.integers(2, 7))
        k, m = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        tau = float(rng.uniform(0.1, 1.0))
        z_v, z_s = _unit_rows(rng, n, d), _unit_rows(rng, n, d)
        y, yd = rng.integers(0, k, n), rng.integers(0, m, n)
        y_t, yd_t = _lt(y), _lt(yd)

        def scl_f(z):
            return impl.sup_contrastive(z, y_t, tau, validate=False)

        fd = finite_difference(lambda z: float(scl_f(_t(z))), z_v.copy())
        record("gradient/sup_contrastive/closed_form", relative_error(grad_sup_contrastive(z_v, y, tau), fd))
        record("gradient/sup_contrastive/autograd", relative_error(_autograd(scl_f, z_v), fd))

        both = np.vstack([z_v, z_s])

        def comb_f(zz):
            emb = DualEmbeddings(zz[:n], zz[n:], y_t, yd_t, validate=False)
            return impl.dscl_comb(emb, LabelSpace(k, m), tau, validate=False)

        def ind_f(zz):
            emb = DualEmbeddings(zz[:n], zz[n:], y_t, yd_t, validate=False)
            return impl.dscl_ind(emb, tau, validate=False)

        fd = finite_difference(lambda zz: float(comb_f(_t(zz))), both.copy())
        record("gradient/dscl_comb/closed_form", relative_error(np.vstack(grad_dscl_comb(z_v, z_s, y, yd, k, tau)), fd))
        record("gradient/dscl_comb/autograd", relative_error(_autograd(comb_f, both), fd))
        fd = finite_difference(lambda zz: float(ind_f(_t(zz))), both.copy())
        record("gradient/dscl_ind/closed_form", relative_error(np.vstack(grad_dscl_ind(z_v, z_s, y, yd, tau)), fd))
        record("gradient/dscl_ind/autograd", relative_error(_autograd(ind_f, both), fd))

        cl, dl = rng.normal(size=(n, k)) * 3, rng.normal(size=(n, m)) * 3
        logits = np.hstack([cl, dl])

        def ce_f(lg):
            return impl.ce_dis(lg[:, :k], lg[:, k:], y_t, yd_t)

        fd = finite_difference(lambda lg: float(ce_f(_t(lg))), logits.copy())
        analytic = np.hstack([grad_cross_entropy(cl, y), grad_cross_entropy(dl, yd)])
        record("gradient/ce_dis/closed_form", relative_error(analytic, fd))
        record("gradient/ce_dis/autograd", relative_error(_autograd(ce_f, logits), fd))
    elapsed = time.perf_counter() - started
    return [CheckResult(name, err < GRAD_TOL, err, GRAD_TOL, f"max relative error over {n_instances} instances",
                        elapsed) for name, err in worst.items()]


def check_invariants(impl: LossImpl, seed: int = 2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    # permutation invariance and nonnegativity
    drift, minimum = 0.0, math.inf
    for _ in range(20):
        n, d, tau = int(rng.integers(4, 17)), int(rng.integers(2, 9)), float(rng.uniform(0.05, 1.0))
        z_v, z_s = _t(_unit_rows(rng, n, d)), _t(_unit_rows(rng, n, d))
        y, yd = _lt(rng.integers(0, 3, n)), _lt(rng.integers(0, 3, n))
        perm = torch.as_tensor(rng.permutation(n))
        emb = DualEmbeddings(z_v, z_s, y, yd)
        pemb = DualEmbeddings(z_v[perm], z_s[perm], y[perm], yd[perm])
        space = LabelSpace(3, 3)
        values = [
            (impl.sup_contrastive(z_v, y, tau), impl.sup_contrastive(z_v[perm], y[perm], tau)),
            (impl.dscl_comb(emb, space, tau), impl.dscl_comb(pemb, space, tau)),
            (impl.dscl_ind(emb, tau), impl.dscl_ind(pemb, tau)),
        ]
        for a, b in values:
            drift = max(drift, abs(float(a) - float(b)))
            minimum = min(minimum, float(a), float(b))
    results.append(CheckResult("invariant/permutation", drift <= PERMUTATION_TOL, drift, PERMUTATION_TOL))
    results.append(CheckResult("invariant/nonnegative", minimum >= 0, max(0.0, -minimum), 0.0,
                               f"smallest loss {minimum:.3e}"))

    # anchors without positives are skipped; all skipped -> 0
    z = _t(_unit_rows(rng, 6, 4))
    distinct = abs(float(impl.sup_contrastive(z, torch.arange(6), 0.5)))
    emb = DualEmbeddings(z, _t(_unit_rows(rng, 6, 4)), torch.arange(6), torch.arange(6))
    distinct = max(distinct, abs(float(impl.dscl_ind(emb, 0.5))))
    # only rows 0 and 1 share a label, so only they contribute
    full = float(impl.sup_contrastive(z, torch.tensor([0, 0, 1, 2, 3, 4]), 0.5))
    sims = z.numpy() @ z.numpy().T / 0.5
    manual = np.mean([-sims[i, 1 - i] + np.log(np.exp(np.delete(sims[i], i)).sum()) for i in (0, 1)])
    results.append(CheckResult("invariant/empty_positive_skip", distinct == 0 and abs(full - manual) < ORACLE_TOL,
                               max(distinct, abs(full - manual)), ORACLE_TOL,
                               "all-distinct labels give 0; partial batches average contributing anchors"))

    # comb: class rows never positive for domain rows
    space = LabelSpace(7, 4)
    emb = DualEmbeddings(_t(_unit_rows(rng, 8, 3)), _t(_unit_rows(rng, 8, 3)),
                         _lt(rng.integers(0, 7, 8)), _lt(rng.integers(0, 4, 8)))
    _, labels = concat_mixed(emb, space)
    overlap = set(labels[:8].tolist()) & set(labels[8:].tolist())
    in_range = bool(labels.min() >= 0 and labels.max() < space.combined_size)
    results.append(CheckResult("invariant/comb_cross_type_never_positive", not overlap and in_range,
                               float(len(overlap)), 0.0, f"combined space size {space.combined_size}"))

    # tau -> infinity: every anchor term tends to log |A(i)|
    n = 12
    z = _t(_unit_rows(rng, n, 5))
    y = _lt(rng.integers(0, 3, n))
    limit_err = abs(float(impl.sup_contrastive(z, y, 1e6)) - math.log(n - 1))
    results.append(CheckResult("invariant/temperature_limit", limit_err < TAU_LIMIT_TOL, limit_err, TAU_LIMIT_TOL,
                               "tau = 1e6"))

    results.append(check_path_separation())
    return results


def check_path_separation(seed: int = 3) -> CheckResult:
    """Class logits must not depend on g_s, nor domain logits on g_v."""
    spec = EncoderSpec(embedding_dim=8, widths=(4, 8), image_size=8)
    bundle = init_bundle(spec, LabelSpace(3, 2), seed)
    images = torch.rand(4, 8, 8, 3, generator=torch.Generator().manual_seed(seed))
    leak = 0.0
    for which, foreign in ((0, bundle.g_s), (1, bundle.g_v)):
        bundle.zero_grad(set_to_none=True)
        logits = bundle.classify(bundle.encode(images))[which]
        logits.sum().backward()
        # no grad at all means the parameter is off the path
        leak = max(leak, max(float(p.grad.abs().max()) if p.grad is not None else 0.0
                             for p in foreign.parameters()))
    return CheckResult("invariant/path_separation", leak == 0.0, leak, 0.0, "exact zero cross-branch gradient")


def run_verification(impl: LossImpl | None = None, n_oracle: int = 100, n_gradient: int = 20) -> Report:
    impl = impl or LossImpl()
    report = Report()
    report.checks += check_oracle(impl, n_oracle)
    report.checks += check_closed_forms(impl)
    report.checks += check_gradients(impl, n_gradient)
    report.checks += check_invariants(impl)
    return report
