from dataclasses import replace

import torch

from cddg.verify import LossImpl, check_closed_forms, check_gradients, check_oracle, run_verification


def test_reference_implementation_passes():
    report = run_verification(n_oracle=20, n_gradient=5)
    assert report.passed, report.render()


def _sign_flipped_scl(z, labels, temperature, *, validate=True):
    """Mutant: subtracts the log-denominator with the wrong sign."""
    sim = z @ z.T / temperature
    n = z.shape[0]
    eye = torch.eye(n, dtype=torch.bool)
    pos = (labels[:, None] == labels[None, :]) & ~eye
    denom = torch.logsumexp(sim.masked_fill(eye, float("-inf")), dim=1)
    has = pos.sum(1) > 0
    per = -((sim * pos).sum(1) / pos.sum(1).clamp(min=1) + denom)
    return per[has].mean() if has.any() else sim.sum() * 0


def test_mutation_is_caught():
    mutant = replace(LossImpl(), sup_contrastive=_sign_flipped_scl)
    assert not all(c.passed for c in check_gradients(mutant, n_instances=3)
                   if c.name.startswith("gradient/sup_contrastive"))
    assert not all(c.passed for c in check_oracle(mutant, n_batches=5) if "sup_contrastive" in c.name)
    assert not all(c.passed for c in check_closed_forms(mutant))


def test_report_lines_are_labelled():
    for c in check_closed_forms(LossImpl()):
        assert c.line().startswith("[PASS]")
