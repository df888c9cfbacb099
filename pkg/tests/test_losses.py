import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from cddg.core import ContractError, DualEmbeddings, LabelRangeError, LabelSpace
from cddg.losses import LossConfig, ce_dis, dscl, dscl_comb, dscl_ind, sup_contrastive, total_loss
from cddg.oracle import oracle_dscl_comb, oracle_dscl_ind, oracle_scl
from cddg.verify import four_point_example

from conftest import unit_rows

FOUR_POINT = math.log(1 + 2 / math.e)


def test_four_point_closed_form():
    z, labels = four_point_example()
    assert float(sup_contrastive(z, labels, 1.0)) == pytest.approx(FOUR_POINT, abs=1e-9)
    assert FOUR_POINT == pytest.approx(0.551444, abs=1e-6)


def test_uniform_ce_dis():
    loss = ce_dis(torch.zeros(5, 7, dtype=torch.float64), torch.zeros(5, 4, dtype=torch.float64),
                  torch.tensor([0, 1, 2, 3, 6]), torch.tensor([0, 1, 2, 3, 0]))
    assert float(loss) == pytest.approx(math.log(7) + math.log(4), abs=1e-9)
    assert float(loss) == pytest.approx(3.332205, abs=1e-6)


def test_ce_dis_rejects_bad_labels():
    with pytest.raises(LabelRangeError):
        ce_dis(torch.zeros(2, 3), torch.zeros(2, 2), torch.tensor([0, 3]), torch.tensor([0, 1]))


def test_no_positive_anchor_is_skipped():
    z = unit_rows(3, 4)
    # only anchors 0 and 1 share a label; anchor 2 contributes nothing
    full = float(sup_contrastive(z, torch.tensor([0, 0, 1]), 0.5))
    s = (z @ z.T / 0.5).numpy()
    expect = []
    for i, j in ((0, 1), (1, 0)):
        others = [k for k in range(3) if k != i]
        expect.append(-(s[i, j] - np.log(np.exp(s[i, others]).sum())))
    assert full == pytest.approx(np.mean(expect), abs=1e-12)
    assert float(sup_contrastive(z, torch.tensor([0, 1, 2]), 0.5)) == 0.0


def test_rejects_non_unit_rows():
    with pytest.raises(ContractError):
        sup_contrastive(torch.ones(4, 2, dtype=torch.float64), torch.tensor([0, 0, 1, 1]), 0.1)


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        LossConfig(temperature=0.0)


def test_large_temperature_limit():
    z = unit_rows(6, 3)
    labels = torch.tensor([0, 0, 0, 1, 1, 2])
    # with every similarity equal each anchor scores -log(1/(B-1))
    assert float(sup_contrastive(z, labels, 1e6)) == pytest.approx(math.log(5), abs=1e-3)


def test_numerically_stable_at_small_temperature():
    z = unit_rows(8, 4)
    loss = sup_contrastive(z, torch.tensor([0, 0, 1, 1, 2, 2, 3, 3]), 1e-4)
    assert torch.isfinite(loss)


def test_comb_never_pairs_across_types():
    # identical Z_v and Z_s rows with colliding raw labels must not become positives
    space = LabelSpace(2, 2)
    z = unit_rows(2, 3)
    d = DualEmbeddings(z, z.clone(), torch.tensor([0, 1]), torch.tensor([0, 1]))
    mixed = dscl_comb(d, space, 0.5)
    assert float(mixed) == 0.0  # every combined label is unique so no anchor has positives


def test_ind_pair_closed_form():
    zv = torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64)
    zs = torch.tensor([[0.0, 1.0], [0.0, 1.0]], dtype=torch.float64)
    d = DualEmbeddings(zv, zs, torch.tensor([0, 0]), torch.tensor([0, 0]))
    assert float(dscl_ind(d, 1.0)) == pytest.approx(2 * FOUR_POINT, abs=1e-9)
    assert float(dscl_comb(d, LabelSpace(1, 1), 1.0)) == pytest.approx(FOUR_POINT, abs=1e-9)


def test_dscl_dispatch_and_total():
    space = LabelSpace(2, 2)
    d = DualEmbeddings(unit_rows(6, 4, 1), unit_rows(6, 4, 2), torch.tensor([0, 1, 0, 1, 0, 1]),
                       torch.tensor([0, 0, 1, 1, 0, 1]))
    assert float(dscl(d, space, LossConfig(variant="comb"))) == float(dscl_comb(d, space, 0.1))
    assert float(dscl(d, space, LossConfig(variant="ind"))) == float(dscl_ind(d, 0.1))
    assert float(dscl(d, space, LossConfig(variant="none"))) == 0.0
    assert float(total_loss(torch.tensor(1.0), torch.tensor(2.0), 0.5)) == 2.0


labels_st = st.integers(4, 20).flatmap(
    lambda b: st.tuples(st.just(b), st.lists(st.integers(0, 3), min_size=b, max_size=b)))


@settings(max_examples=30, deadline=None)
@given(labels_st, st.integers(2, 8), st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_matches_oracle(bl, dim, seed, tau):
    b, labels = bl
    y = torch.tensor(labels)
    yd = torch.tensor(labels[::-1])
    zv, zs = unit_rows(b, dim, seed), unit_rows(b, dim, seed + 1)
    d = DualEmbeddings(zv, zs, y, yd)
    assert float(sup_contrastive(zv, y, tau)) == pytest.approx(oracle_scl(zv.numpy(), labels, tau), abs=1e-9)
    assert float(dscl_comb(d, LabelSpace(4, 4), tau)) == pytest.approx(
        oracle_dscl_comb(zv.numpy(), zs.numpy(), labels, labels[::-1], 4, tau), abs=1e-9)
    assert float(dscl_ind(d, tau)) == pytest.approx(
        oracle_dscl_ind(zv.numpy(), zs.numpy(), labels, labels[::-1], tau), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(labels_st, st.integers(0, 10_000))
def test_permutation_invariance_and_nonnegativity(bl, seed):
    b, labels = bl
    z, y = unit_rows(b, 5, seed), torch.tensor(labels)
    perm = torch.from_numpy(np.random.default_rng(seed).permutation(b))
    a, p = float(sup_contrastive(z, y, 0.2)), float(sup_contrastive(z[perm], y[perm], 0.2))
    assert a >= 0.0
    assert abs(a - p) <= 1e-9
