import pytest
import torch

from cddg.core import (AugmentedBatch, ContractError, DualEmbeddings, LabelRangeError, LabelSpace, ShapeError,
                       check_unit_rows, combined_label, concat_mixed)

from conftest import unit_rows


def test_combined_labels_are_disjoint():
    space = LabelSpace(7, 4)
    assert combined_label(space, "class", 3) == 3
    assert combined_label(space, "domain", 0) == 7
    assert combined_label(space, "domain", 3) == 10
    assert space.combined_size == 11


def test_combined_label_roundtrip():
    space = LabelSpace(5, 4)
    for kind, n in (("class", 5), ("domain", 4)):
        for raw in range(n):
            assert space.decode(space.combined_label(kind, raw)) == (kind, raw)


@pytest.mark.parametrize("kind,raw", [("class", 5), ("class", -1), ("domain", 4)])
def test_combined_label_out_of_range(kind, raw):
    with pytest.raises(LabelRangeError):
        LabelSpace(5, 4).combined_label(kind, raw)


def test_decode_out_of_range():
    with pytest.raises(LabelRangeError):
        LabelSpace(2, 2).decode(4)


def test_augmented_batch_pairs_rows():
    images = torch.zeros(4, 8, 8, 3)
    batch = AugmentedBatch(images, torch.tensor([0, 1, 0, 1]), torch.tensor([2, 2, 2, 2]))
    assert batch.n == 2
    with pytest.raises(ContractError):
        AugmentedBatch(images, torch.tensor([0, 1, 1, 0]), torch.tensor([2, 2, 2, 2]))
    with pytest.raises(ShapeError):
        AugmentedBatch(torch.zeros(3, 8, 8, 3), torch.zeros(3, dtype=torch.long), torch.zeros(3, dtype=torch.long))


def test_unit_norm_contract():
    check_unit_rows(unit_rows(5, 3))
    with pytest.raises(ContractError):
        check_unit_rows(2 * unit_rows(5, 3))
    with pytest.raises(ShapeError):
        check_unit_rows(torch.ones(3))


def test_dual_embeddings_shape_mismatch():
    with pytest.raises(ShapeError):
        DualEmbeddings(unit_rows(4, 3), unit_rows(4, 2), torch.zeros(4, dtype=torch.long),
                       torch.zeros(4, dtype=torch.long))


def test_concat_mixed_layout():
    space = LabelSpace(3, 2)
    zv, zs = unit_rows(2, 4, 0), unit_rows(2, 4, 1)
    d = DualEmbeddings(zv, zs, torch.tensor([0, 2]), torch.tensor([1, 0]))
    z, labels = concat_mixed(d, space)
    assert torch.equal(z[:2], zv) and torch.equal(z[2:], zs)
    assert labels.tolist() == [0, 2, 4, 3]
