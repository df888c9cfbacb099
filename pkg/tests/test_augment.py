import numpy as np
import pytest
import torch

from cddg.augment import AugmentConfig, augment, two_views


@pytest.fixture
def images():
    return torch.rand(4, 16, 16, 3, generator=torch.Generator().manual_seed(0))


def test_two_views_layout(images):
    views = two_views(images, np.random.default_rng(0), AugmentConfig())
    assert views.shape == (8, 16, 16, 3)
    assert views.min() >= 0 and views.max() <= 1
    assert not torch.equal(views[:4], views[4:])


def test_disabled_is_identity(images):
    out = augment(images, np.random.default_rng(0), AugmentConfig(enabled=False))
    assert torch.equal(out, images)


def test_identity_second_view(images):
    views = two_views(images, np.random.default_rng(0), AugmentConfig(identity_second_view=True))
    assert torch.equal(views[4:], images)


def test_seeded(images):
    a = two_views(images, np.random.default_rng([1, 2]), AugmentConfig())
    b = two_views(images, np.random.default_rng([1, 2]), AugmentConfig())
    assert torch.equal(a, b)


def test_invalid_config():
    with pytest.raises(ValueError):
        AugmentConfig(crop_scale=(0.0, 1.0))
    with pytest.raises(ValueError):
        AugmentConfig(flip_prob=1.5)
