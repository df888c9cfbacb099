import pytest
import torch

from cddg.augment import AugmentConfig
from cddg.data import SyntheticSpec, generate_synthetic
from cddg.networks import EncoderSpec
from cddg.training import TrainConfig


@pytest.fixture(scope="session")
def tiny_ds():
    """3 classes x 3 domains x 8 images: big enough to split, small enough to train in seconds."""
    return generate_synthetic(SyntheticSpec(num_classes=3, num_domains=3, n_per_cell=8, image_size=16, seed=0))


@pytest.fixture
def tiny_spec():
    return EncoderSpec(widths=(4, 8), embedding_dim=8)


@pytest.fixture
def tiny_config(tiny_spec):
    return TrainConfig(encoder=tiny_spec, batch_size=8, steps=6, eval_every=3, augmentation=AugmentConfig())


def unit_rows(n, d, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(n, d, generator=g, dtype=dtype)
    return z / z.norm(dim=1, keepdim=True)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
