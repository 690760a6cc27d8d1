import pytest
import torch

from backend.placement.config import ModelConfig, RunConfig
from backend.placement.logs import configure_logging
from backend.placement.models.geometry import ImageDims, ScaleGrid
from backend.placement.services.synthworld import generate_dataset

SMALL_SCALES = [0.2, 0.25, 0.3, 0.35]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True, scope="session")
def _quiet_logging():
    configure_logging("WARNING", json=True, force=True)
    torch.use_deterministic_algorithms(True)


@pytest.fixture
def grid():
    return ScaleGrid()


@pytest.fixture
def dims64():
    return ImageDims.square(64)


@pytest.fixture
def mini_model_cfg():
    """Gradient-check sized network: 16x16 input, k=2, widths 8, one layer and head, two scales."""
    return ModelConfig(input_size=16, k=2, d_enc=8, d_t=8, n_layers=1, n_heads=1, c=2)


@pytest.fixture
def small_run_cfg():
    """A 32x32 run that trains in seconds."""
    return RunConfig.model_validate(
        {
            "model": {"input_size": 32, "k": 2, "d_enc": 8, "d_t": 16, "n_layers": 1, "n_heads": 2, "c": 4},
            "train": {"batch_size": 4, "total_steps": 6, "eval_every": 3, "seed": 3},
            "grid": {"values": SMALL_SCALES},
        }
    )


@pytest.fixture(scope="session")
def small_scenes():
    return generate_dataset(11, 8, dims=ImageDims.square(32), grid=ScaleGrid(values=SMALL_SCALES))


@pytest.fixture(scope="session")
def scenes64():
    return generate_dataset(5, 6)
