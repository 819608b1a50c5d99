import pytest
import torch

from latent_restoration.config import Config
from latent_restoration.models import AutoEncoderConfig, AutoEncoderKind, FlowConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance trend")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def float64(monkeypatch):
    monkeypatch.setattr(Config, "DTYPE", "float64")
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield torch.float64
    torch.set_default_dtype(previous)


@pytest.fixture
def linear_ae_config():
    return AutoEncoderConfig(
        kind=AutoEncoderKind.LINEAR, image_channels=1, latent_channels=4, factor=2,
        init_identity=True, epochs=0,
    )


@pytest.fixture
def small_flow():
    return FlowConfig(K=3, delta_t=0.05, field_widths=(4, 8, 8), coarse_width=4, coarse_blocks=1, expansion=2)


@pytest.fixture
def debug_numerics(monkeypatch):
    monkeypatch.setattr(Config, "DEBUG_NUMERICS", True)
    return True
