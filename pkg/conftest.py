# conftest.py
import numpy as np
import pytest

from afidaf.blocks import BlockConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: entrenamientos completos (varios minutos en CPU)")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """Bloque de 4 canales con grupos de 2, suficiente para chequeos por diferencias finitas"""
    def make(kind="afidaf", **overrides):
        values = dict(channels=4, shuffle_groups=2, mask_groups=2, mlp_ratio=2, mlp_groups=2,
                      dw_kernel=3, dwd_kernel=3, dwd_dilation=2)
        values.update(overrides)
        return BlockConfig(kind=kind, **values)
    return make
