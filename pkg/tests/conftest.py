import numpy as np
import pytest

from imuloc.config import (
    ChannelConfig,
    ControlPointConfig,
    FloorConfig,
    ScenarioConfig,
    WalkerConfig,
)


def make_scenario(**over) -> ScenarioConfig:
    """Small desk-scale scenario used by most tests."""
    cfg = ScenarioConfig(
        name="desk",
        floor=FloorConfig(width=6.0, height=5.0, ue_height=1.0, trp_height=3.0,
                          trps=[[0.5, 0.5], [5.5, 0.5], [3.0, 4.5]]),
        walker=WalkerConfig(n_samples=400, step_size=0.034, step_dt=0.16),
        channel=ChannelConfig(n_reflections=2, snr_db=20.0),
        control_points=ControlPointConfig(indices=[0], radius=0.20),
    )
    for key, value in over.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


@pytest.fixture
def scenario():
    return make_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
