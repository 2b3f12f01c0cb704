from __future__ import annotations

import numpy as np
import pytest

from posmap import MapExtent, SimConfig, default_camera
from posmap.simulate import simulate


@pytest.fixture()
def extent() -> MapExtent:
    return MapExtent(origin=(0.0, 0.0), rotation=0.0, width=4.5, length=32.0)


@pytest.fixture()
def camera(extent):
    return default_camera(extent)


@pytest.fixture(scope="session")
def roadside_extent() -> MapExtent:
    return MapExtent(origin=(12.0, -3.0), rotation=0.35, width=4.5, length=32.0)


@pytest.fixture(scope="session")
def sim_noisy(roadside_extent):
    """A moderately noisy 20-frame scene shared by evaluation tests."""
    cam = default_camera(roadside_extent)
    config = SimConfig(
        extent=roadside_extent,
        camera=cam,
        n_agents=10,
        cyclist_fraction=0.3,
        seed=42,
        noise_px=2.0,
        miss_rate=0.2,
        confusion_rate=0.1,
    )
    return simulate(config, 20)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
