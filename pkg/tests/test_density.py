"""Density rasters: exact mass, bitwise-mergeable grids, temporal decimation."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posmap.density import (
    QUANTUM,
    DensityGrid,
    accumulate,
    collect,
    grid_shape,
    kde_raster,
    load_density,
    merge_rasters,
    save_density,
    silverman_bandwidth,
    zero_raster,
)
from posmap.errors import ConfigError, DataError
from posmap.mapping import Box3D, FrameMapResult, GroundObservation


def _obs(x, y, cls="pedestrian", ts=None, src="", oid=1):
    box = Box3D(center_x=x, center_y=y, yaw=0.0, width=0.5, length=0.6, height=1.75)
    return GroundObservation(class_name=cls, x=x, y=y, box=box,
                             annotation_id=oid, image_id=0, timestamp=ts, source=src)


def _frame(ts, src, obs=()):
    return FrameMapResult(observations=tuple(obs), out_of_extent=(), failures=(),
                          runtime_s=0.0, timestamp=ts, source=src)


def _scatter(extent, n, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform([0.3, 0.3], [extent.width - 0.3, extent.length - 0.3], (n, 2))
    # local -> world (extent rotation may be nonzero)
    c, s = math.cos(extent.rotation), math.sin(extent.rotation)
    return [
        _obs(extent.origin[0] + c * lx - s * ly,
             extent.origin[1] + s * lx + c * ly, oid=i)
        for i, (lx, ly) in enumerate(pts)
    ]


# -- mass ---------------------------------------------------------------


def test_mass_equals_observation_count(extent):
    obs = _scatter(extent, 37)
    grid = kde_raster(obs, extent, 0.5)
    assert abs(grid.mass() - 37.0) < 1e-6
    assert grid.total_count == 37


def test_mass_exact_at_the_boundary(extent):
    # kernels clipped by the extent edge lose no mass
    obs = [_obs(0.01, 0.01, oid=1), _obs(extent.width - 0.01, 31.99, oid=2)]
    grid = kde_raster(obs, extent, 0.5, bandwidth=1.0)
    assert abs(grid.mass() - 2.0) < 1e-9


def test_out_of_extent_and_filtered_classes_excluded(extent):
    obs = [
        _obs(2.0, 10.0, cls="pedestrian", oid=1),
        _obs(2.0, 40.0, cls="pedestrian", oid=2),  # outside
        _obs(2.0, 12.0, cls="cyclist", oid=3),
    ]
    grid = kde_raster(obs, extent, 0.5, classes=("pedestrian",))
    assert grid.total_count == 1
    assert abs(grid.mass() - 1.0) < 1e-9
    assert grid.classes == ("pedestrian",)

    both = kde_raster(obs, extent, 0.5)
    assert both.total_count == 2
    assert both.classes == ("cyclist", "pedestrian")


# -- merge monoid ----------------------------------------------------------


def test_merge_is_linear_in_observations(extent):
    a, b = _obs(1.0, 5.0, oid=1), _obs(3.0, 20.0, oid=2)
    h = 0.8
    combined = kde_raster([a, b], extent, 0.5, bandwidth=h)
    merged = merge_rasters(
        kde_raster([a], extent, 0.5, bandwidth=h),
        kde_raster([b], extent, 0.5, bandwidth=h),
    )
    assert np.array_equal(combined.values, merged.values)
    assert merged.total_count == 2


def test_merge_associative_and_commutative_bitwise(extent):
    group = _scatter(extent, 30, seed=5)
    h = 0.7
    parts = [
        kde_raster(group[:10], extent, 0.5, bandwidth=h),
        kde_raster(group[10:20], extent, 0.5, bandwidth=h),
        kde_raster(group[20:], extent, 0.5, bandwidth=h),
    ]
    a, b, c = parts
    left = merge_rasters(merge_rasters(a, b), c)
    right = merge_rasters(a, merge_rasters(b, c))
    assert np.array_equal(left.values, right.values)
    assert np.array_equal(
        merge_rasters(a, b).values, merge_rasters(b, a).values
    )
    single = kde_raster(group, extent, 0.5, bandwidth=h)
    assert np.array_equal(left.values, single.values)


def test_zero_raster_is_identity(extent):
    grid = kde_raster(_scatter(extent, 8, seed=2), extent, 0.5, bandwidth=0.6)
    z = zero_raster(extent, 0.5)
    out = merge_rasters(z, grid)
    assert np.array_equal(out.values, grid.values)
    assert out.bandwidth == grid.bandwidth
    assert out.total_count == grid.total_count
    assert out.classes == grid.classes


def test_merge_rejects_mismatched_grids(extent, roadside_extent):
    with pytest.raises(ConfigError, match="different grids"):
        merge_rasters(zero_raster(extent, 0.5), zero_raster(roadside_extent, 0.5))
    with pytest.raises(ConfigError, match="different grids"):
        merge_rasters(zero_raster(extent, 0.5), zero_raster(extent, 0.25))


def test_values_are_quantum_multiples(extent):
    grid = kde_raster(_scatter(extent, 12, seed=9), extent, 0.5)
    quotient = grid.values / QUANTUM
    assert np.array_equal(quotient, np.round(quotient))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_merge_matches_single_pass(n, seed):
    extent = __import__("posmap").MapExtent(origin=(0.0, 0.0), rotation=0.0,
                                            width=4.5, length=32.0)
    obs = _scatter(extent, n, seed=seed)
    h = 0.9
    k = n // 2
    merged = merge_rasters(
        kde_raster(obs[:k], extent, 0.5, bandwidth=h),
        kde_raster(obs[k:], extent, 0.5, bandwidth=h),
    )
    single = kde_raster(obs, extent, 0.5, bandwidth=h)
    assert np.array_equal(merged.values, single.values)


# -- bandwidth ---------------------------------------------------------------


def test_silverman_bandwidth_formula():
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 1.0], [3.0, 4.0], [1.5, 2.5]])
    sx = np.std(pts[:, 0], ddof=1)
    sy = np.std(pts[:, 1], ddof=1)
    f = len(pts) ** (-1.0 / 6.0)
    assert silverman_bandwidth(pts) == pytest.approx(math.sqrt(sx * f * sy * f))


def test_silverman_bandwidth_degenerate_cases():
    assert silverman_bandwidth(np.empty((0, 2))) == 0.0
    assert silverman_bandwidth(np.array([[1.0, 1.0]])) == 0.0
    collinear = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])  # sx = 0
    assert silverman_bandwidth(collinear) == 0.0


def test_bandwidth_floor_is_half_a_cell(extent):
    grid = kde_raster([_obs(2.0, 10.0)], extent, 0.5)  # single point: rule gives 0
    assert grid.bandwidth == 0.25


# -- grid shape ---------------------------------------------------------------


def test_grid_shape(extent):
    assert grid_shape(extent, 0.5) == (64, 9)
    assert grid_shape(extent, 1.0) == (32, 5)  # width 4.5 rounds up
    with pytest.raises(ConfigError):
        grid_shape(extent, 0.0)


# -- temporal accumulation -----------------------------------------------------


def test_accumulate_first_frame_wins_per_window():
    early = _frame(3.1, "cam0", [_obs(1.0, 1.0, ts=3.1)])
    late = _frame(3.9, "cam0", [_obs(2.0, 2.0, ts=3.9)])
    store: dict = {}
    accumulate(store, [early, late], sample_rate_hz=1.0)
    assert list(store) == [("cam0", 3)]
    assert store[("cam0", 3)] == early.observations


def test_accumulate_empty_frame_claims_window():
    store: dict = {}
    accumulate(store, [_frame(5.0, "cam0"), _frame(5.5, "cam0", [_obs(1.0, 1.0)])],
               sample_rate_hz=1.0)
    assert store[("cam0", 5)] == ()


def test_accumulate_sources_are_independent():
    store: dict = {}
    accumulate(store, [_frame(0.2, "a", [_obs(1.0, 1.0)]),
                       _frame(0.7, "b", [_obs(2.0, 2.0)])])
    assert set(store) == {("a", 0), ("b", 0)}


def test_accumulate_decimates_to_sample_rate():
    # 97.3 seconds of 10 fps video decimated at 1 Hz
    duration = 97.3
    frames = [_frame(i / 10.0, "cam0") for i in range(int(duration * 10))]
    store: dict = {}
    accumulate(store, frames, sample_rate_hz=1.0)
    assert len(store) <= math.ceil(duration)


def test_accumulate_errors():
    with pytest.raises(ConfigError, match="sample rate"):
        accumulate({}, [], sample_rate_hz=0.0)
    with pytest.raises(DataError, match="timestamp"):
        accumulate({}, [_frame(None, "cam0")])


def test_collect_orders_by_source_then_window():
    store = {
        ("b", 0): (_obs(1.0, 1.0, oid=3),),
        ("a", 1): (_obs(1.0, 1.0, oid=2),),
        ("a", 0): (_obs(1.0, 1.0, oid=1),),
    }
    assert [o.annotation_id for o in collect(store)] == [1, 2, 3]


# -- persistence -----------------------------------------------------------------


def test_density_save_load_round_trip(extent, tmp_path):
    obs = _scatter(extent, 15, seed=3)
    for i, o in enumerate(obs):
        obs[i] = GroundObservation(**{**o.__dict__, "timestamp": float(i)})
    grid = kde_raster(obs, extent, 0.5)
    paths = save_density(tmp_path / "dens", grid)
    assert set(paths) == {"csv", "json", "pgm"}

    loaded = load_density(tmp_path / "dens")
    assert np.array_equal(loaded.values, grid.values)
    assert loaded.extent == grid.extent
    assert loaded.cell_size == grid.cell_size
    assert loaded.bandwidth == grid.bandwidth
    assert loaded.total_count == grid.total_count
    assert loaded.time_window == grid.time_window
    assert loaded.classes == grid.classes


def test_density_save_is_deterministic(extent, tmp_path):
    grid = kde_raster(_scatter(extent, 9, seed=4), extent, 0.5)
    save_density(tmp_path / "a", grid)
    save_density(tmp_path / "b", grid)
    for ext in (".csv", ".json", ".pgm"):
        assert (tmp_path / "a").with_suffix(ext).read_bytes() == \
               (tmp_path / "b").with_suffix(ext).read_bytes()


def test_density_pgm_is_valid(extent, tmp_path):
    grid = kde_raster(_scatter(extent, 5, seed=6), extent, 0.5)
    paths = save_density(tmp_path / "img", grid)
    lines = paths["pgm"].read_text().splitlines()
    assert lines[0] == "P2"
    nx, ny = (int(v) for v in lines[1].split())
    assert (ny, nx) == grid.shape
    assert lines[2] == "255"
    assert len(lines) == 3 + ny


def test_density_load_errors(extent, tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_density(tmp_path / "nothing")

    grid = zero_raster(extent, 0.5)
    save_density(tmp_path / "bad", grid)
    csv_path = (tmp_path / "bad").with_suffix(".csv")
    lines = csv_path.read_text().splitlines()
    csv_path.write_text("\n".join(lines[:-1]) + "\n")  # drop a row
    with pytest.raises(DataError, match="shape"):
        load_density(tmp_path / "bad")
