"""Density rasters over a map extent.

Observations are smoothed with an isotropic Gaussian kernel onto a regular
grid of ground cells. Two properties are load-bearing for downstream use:

- **Exact mass.** Each kernel is renormalized over the cells it actually
  covers, so clipping at the extent boundary loses no mass: the raster
  integrates to the observation count to within quantization error.
- **Mergeable rasters.** Every kernel's contribution is quantized to an
  integer multiple of 2**-40 persons/m^2 before accumulation. Sums of such
  multiples are exact in double precision (up to ~8000 persons/m^2), which
  makes raster merging bitwise associative and commutative: per-day or
  per-camera rasters can be combined in any order and match a single-pass
  computation bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .mapping import FrameMapResult, MapExtent, GroundObservation

__all__ = [
    "DensityGrid",
    "accumulate",
    "collect",
    "silverman_bandwidth",
    "kde_raster",
    "zero_raster",
    "merge_rasters",
    "save_density",
    "load_density",
]

QUANTUM = 2.0**-40
_TRUNCATE_SIGMAS = 5.0


@dataclass(frozen=True)
class DensityGrid:
    """A gridded density field over a map extent.

    ``values[row, col]`` is persons/m^2 at the cell whose local-frame center
    is ``((col + 0.5) * cell_size, (row + 0.5) * cell_size)``; row 0 is the
    extent's local y = 0 edge. The grid is ceil-sized, so it may overhang
    the extent by a partial cell on the far edges.
    """

    extent: MapExtent
    cell_size: float
    values: np.ndarray
    bandwidth: float | None
    total_count: int
    time_window: tuple[float, float] | None
    classes: tuple[str, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def mass(self) -> float:
        """Integral of the raster, in persons."""
        return float(self.values.sum()) * self.cell_size**2


def grid_shape(extent: MapExtent, cell_size: float) -> tuple[int, int]:
    if cell_size <= 0:
        raise ConfigError(f"cell size must be positive, got {cell_size}")
    return (
        int(math.ceil(extent.length / cell_size - 1e-12)),
        int(math.ceil(extent.width / cell_size - 1e-12)),
    )


# ---------------------------------------------------------------------------
# temporal accumulation
# ---------------------------------------------------------------------------


def accumulate(
    store: dict[tuple[str, int], tuple[GroundObservation, ...]],
    frames: list[FrameMapResult],
    sample_rate_hz: float = 1.0,
) -> dict[tuple[str, int], tuple[GroundObservation, ...]]:
    """Fold mapped frames into a subsampled observation store.

    Long recordings are subsampled to at most one frame per source per
    1/rate-second window; the first frame seen in a window claims it (even
    when it holds no people, so a later frame cannot sneak into the same
    window). The store is mutated in place and returned to allow chaining.
    """
    if sample_rate_hz <= 0:
        raise ConfigError(f"sample rate must be positive, got {sample_rate_hz}")
    for frame in frames:
        if frame.timestamp is None:
            raise DataError("cannot accumulate a frame without a timestamp")
        window = int(math.floor(frame.timestamp * sample_rate_hz + 1e-9))
        key = (frame.source, window)
        if key not in store:
            store[key] = frame.observations
    return store


def collect(store: dict[tuple[str, int], tuple[GroundObservation, ...]]) -> list[GroundObservation]:
    """Flatten a store into one observation list, in (source, window) order."""
    out: list[GroundObservation] = []
    for key in sorted(store):
        out.extend(store[key])
    return out


# ---------------------------------------------------------------------------
# kernel density estimation
# ---------------------------------------------------------------------------


def silverman_bandwidth(local_xy: np.ndarray) -> float:
    """Rule-of-thumb isotropic bandwidth for 2D data.

    Geometric mean of the per-axis rules sigma_ax * n^(-1/6); zero when
    there are fewer than two points (callers floor it to half a cell).
    """
    pts = np.asarray(local_xy, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 2:
        return 0.0
    sx = float(np.std(pts[:, 0], ddof=1))
    sy = float(np.std(pts[:, 1], ddof=1))
    factor = n ** (-1.0 / 6.0)
    return math.sqrt(sx * factor * sy * factor) if sx > 0 and sy > 0 else 0.0


def kde_raster(
    observations: list[GroundObservation],
    extent: MapExtent,
    cell_size: float,
    *,
    bandwidth: float | None = None,
    classes: tuple[str, ...] | None = None,
) -> DensityGrid:
    """Rasterize observations into a density grid over ``extent``.

    Observations outside the extent (or outside ``classes`` when given) are
    excluded entirely: they neither add mass nor count. With no explicit
    ``bandwidth`` the Silverman rule is used, floored at half a cell so a
    single point still spreads over its neighborhood.
    """
    ny, nx = grid_shape(extent, cell_size)
    included: list[tuple[float, float]] = []
    names: set[str] = set()
    for obs in observations:
        if classes is not None and obs.class_name not in classes:
            continue
        if not extent.contains(obs.x, obs.y):
            continue
        included.append(extent.to_local(obs.x, obs.y))
        names.add(obs.class_name)

    local = np.array(included, dtype=float).reshape(-1, 2)
    if bandwidth is None:
        bandwidth = silverman_bandwidth(local)
    if bandwidth < 0:
        raise ConfigError(f"bandwidth must be non-negative, got {bandwidth}")
    h = max(float(bandwidth), cell_size / 2.0)

    values = np.zeros((ny, nx))
    centers_x = (np.arange(nx) + 0.5) * cell_size
    centers_y = (np.arange(ny) + 0.5) * cell_size
    reach = _TRUNCATE_SIGMAS * h
    cell_area = cell_size * cell_size
    for lx, ly in local:
        c0 = max(0, int(math.ceil((lx - reach) / cell_size - 0.5)))
        c1 = min(nx - 1, int(math.floor((lx + reach) / cell_size - 0.5)))
        r0 = max(0, int(math.ceil((ly - reach) / cell_size - 0.5)))
        r1 = min(ny - 1, int(math.floor((ly + reach) / cell_size - 0.5)))
        if c1 < c0 or r1 < r0:
            # point sits in the extent, so its own cell is always in range
            raise DataError(
                f"kernel for point ({lx:.3f}, {ly:.3f}) covers no grid cell"
            )
        kx = np.exp(-((centers_x[c0 : c1 + 1] - lx) ** 2) / (2.0 * h * h))
        ky = np.exp(-((centers_y[r0 : r1 + 1] - ly) ** 2) / (2.0 * h * h))
        kernel = np.outer(ky, kx)
        mass = kernel.sum() * cell_area
        contrib = np.round(kernel / mass / QUANTUM) * QUANTUM
        values[r0 : r1 + 1, c0 : c1 + 1] += contrib

    times = [o.timestamp for o in observations if o.timestamp is not None]
    return DensityGrid(
        extent=extent,
        cell_size=cell_size,
        values=values,
        bandwidth=h,
        total_count=len(local),
        time_window=(min(times), max(times)) if times else None,
        classes=tuple(sorted(names)) if classes is None else tuple(classes),
    )


def zero_raster(extent: MapExtent, cell_size: float) -> DensityGrid:
    """The merge identity: an empty raster on the given grid."""
    ny, nx = grid_shape(extent, cell_size)
    return DensityGrid(
        extent=extent,
        cell_size=cell_size,
        values=np.zeros((ny, nx)),
        bandwidth=None,
        total_count=0,
        time_window=None,
        classes=(),
    )


def merge_rasters(a: DensityGrid, b: DensityGrid) -> DensityGrid:
    """Combine two rasters on the same grid by summing densities.

    Because all values are quantized, ``merge(merge(a, b), c)`` equals
    ``merge(a, merge(b, c))`` bit for bit.
    """
    if a.extent != b.extent or a.cell_size != b.cell_size:
        raise ConfigError("cannot merge rasters on different grids")
    if a.values.shape != b.values.shape:
        raise ConfigError(
            f"raster shapes differ: {a.values.shape} vs {b.values.shape}"
        )

    def combine(x, y):
        if x is None:
            return y
        if y is None:
            return x
        return x if x == y else None

    tw: tuple[float, float] | None
    if a.time_window and b.time_window:
        tw = (
            min(a.time_window[0], b.time_window[0]),
            max(a.time_window[1], b.time_window[1]),
        )
    else:
        tw = a.time_window or b.time_window
    return DensityGrid(
        extent=a.extent,
        cell_size=a.cell_size,
        values=a.values + b.values,
        bandwidth=combine(a.bandwidth, b.bandwidth),
        total_count=a.total_count + b.total_count,
        time_window=tw,
        classes=tuple(sorted(set(a.classes) | set(b.classes))),
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_density(base: str | Path, grid: DensityGrid) -> dict[str, Path]:
    """Write ``<base>.csv`` (values), ``<base>.json`` (header), ``<base>.pgm``.

    CSV cells use shortest round-trip float formatting, so save/load is
    lossless and reruns are byte-identical. The PGM is a quick-look image
    scaled to the raster maximum.
    """
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    json_path = base.with_suffix(".json")
    pgm_path = base.with_suffix(".pgm")

    lines = [
        ",".join(repr(float(v)) for v in row) for row in grid.values
    ]
    csv_path.write_text("\n".join(lines) + "\n")

    header = {
        "extent": {
            "origin": list(grid.extent.origin),
            "rotation": grid.extent.rotation,
            "width": grid.extent.width,
            "length": grid.extent.length,
        },
        "cell_size": grid.cell_size,
        "bandwidth": grid.bandwidth,
        "total_count": grid.total_count,
        "time_window": list(grid.time_window) if grid.time_window else None,
        "classes": list(grid.classes),
        "shape": list(grid.values.shape),
    }
    json_path.write_text(json.dumps(header, indent=2) + "\n")

    vmax = float(grid.values.max()) if grid.values.size else 0.0
    if vmax > 0:
        img = np.clip(np.round(grid.values / vmax * 255.0), 0, 255).astype(int)
    else:
        img = np.zeros(grid.values.shape, dtype=int)
    ny, nx = grid.values.shape
    pgm_lines = ["P2", f"{nx} {ny}", "255"]
    pgm_lines += [" ".join(str(v) for v in row) for row in img]
    pgm_path.write_text("\n".join(pgm_lines) + "\n")
    return {"csv": csv_path, "json": json_path, "pgm": pgm_path}


def load_density(base: str | Path) -> DensityGrid:
    """Read a raster written by :func:`save_density` (CSV + JSON header)."""
    base = Path(base)
    json_path = base.with_suffix(".json")
    csv_path = base.with_suffix(".csv")
    try:
        header = json.loads(json_path.read_text())
    except FileNotFoundError:
        raise DataError(f"density header {json_path} not found") from None
    except json.JSONDecodeError as e:
        raise DataError(f"density header {json_path} is not valid JSON: {e}") from e
    try:
        rows = [
            [float(v) for v in line.split(",")]
            for line in csv_path.read_text().strip().splitlines()
        ]
        values = np.asarray(rows, dtype=float)
        ext = header["extent"]
        extent = MapExtent(
            origin=(float(ext["origin"][0]), float(ext["origin"][1])),
            rotation=float(ext["rotation"]),
            width=float(ext["width"]),
            length=float(ext["length"]),
        )
        tw = header.get("time_window")
        grid = DensityGrid(
            extent=extent,
            cell_size=float(header["cell_size"]),
            values=values,
            bandwidth=header.get("bandwidth"),
            total_count=int(header["total_count"]),
            time_window=(float(tw[0]), float(tw[1])) if tw else None,
            classes=tuple(header.get("classes", [])),
        )
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise DataError(f"density raster {base} is malformed: {e}") from e
    if list(values.shape) != list(header.get("shape", values.shape)):
        raise DataError(
            f"density raster {base}: CSV shape {values.shape} does not match "
            f"header {header.get('shape')}"
        )
    return grid
