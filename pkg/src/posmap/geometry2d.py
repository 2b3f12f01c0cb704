"""Pixel-plane polygon utilities.

Polygons are flat coordinate lists ``[x1, y1, x2, y2, ...]`` in pixel
coordinates (top-left origin, +x right, +y down), matching the annotation
file format. Areas use the shoelace formula with the absolute value taken,
so vertex winding does not matter.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "polygon_area",
    "polygons_area",
    "polygon_bounds",
    "polygons_bounds",
    "as_points",
    "as_flat",
    "convex_hull",
    "clip_to_rect",
    "rasterize_polygons",
]


def as_points(flat: Sequence[float]) -> np.ndarray:
    """Reshape a flat [x1,y1,...] list to an (N,2) float array."""
    arr = np.asarray(flat, dtype=float)
    if arr.ndim != 1 or arr.size % 2 != 0:
        raise DataError(f"polygon coordinate list has odd length {arr.size}")
    return arr.reshape(-1, 2)


def as_flat(points: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(points, dtype=float).reshape(-1)]


def polygon_area(flat: Sequence[float]) -> float:
    """Shoelace area of one polygon, absolute value."""
    pts = as_points(flat)
    if len(pts) < 3:
        raise DataError(f"polygon needs at least 3 vertices, got {len(pts)}")
    x, y = pts[:, 0], pts[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def polygons_area(polys: Sequence[Sequence[float]]) -> float:
    """Total area of a multi-part polygon set (sum of parts)."""
    return sum(polygon_area(p) for p in polys)


def polygon_bounds(flat: Sequence[float]) -> tuple[float, float, float, float]:
    """Axis-aligned hull (x, y, w, h) of one polygon."""
    pts = as_points(flat)
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return float(x0), float(y0), float(x1 - x0), float(y1 - y0)


def polygons_bounds(polys: Sequence[Sequence[float]]) -> tuple[float, float, float, float]:
    pts = np.vstack([as_points(p) for p in polys])
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return float(x0), float(y0), float(x1 - x0), float(y1 - y0)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull of an (N,2) point set, counter-clockwise, via monotone chain."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    # lexicographic sort by (x, y)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def clip_to_rect(
    points: np.ndarray, x0: float, y0: float, x1: float, y1: float
) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against an axis-aligned rectangle.

    Returns the clipped vertex array, possibly empty. Intended for convex or
    simple polygons clipped by the (convex) image rectangle.
    """
    poly = [tuple(p) for p in np.asarray(points, dtype=float)]

    def clip_edge(poly, inside, intersect):
        out = []
        n = len(poly)
        for i in range(n):
            cur, nxt = poly[i], poly[(i + 1) % n]
            cur_in, nxt_in = inside(cur), inside(nxt)
            if cur_in:
                out.append(cur)
                if not nxt_in:
                    out.append(intersect(cur, nxt))
            elif nxt_in:
                out.append(intersect(cur, nxt))
        return out

    def x_cross(a, b, x):
        t = (x - a[0]) / (b[0] - a[0])
        return (x, a[1] + t * (b[1] - a[1]))

    def y_cross(a, b, y):
        t = (y - a[1]) / (b[1] - a[1])
        return (a[0] + t * (b[0] - a[0]), y)

    for inside, intersect in (
        (lambda p: p[0] >= x0, lambda a, b: x_cross(a, b, x0)),
        (lambda p: p[0] <= x1, lambda a, b: x_cross(a, b, x1)),
        (lambda p: p[1] >= y0, lambda a, b: y_cross(a, b, y0)),
        (lambda p: p[1] <= y1, lambda a, b: y_cross(a, b, y1)),
    ):
        if not poly:
            return np.zeros((0, 2))
        poly = clip_edge(poly, inside, intersect)
    return np.array(poly) if poly else np.zeros((0, 2))


def rasterize_polygons(
    polys: Sequence[Sequence[float]], width: int, height: int
) -> np.ndarray:
    """Rasterize a multi-part polygon to a boolean (height, width) mask.

    Even-odd scanline fill sampled at pixel centers (x+0.5, y+0.5). Parts are
    OR-combined, matching the multi-part occlusion-split convention.
    """
    mask = np.zeros((height, width), dtype=bool)
    for flat in polys:
        pts = as_points(flat)
        if len(pts) < 3:
            raise DataError("cannot rasterize a polygon with fewer than 3 vertices")
        ys = pts[:, 1]
        row_lo = max(0, int(np.floor(ys.min() - 0.5)))
        row_hi = min(height - 1, int(np.ceil(ys.max())))
        xs_a, ys_a = pts[:, 0], pts[:, 1]
        xs_b, ys_b = np.roll(xs_a, -1), np.roll(ys_a, -1)
        for row in range(row_lo, row_hi + 1):
            yc = row + 0.5
            # edges straddling the scanline (half-open to avoid double counting)
            straddle = (ys_a <= yc) != (ys_b <= yc)
            if not straddle.any():
                continue
            t = (yc - ys_a[straddle]) / (ys_b[straddle] - ys_a[straddle])
            xhits = np.sort(xs_a[straddle] + t * (xs_b[straddle] - xs_a[straddle]))
            for i in range(0, len(xhits) - 1, 2):
                lo = int(np.ceil(xhits[i] - 0.5))
                hi = int(np.floor(xhits[i + 1] - 0.5))
                if hi >= lo:
                    mask[row, max(lo, 0) : min(hi, width - 1) + 1] = True
    return mask
