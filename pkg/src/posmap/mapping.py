"""Ground-plane behavioral mapping.

Turns per-image polygon detections into world-frame observations: the foot
contact point of each person is back-projected onto the ground plane, and a
class-conditional size prior plus the head pixel give a full oriented 3D
box. Results can be restricted to a surveyed map extent (a rotated
rectangle on the ground).
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraModel
from .coco import Annotation, Dataset
from .errors import DataError, DegenerateGeometryError, GeometryError
from .taxonomy import Treatment

__all__ = [
    "footpoint",
    "top_point",
    "SizePriors",
    "Box3D",
    "estimate_box3d",
    "MapExtent",
    "GroundObservation",
    "locate",
    "FrameMapResult",
    "map_frame",
    "map_dataset",
    "save_observations",
    "load_observations",
]

_BAND_FRACTION = 0.05


def _polygon_band_midpoint(ann: Annotation, bottom: bool) -> tuple[float, float]:
    xs: list[float] = []
    ys: list[float] = []
    for part in ann.segmentation:
        xs.extend(part[0::2])
        ys.extend(part[1::2])
    y_min, y_max = min(ys), max(ys)
    band = _BAND_FRACTION * (y_max - y_min)
    if bottom:
        keep = [i for i, y in enumerate(ys) if y >= y_max - band]
    else:
        keep = [i for i, y in enumerate(ys) if y <= y_min + band]
    bx = [xs[i] for i in keep]
    by = [ys[i] for i in keep]
    return (min(bx) + max(bx)) / 2.0, (min(by) + max(by)) / 2.0


def footpoint(ann: Annotation) -> tuple[float, float]:
    """Pixel where the object touches the ground.

    Midpoint of the bounding box of the lowest 5% vertex band of the
    polygon; bottom-center of the bbox when there is no polygon.
    """
    if ann.segmentation:
        return _polygon_band_midpoint(ann, bottom=True)
    x, y, w, h = ann.bbox
    return x + w / 2.0, y + h


def top_point(ann: Annotation) -> tuple[float, float]:
    """Pixel at the top of the object (head), mirroring :func:`footpoint`."""
    if ann.segmentation:
        return _polygon_band_midpoint(ann, bottom=False)
    x, y, w, _ = ann.bbox
    return x + w / 2.0, y


@dataclass(frozen=True)
class SizePriors:
    """Class-conditional footprint priors (width, length) in metres.

    Classes without an entry fall back to the default (standing-person)
    footprint.
    """

    by_class: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {
            "pedestrian": (0.50, 0.60),
            "cyclist": (0.50, 1.60),
        }
    )
    default: tuple[float, float] = (0.50, 0.60)

    def lookup(self, class_name: str) -> tuple[float, float]:
        return self.by_class.get(class_name, self.default)


@dataclass(frozen=True)
class Box3D:
    """Upright oriented box on the ground plane."""

    center_x: float
    center_y: float
    yaw: float
    width: float
    length: float
    height: float


_HEIGHT_RANGE = (0.3, 3.0)


def estimate_box3d(
    camera: CameraModel,
    ground_xy: tuple[float, float],
    top_pixel: tuple[float, float],
    prior: tuple[float, float],
) -> Box3D:
    """Oriented 3D box from a ground contact point and a head pixel.

    A single camera cannot observe depth along the viewing ray, so the box
    is oriented away from the camera (yaw along the ray's ground trace) and
    the ground point is taken as the near face: the center sits half a
    length further out. Height comes from the point on the head-pixel ray
    closest (in the ground plane) to the contact point, clamped to the
    plausible person range.
    """
    gx, gy = ground_xy
    cx, cy, cz = (float(v) for v in camera.pose.camera_center)
    yaw = math.atan2(gy - cy, gx - cx)
    width, length = prior
    center_x = gx + (length / 2.0) * math.cos(yaw)
    center_y = gy + (length / 2.0) * math.sin(yaw)

    xn, yn, _ = camera.undistort_pixel(top_pixel[0], top_pixel[1])
    rot = camera.pose.rotation
    d = rot.T @ np.array([xn, yn, 1.0])
    horiz2 = float(d[0] * d[0] + d[1] * d[1])
    if horiz2 < 1e-12:
        raise DegenerateGeometryError(
            "head-pixel ray is vertical; height is unobservable"
        )
    s = ((gx - cx) * float(d[0]) + (gy - cy) * float(d[1])) / horiz2
    height = cz + s * float(d[2])
    height = min(max(height, _HEIGHT_RANGE[0]), _HEIGHT_RANGE[1])
    return Box3D(
        center_x=center_x,
        center_y=center_y,
        yaw=yaw,
        width=width,
        length=length,
        height=height,
    )


@dataclass(frozen=True)
class MapExtent:
    """A rotated rectangle on the ground plane, e.g. a road segment.

    ``origin`` is the world position of the rectangle's corner; ``rotation``
    (radians, counter-clockwise) takes the rectangle's local +x axis into
    the world. Containment is closed on all edges.
    """

    origin: tuple[float, float]
    rotation: float
    width: float
    length: float

    def to_local(self, x: float, y: float) -> tuple[float, float]:
        dx, dy = x - self.origin[0], y - self.origin[1]
        c, s = math.cos(-self.rotation), math.sin(-self.rotation)
        return c * dx - s * dy, s * dx + c * dy

    def contains(self, x: float, y: float) -> bool:
        lx, ly = self.to_local(x, y)
        return 0.0 <= lx <= self.width and 0.0 <= ly <= self.length


@dataclass(frozen=True)
class GroundObservation:
    """One person located on the ground plane."""

    class_name: str
    x: float
    y: float
    box: Box3D
    annotation_id: int
    image_id: int
    timestamp: float | None = None
    source: str = ""
    score: float | None = None


def locate(
    camera: CameraModel,
    ann: Annotation,
    class_name: str,
    treatment: Treatment | None = None,
    *,
    priors: SizePriors | None = None,
    timestamp: float | None = None,
    image_id: int = 0,
    source: str = "",
) -> GroundObservation:
    """Locate a single detection on the ground plane.

    The footpoint pixel is back-projected onto Z=0 and a prior-sized 3D box
    is fitted. ``class_name`` is the detection's class before treatment;
    the returned observation carries the post-treatment name. Geometry
    errors (horizon footpoint, vertical head ray) propagate to the caller.
    """
    mapped = treatment.apply(class_name) if treatment is not None else class_name
    fu, fv = footpoint(ann)
    gx, gy = camera.back_project_ground(fu, fv)
    box = estimate_box3d(
        camera, (gx, gy), top_point(ann), (priors or SizePriors()).lookup(mapped)
    )
    return GroundObservation(
        class_name=mapped,
        x=gx,
        y=gy,
        box=box,
        annotation_id=ann.id,
        image_id=image_id,
        timestamp=timestamp,
        source=source,
        score=ann.score,
    )


@dataclass(frozen=True)
class FrameMapResult:
    observations: tuple[GroundObservation, ...]
    out_of_extent: tuple[GroundObservation, ...]
    failures: tuple[tuple[int, str], ...]
    runtime_s: float
    timestamp: float | None = None
    source: str = ""


def map_frame(
    camera: CameraModel,
    annotations: list[Annotation],
    class_names: dict[int, str],
    treatment: Treatment,
    *,
    extent: MapExtent | None = None,
    priors: SizePriors | None = None,
    timestamp: float | None = None,
    image_id: int = 0,
    source: str = "",
) -> FrameMapResult:
    """Map one frame's detections onto the ground plane.

    Only annotations whose post-treatment class belongs to the ``people``
    super-category are mapped; geometry failures (horizon pixels, vertical
    rays) are recorded per annotation rather than aborting the frame.
    """
    priors = priors or SizePriors()
    t0 = time.perf_counter()
    kept: list[GroundObservation] = []
    outside: list[GroundObservation] = []
    failures: list[tuple[int, str]] = []
    for ann in annotations:
        name = class_names.get(ann.category_id)
        if name is None:
            raise DataError(
                f"annotation {ann.id} references unknown category {ann.category_id}"
            )
        mapped = treatment.apply(name)
        if treatment.taxonomy.by_name(mapped).supercategory != "people":
            continue
        try:
            obs = locate(
                camera,
                ann,
                mapped,
                priors=priors,
                timestamp=timestamp,
                image_id=image_id,
                source=source,
            )
        except GeometryError as e:
            failures.append((ann.id, str(e)))
            continue
        if extent is not None and not extent.contains(obs.x, obs.y):
            outside.append(obs)
        else:
            kept.append(obs)
    return FrameMapResult(
        observations=tuple(kept),
        out_of_extent=tuple(outside),
        failures=tuple(failures),
        runtime_s=time.perf_counter() - t0,
        timestamp=timestamp,
        source=source,
    )


def map_dataset(
    camera: CameraModel,
    ds: Dataset,
    treatment: Treatment,
    *,
    extent: MapExtent | None = None,
    priors: SizePriors | None = None,
    fps: float = 1.0,
    source: str = "",
) -> list[FrameMapResult]:
    """Map every image of a dataset, in image-id order.

    Timestamps come from a ``timestamp`` key in each image's extra metadata
    when present, otherwise from the frame index at ``fps`` frames/second.
    """
    if fps <= 0:
        raise DataError(f"fps must be positive, got {fps}")
    class_names = {c.id: c.name for c in ds.categories}
    by_image = ds.anns_by_image()
    results = []
    for index, image in enumerate(sorted(ds.images, key=lambda im: im.id)):
        raw_ts = image.extra.get("timestamp")
        ts = float(raw_ts) if raw_ts is not None else index / fps
        results.append(
            map_frame(
                camera,
                by_image.get(image.id, []),
                class_names,
                treatment,
                extent=extent,
                priors=priors,
                timestamp=ts,
                image_id=image.id,
                source=source,
            )
        )
    return results


# ---------------------------------------------------------------------------
# observation persistence
# ---------------------------------------------------------------------------

_OBS_FIELDS = (
    "source",
    "image_id",
    "annotation_id",
    "timestamp",
    "class_name",
    "x",
    "y",
    "yaw",
    "width",
    "length",
    "height",
    "score",
)


def save_observations(path: str | Path, observations: list[GroundObservation]) -> int:
    """Write observations to CSV. Floats use shortest round-trip formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_OBS_FIELDS)
        for o in observations:
            writer.writerow(
                [
                    o.source,
                    o.image_id,
                    o.annotation_id,
                    "" if o.timestamp is None else repr(float(o.timestamp)),
                    o.class_name,
                    repr(float(o.x)),
                    repr(float(o.y)),
                    repr(float(o.box.yaw)),
                    repr(float(o.box.width)),
                    repr(float(o.box.length)),
                    repr(float(o.box.height)),
                    "" if o.score is None else repr(float(o.score)),
                ]
            )
    return len(observations)


def load_observations(path: str | Path) -> list[GroundObservation]:
    """Read observations written by :func:`save_observations`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"observation file {path} not found")
    out: list[GroundObservation] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(_OBS_FIELDS) - set(reader.fieldnames):
            raise DataError(
                f"observation file {path} must have columns {','.join(_OBS_FIELDS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                x = float(row["x"])
                y = float(row["y"])
                yaw = float(row["yaw"])
                width = float(row["width"])
                length = float(row["length"])
                height = float(row["height"])
                box = Box3D(
                    center_x=x + (length / 2.0) * math.cos(yaw),
                    center_y=y + (length / 2.0) * math.sin(yaw),
                    yaw=yaw,
                    width=width,
                    length=length,
                    height=height,
                )
                out.append(
                    GroundObservation(
                        class_name=row["class_name"],
                        x=x,
                        y=y,
                        box=box,
                        annotation_id=int(row["annotation_id"]),
                        image_id=int(row["image_id"]),
                        timestamp=float(row["timestamp"]) if row["timestamp"] else None,
                        source=row["source"],
                        score=float(row["score"]) if row.get("score") else None,
                    )
                )
            except (TypeError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: bad observation row: {e}") from e
    return out
