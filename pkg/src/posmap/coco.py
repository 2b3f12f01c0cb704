"""Annotation dataset I/O.

Reads and writes the standard polygon-annotation JSON layout (images /
annotations / categories) plus per-image polygon-editor files for manual
label correction. Unknown keys at every level ride along in ``extra`` dicts
so a load/save round trip never drops tool-specific metadata.

Segmentation is polygon-only: each annotation carries a list of flat
``[x1, y1, x2, y2, ...]`` rings, multiple rings meaning one object split by
occlusion. Run-length masks are rejected up front rather than silently
mishandled.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DataError
from .geometry2d import polygons_area, polygons_bounds
from .taxonomy import Taxonomy, Treatment

__all__ = [
    "Category",
    "ImageRecord",
    "Annotation",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "load_detections",
    "split_dataset",
    "filter_for_annotation",
    "remap_categories",
    "remap_annotations",
    "export_labelme",
    "import_labelme",
]

_KNOWN_IMAGE_KEYS = {"id", "file_name", "width", "height"}
_KNOWN_ANN_KEYS = {
    "id",
    "image_id",
    "category_id",
    "segmentation",
    "bbox",
    "area",
    "iscrowd",
    "score",
}
_KNOWN_CAT_KEYS = {"id", "name", "supercategory"}
_KNOWN_TOP_KEYS = {"images", "annotations", "categories", "info", "licenses"}


@dataclass
class Category:
    id: int
    name: str
    supercategory: str = ""
    extra: dict = field(default_factory=dict)


@dataclass
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int
    extra: dict = field(default_factory=dict)


@dataclass
class Annotation:
    id: int
    image_id: int
    category_id: int
    segmentation: list[list[float]] = field(default_factory=list)
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    area: float = 0.0
    iscrowd: int = 0
    score: float | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class Dataset:
    images: list[ImageRecord] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)
    categories: list[Category] = field(default_factory=list)
    info: dict = field(default_factory=dict)
    licenses: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def image_by_id(self) -> dict[int, ImageRecord]:
        return {im.id: im for im in self.images}

    def category_by_id(self) -> dict[int, Category]:
        return {c.id: c for c in self.categories}

    def category_by_name(self) -> dict[str, Category]:
        return {c.name: c for c in self.categories}

    def anns_by_image(self) -> dict[int, list[Annotation]]:
        out: dict[int, list[Annotation]] = {im.id: [] for im in self.images}
        for ann in self.annotations:
            out.setdefault(ann.image_id, []).append(ann)
        return out


# ---------------------------------------------------------------------------
# load / save
# ---------------------------------------------------------------------------


def _extract_extra(raw: dict, known: set[str]) -> dict:
    return {k: v for k, v in raw.items() if k not in known}


def _parse_segmentation(raw, ann_id: int) -> list[list[float]]:
    if raw is None:
        return []
    if isinstance(raw, dict):
        raise DataError(
            f"annotation {ann_id}: run-length segmentation is not supported, "
            "only polygons"
        )
    polys: list[list[float]] = []
    for part in raw:
        coords = [float(v) for v in part]
        if len(coords) < 6 or len(coords) % 2 != 0:
            raise DataError(
                f"annotation {ann_id}: degenerate polygon with "
                f"{len(coords)} coordinates"
            )
        polys.append(coords)
    return polys


def load_dataset(path: str | Path) -> Dataset:
    """Load an annotation JSON file, validating referential integrity."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"annotation file {path} not found") from None
    except json.JSONDecodeError as e:
        raise DataError(f"annotation file {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise DataError(f"annotation file {path} must be a JSON object")

    try:
        images = [
            ImageRecord(
                id=int(r["id"]),
                file_name=str(r["file_name"]),
                width=int(r["width"]),
                height=int(r["height"]),
                extra=_extract_extra(r, _KNOWN_IMAGE_KEYS),
            )
            for r in doc.get("images", [])
        ]
        categories = [
            Category(
                id=int(r["id"]),
                name=str(r["name"]),
                supercategory=str(r.get("supercategory", "")),
                extra=_extract_extra(r, _KNOWN_CAT_KEYS),
            )
            for r in doc.get("categories", [])
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"annotation file {path} is malformed: {e}") from e

    image_ids = {im.id for im in images}
    category_ids = {c.id for c in categories}
    if len(image_ids) != len(images):
        raise DataError(f"annotation file {path} has duplicate image ids")
    if len(category_ids) != len(categories):
        raise DataError(f"annotation file {path} has duplicate category ids")

    annotations = []
    for r in doc.get("annotations", []):
        try:
            ann_id = int(r["id"])
            ann = Annotation(
                id=ann_id,
                image_id=int(r["image_id"]),
                category_id=int(r["category_id"]),
                segmentation=_parse_segmentation(r.get("segmentation"), int(r["id"])),
                iscrowd=int(r.get("iscrowd", 0)),
                score=None if r.get("score") is None else float(r["score"]),
                extra=_extract_extra(r, _KNOWN_ANN_KEYS),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"annotation record is malformed: {e}") from e
        if ann.image_id not in image_ids:
            raise DataError(
                f"annotation {ann.id} references missing image {ann.image_id}"
            )
        if ann.category_id not in category_ids:
            raise DataError(
                f"annotation {ann.id} references missing category {ann.category_id}"
            )
        if ann.score is not None and not 0.0 <= ann.score <= 1.0:
            raise DataError(f"annotation {ann.id} has score {ann.score} outside [0, 1]")

        bbox_raw = r.get("bbox")
        if bbox_raw is not None:
            if len(bbox_raw) != 4:
                raise DataError(f"annotation {ann.id} has a bbox with {len(bbox_raw)} values")
            ann.bbox = tuple(float(v) for v in bbox_raw)
        elif ann.segmentation:
            ann.bbox = polygons_bounds(ann.segmentation)
        else:
            raise DataError(f"annotation {ann.id} has neither bbox nor segmentation")

        if ann.segmentation and bbox_raw is not None:
            hull = polygons_bounds(ann.segmentation)
            if max(abs(h - b) for h, b in zip(hull, ann.bbox)) > 1.0:
                warnings.warn(
                    f"annotation {ann.id}: bbox {ann.bbox} deviates more than "
                    f"1 px from its polygon hull {hull}",
                    stacklevel=2,
                )

        area_raw = r.get("area")
        if area_raw is not None:
            ann.area = float(area_raw)
        elif ann.segmentation:
            ann.area = polygons_area(ann.segmentation)
        else:
            ann.area = ann.bbox[2] * ann.bbox[3]
        annotations.append(ann)

    return Dataset(
        images=images,
        annotations=annotations,
        categories=categories,
        info=doc.get("info", {}),
        licenses=doc.get("licenses", []),
        extra=_extract_extra(doc, _KNOWN_TOP_KEYS),
    )


def save_dataset(path: str | Path, ds: Dataset) -> None:
    """Write a dataset back to JSON, restoring preserved unknown keys."""
    image_ids = {im.id for im in ds.images}
    category_ids = {c.id for c in ds.categories}
    ann_rows = []
    for ann in ds.annotations:
        if ann.image_id not in image_ids:
            raise DataError(f"annotation {ann.id} references missing image {ann.image_id}")
        if ann.category_id not in category_ids:
            raise DataError(
                f"annotation {ann.id} references missing category {ann.category_id}"
            )
        if ann.segmentation:
            hull = polygons_bounds(ann.segmentation)
            if max(abs(h - b) for h, b in zip(hull, ann.bbox)) > 1.0:
                raise DataError(
                    f"annotation {ann.id}: bbox {tuple(ann.bbox)} deviates more "
                    f"than 1 px from its polygon hull {hull}"
                )
        row = {
            "id": ann.id,
            "image_id": ann.image_id,
            "category_id": ann.category_id,
            "segmentation": [list(p) for p in ann.segmentation],
            "bbox": list(ann.bbox),
            "area": ann.area,
            "iscrowd": ann.iscrowd,
        }
        if ann.score is not None:
            row["score"] = ann.score
        row.update(ann.extra)
        ann_rows.append(row)

    doc = {
        "info": ds.info,
        "licenses": ds.licenses,
        "images": [
            {
                "id": im.id,
                "file_name": im.file_name,
                "width": im.width,
                "height": im.height,
                **im.extra,
            }
            for im in ds.images
        ],
        "annotations": ann_rows,
        "categories": [
            {"id": c.id, "name": c.name, "supercategory": c.supercategory, **c.extra}
            for c in ds.categories
        ],
        **ds.extra,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_detections(path: str | Path) -> list[Annotation]:
    """Load detector output: either a full dataset file or a bare result list.

    A bare list holds ``{image_id, category_id, score, bbox and/or
    segmentation}`` records; ids are assigned sequentially.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"detection file {path} not found") from None
    except json.JSONDecodeError as e:
        raise DataError(f"detection file {path} is not valid JSON: {e}") from e
    if isinstance(doc, dict):
        return load_dataset(path).annotations
    if not isinstance(doc, list):
        raise DataError(f"detection file {path} must be a JSON object or list")
    dets = []
    for i, r in enumerate(doc):
        try:
            seg = _parse_segmentation(r.get("segmentation"), i + 1)
            score = float(r["score"])
            if not 0.0 <= score <= 1.0:
                raise DataError(f"detection {i + 1} has score {score} outside [0, 1]")
            bbox_raw = r.get("bbox")
            if bbox_raw is not None:
                bbox = tuple(float(v) for v in bbox_raw)
            elif seg:
                bbox = polygons_bounds(seg)
            else:
                raise DataError(f"detection {i + 1} has neither bbox nor segmentation")
            area = float(r["area"]) if "area" in r else (
                polygons_area(seg) if seg else bbox[2] * bbox[3]
            )
            dets.append(
                Annotation(
                    id=i + 1,
                    image_id=int(r["image_id"]),
                    category_id=int(r["category_id"]),
                    segmentation=seg,
                    bbox=bbox,
                    area=area,
                    score=score,
                    extra=_extract_extra(r, _KNOWN_ANN_KEYS),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"detection record {i} in {path} is malformed: {e}") from e
    return dets


# ---------------------------------------------------------------------------
# dataset surgery
# ---------------------------------------------------------------------------


def split_dataset(
    ds: Dataset,
    train_fraction: float,
    seed: int,
    stratify_key: str | None = None,
) -> tuple[Dataset, Dataset]:
    """Split images (with their annotations) into train/test subsets.

    The shuffle is seeded so a given (dataset, fraction, seed) triple always
    produces the same split; both subsets keep their images sorted by id.
    With ``stratify_key``, images are bucketed by that key in their extra
    metadata and each bucket is split at the same fraction.
    """
    if not ds.images:
        raise DataError("cannot split a dataset with no images")
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train fraction must be in (0, 1), got {train_fraction}")

    rng = random.Random(seed)
    buckets: dict[object, list[ImageRecord]]
    if stratify_key is None:
        buckets = {None: list(ds.images)}
    else:
        buckets = {}
        for im in ds.images:
            buckets.setdefault(im.extra.get(stratify_key), []).append(im)

    train_ids: set[int] = set()
    for key in sorted(buckets, key=repr):
        group = sorted(buckets[key], key=lambda im: im.id)
        rng.shuffle(group)
        n_train = round(train_fraction * len(group))
        train_ids.update(im.id for im in group[:n_train])

    def subset(keep: set[int]) -> Dataset:
        images = sorted((im for im in ds.images if im.id in keep), key=lambda im: im.id)
        anns = [a for a in ds.annotations if a.image_id in keep]
        return Dataset(
            images=images,
            annotations=anns,
            categories=list(ds.categories),
            info=dict(ds.info),
            licenses=list(ds.licenses),
            extra=dict(ds.extra),
        )

    test_ids = {im.id for im in ds.images} - train_ids
    if not train_ids or not test_ids:
        raise DataError(
            f"split fraction {train_fraction} leaves an empty subset "
            f"({len(train_ids)} train / {len(test_ids)} test)"
        )
    return subset(train_ids), subset(test_ids)


def filter_for_annotation(
    annotations: list[Annotation],
    score_threshold: float = 0.75,
    min_area_px: float = 600.0,
) -> list[Annotation]:
    """Keep detections worth sending to a human annotator.

    A detection survives when its score is at least ``score_threshold`` and
    its polygon area (bbox area when it has no polygon) is at least
    ``min_area_px``. Both thresholds are inclusive; input order is kept.
    """
    out = []
    for ann in annotations:
        score = ann.score if ann.score is not None else 1.0
        if score < score_threshold:
            continue
        area = polygons_area(ann.segmentation) if ann.segmentation else (
            ann.bbox[2] * ann.bbox[3]
        )
        if area < min_area_px:
            continue
        out.append(ann)
    return out


def remap_categories(ds: Dataset, treatment: Treatment) -> Dataset:
    """Apply a class treatment to a dataset, dropping absorbed categories."""
    by_id = ds.category_by_id()
    by_name = ds.category_by_name()
    new_anns = []
    for ann in ds.annotations:
        cat = by_id.get(ann.category_id)
        if cat is None:
            raise DataError(
                f"annotation {ann.id} references missing category {ann.category_id}"
            )
        target = treatment.apply(cat.name)
        if target not in by_name:
            raise DataError(
                f"treatment {treatment.name!r} maps {cat.name!r} to {target!r}, "
                "which is not a category of this dataset"
            )
        new_anns.append(replace(ann, category_id=by_name[target].id))
    survivors = set(treatment.effective_classes())
    return Dataset(
        images=list(ds.images),
        annotations=new_anns,
        categories=[c for c in ds.categories if c.name in survivors],
        info=dict(ds.info),
        licenses=list(ds.licenses),
        extra=dict(ds.extra),
    )


def remap_annotations(
    annotations: list[Annotation],
    categories: list[Category],
    treatment: Treatment,
) -> list[Annotation]:
    """Apply a class treatment to standalone annotations (e.g. detections).

    ``categories`` define the id/name table the annotations refer to —
    typically the ground-truth dataset's categories before remapping.
    """
    by_id = {c.id: c for c in categories}
    by_name = {c.name: c for c in categories}
    out = []
    for ann in annotations:
        cat = by_id.get(ann.category_id)
        if cat is None:
            raise DataError(
                f"annotation {ann.id} references missing category {ann.category_id}"
            )
        target = treatment.apply(cat.name)
        if target not in by_name:
            raise DataError(
                f"treatment {treatment.name!r} maps {cat.name!r} to {target!r}, "
                "which is not a known category"
            )
        out.append(replace(ann, category_id=by_name[target].id))
    return out


# ---------------------------------------------------------------------------
# polygon-editor round trip
# ---------------------------------------------------------------------------

_LABELME_VERSION = "5.2.1"
_SUPER_ALIAS = {"people": "person"}
_ALIAS_SUPER = {v: k for k, v in _SUPER_ALIAS.items()}


def _instance_label(supercategory: str, name: str, index: int) -> str:
    alias = _SUPER_ALIAS.get(supercategory, supercategory)
    return f"{alias}_{name}_{index}"


def export_labelme(ds: Dataset, out_dir: str | Path) -> list[Path]:
    """Write one polygon-editor JSON per image for manual correction.

    Labels read ``person_pedestrian_3``: aliased super-category, class name,
    then a per-image per-class instance index assigned in descending score
    order. Multi-part objects emit one shape per ring, tied together by
    ``group_id``. Vertices outside the image are clamped with a warning.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cats = ds.category_by_id()
    images_by_id = ds.image_by_id()
    written = []
    for im, anns in ds.anns_by_image().items():
        image = images_by_id[im]
        ordered = sorted(
            anns, key=lambda a: (-(a.score if a.score is not None else 0.0), a.id)
        )
        counters: dict[int, int] = {}
        shapes = []
        group_id = 0
        for ann in ordered:
            if not ann.segmentation:
                continue
            cat = cats[ann.category_id]
            counters[cat.id] = counters.get(cat.id, 0) + 1
            label = _instance_label(cat.supercategory, cat.name, counters[cat.id])
            group_id += 1
            gid = group_id if len(ann.segmentation) > 1 else None
            for part in ann.segmentation:
                pts = []
                for x, y in zip(part[0::2], part[1::2]):
                    cx = min(max(x, 0.0), float(image.width))
                    cy = min(max(y, 0.0), float(image.height))
                    if cx != x or cy != y:
                        warnings.warn(
                            f"annotation {ann.id}: vertex ({x}, {y}) clamped to "
                            f"image bounds of {image.file_name}",
                            stacklevel=2,
                        )
                    pts.append([cx, cy])
                shapes.append(
                    {
                        "label": label,
                        "points": pts,
                        "group_id": gid,
                        "shape_type": "polygon",
                        "flags": {},
                    }
                )
        doc = {
            "version": _LABELME_VERSION,
            "flags": {},
            "shapes": shapes,
            "imagePath": image.file_name,
            "imageData": None,
            "imageHeight": image.height,
            "imageWidth": image.width,
        }
        out_path = out_dir / (Path(image.file_name).stem + ".json")
        out_path.write_text(json.dumps(doc, indent=2) + "\n")
        written.append(out_path)
    return written


def _parse_instance_label(label: str) -> tuple[str, str]:
    parts = label.split("_")
    if len(parts) != 3:
        raise DataError(
            f"label {label!r} is not of the form <supercategory>_<class>_<index>"
        )
    alias, name, _ = parts
    return _ALIAS_SUPER.get(alias, alias), name


def import_labelme(
    paths: list[str | Path], taxonomy: Taxonomy
) -> Dataset:
    """Rebuild a dataset from polygon-editor JSON files.

    Shapes sharing (label, group_id) become one multi-part annotation.
    Class names must exist in ``taxonomy``; categories are emitted for the
    full taxonomy so ids stay stable across partial exports.
    """
    images: list[ImageRecord] = []
    annotations: list[Annotation] = []
    next_ann_id = 1
    for image_id, p in enumerate(sorted(Path(q) for q in paths), start=1):
        try:
            doc = json.loads(Path(p).read_text())
        except FileNotFoundError:
            raise DataError(f"polygon file {p} not found") from None
        except json.JSONDecodeError as e:
            raise DataError(f"polygon file {p} is not valid JSON: {e}") from e
        try:
            images.append(
                ImageRecord(
                    id=image_id,
                    file_name=str(doc["imagePath"]),
                    width=int(doc["imageWidth"]),
                    height=int(doc["imageHeight"]),
                )
            )
            shapes = doc["shapes"]
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"polygon file {p} is malformed: {e}") from e

        grouped: dict[tuple[str, object], list[list[float]]] = {}
        order: list[tuple[str, object]] = []
        for shape_no, shape in enumerate(shapes):
            if shape.get("shape_type") != "polygon":
                raise DataError(
                    f"{p}: shape {shape_no} has unsupported type "
                    f"{shape.get('shape_type')!r}"
                )
            label = str(shape["label"])
            gid = shape.get("group_id")
            key = (label, gid if gid is not None else ("solo", shape_no))
            flat = [float(v) for pt in shape["points"] for v in pt]
            if len(flat) < 6:
                raise DataError(f"{p}: shape {shape_no} has fewer than 3 vertices")
            grouped.setdefault(key, []).append(flat)
            if key not in order:
                order.append(key)

        for key in order:
            label, _ = key
            _, name = _parse_instance_label(label)
            cls = taxonomy.by_name(name)
            polys = grouped[key]
            annotations.append(
                Annotation(
                    id=next_ann_id,
                    image_id=image_id,
                    category_id=cls.class_id,
                    segmentation=polys,
                    bbox=polygons_bounds(polys),
                    area=polygons_area(polys),
                )
            )
            next_ann_id += 1

    categories = [
        Category(id=c.class_id, name=c.name, supercategory=c.supercategory)
        for c in taxonomy.classes
    ]
    return Dataset(images=images, annotations=annotations, categories=categories)
