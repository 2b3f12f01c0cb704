"""Detector evaluation on polygon annotations.

Implements the standard interpolated-AP protocol: greedy score-ordered
matching per image and class, IoU thresholds 0.50:0.05:0.95, a 101-point
recall grid, object-size strata with crowd/out-of-stratum ignore handling,
and recall at 100 detections per image. IoU can be computed on rasterized
polygon masks (default) or on axis-aligned boxes.

Tie-breaking is deterministic and documented: detections are ranked by
(-score, id); a detection facing several ground truths of equal IoU takes
the one with the lowest id.

:func:`diagnose_errors` produces a cumulative error ladder (C75, C50, Loc,
Sim, Oth, BG, FN). The ladder matches once at IoU 0.10 and then *nests* all
later stages inside that matching — stricter stages only re-flag the same
matched pairs, looser stages only ignore more false positives — so the
seven numbers are non-decreasing by construction, ending at exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .coco import Annotation, Dataset
from .errors import DataError
from .geometry2d import polygons_area, rasterize_polygons
from .taxonomy import Taxonomy

__all__ = [
    "EvalParams",
    "ClassMetrics",
    "EvalResult",
    "DiagnosisLadder",
    "DiagnosisResult",
    "MatchResult",
    "PRCurve",
    "ClassStats",
    "DatasetStats",
    "iou_bbox",
    "iou_mask",
    "match_detections",
    "pr_curve",
    "coco_ap",
    "mean_ap",
    "evaluate_detections",
    "diagnose_errors",
    "dataset_stats",
]

_AREA_RANGES: tuple[tuple[str, float, float], ...] = (
    ("all", 0.0, math.inf),
    ("small", 0.0, 32.0**2),
    ("medium", 32.0**2, 96.0**2),
    ("large", 96.0**2, math.inf),
)


@dataclass(frozen=True)
class EvalParams:
    iou_thresholds: tuple[float, ...] = tuple(
        round(0.5 + 0.05 * i, 2) for i in range(10)
    )
    recall_points: int = 101
    max_dets: int = 100
    iou_mode: Literal["segm", "bbox"] = "segm"
    area_ranges: tuple[tuple[str, float, float], ...] = _AREA_RANGES


@dataclass(frozen=True)
class ClassMetrics:
    """Per-class scores; None where the class has no ground truth to score."""

    ap: float | None
    ap50: float | None
    ap75: float | None
    ap_small: float | None
    ap_medium: float | None
    ap_large: float | None
    ar100: float | None
    n_gt: int


@dataclass(frozen=True)
class EvalResult:
    per_class: dict[int, ClassMetrics]
    mean_ap: float | None
    mean_ap50: float | None
    mean_ap75: float | None
    mean_ap_small: float | None
    mean_ap_medium: float | None
    mean_ap_large: float | None
    mean_ar100: float | None
    params: EvalParams


@dataclass(frozen=True)
class DiagnosisLadder:
    """Cumulative-correction AP ladder; non-decreasing, ends at 1."""

    c75: float
    c50: float
    loc: float
    sim: float
    oth: float
    bg: float
    fn: float

    def steps(self) -> tuple[tuple[str, float], ...]:
        return (
            ("c75", self.c75),
            ("c50", self.c50),
            ("loc", self.loc),
            ("sim", self.sim),
            ("oth", self.oth),
            ("bg", self.bg),
            ("fn", self.fn),
        )


@dataclass(frozen=True)
class DiagnosisResult:
    per_class: dict[int, DiagnosisLadder]
    mean: DiagnosisLadder | None


# ---------------------------------------------------------------------------
# IoU computation
# ---------------------------------------------------------------------------


class _MaskCache:
    """Lazily rasterized polygon masks keyed by annotation identity."""

    def __init__(self) -> None:
        self._masks: dict[int, np.ndarray] = {}
        self._areas: dict[int, int] = {}

    def mask(self, ann: Annotation, width: int, height: int) -> np.ndarray:
        key = id(ann)
        if key not in self._masks:
            if not ann.segmentation:
                raise DataError(
                    f"annotation {ann.id} has no polygon; use bbox IoU mode"
                )
            m = rasterize_polygons(ann.segmentation, width, height)
            self._masks[key] = m
            self._areas[key] = int(m.sum())
        return self._masks[key]

    def area(self, ann: Annotation, width: int, height: int) -> int:
        self.mask(ann, width, height)
        return self._areas[id(ann)]


def _bbox_pair_iou(det: Annotation, gt: Annotation, crowd: bool) -> float:
    dx, dy, dw, dh = det.bbox
    gx, gy, gw, gh = gt.bbox
    ix = max(0.0, min(dx + dw, gx + gw) - max(dx, gx))
    iy = max(0.0, min(dy + dh, gy + gh) - max(dy, gy))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    da, ga = dw * dh, gw * gh
    denom = da if crowd else da + ga - inter
    return inter / denom if denom > 0 else 0.0


def _mask_pair_iou(
    det: Annotation, gt: Annotation, crowd: bool, cache: _MaskCache, w: int, h: int
) -> float:
    dm = cache.mask(det, w, h)
    gm = cache.mask(gt, w, h)
    inter = int(np.logical_and(dm, gm).sum())
    if inter == 0:
        return 0.0
    da = cache.area(det, w, h)
    denom = da if crowd else da + cache.area(gt, w, h) - inter
    return inter / denom if denom > 0 else 0.0


def _iou_matrix(
    dets: list[Annotation],
    gts: list[Annotation],
    mode: str,
    cache: _MaskCache,
    width: int,
    height: int,
) -> np.ndarray:
    out = np.zeros((len(dets), len(gts)))
    for i, det in enumerate(dets):
        for j, gt in enumerate(gts):
            crowd = bool(gt.iscrowd)
            if mode == "bbox":
                out[i, j] = _bbox_pair_iou(det, gt, crowd)
            else:
                out[i, j] = _mask_pair_iou(det, gt, crowd, cache, width, height)
    return out


def iou_bbox(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    if a[2] <= 0 or a[3] <= 0 or b[2] <= 0 or b[3] <= 0:
        raise DataError(f"degenerate box: {a if a[2] <= 0 or a[3] <= 0 else b}")
    ix = max(0.0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def iou_mask(
    a: list[list[float]],
    b: list[list[float]],
    image_size: tuple[int, int],
) -> float:
    """IoU of two polygon sets rasterized at image resolution (even-odd fill)."""
    w, h = image_size
    am = rasterize_polygons(a, w, h)
    bm = rasterize_polygons(b, w, h)
    inter = int(np.logical_and(am, bm).sum())
    union = int(am.sum()) + int(bm.sum()) - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# matching and accumulation
# ---------------------------------------------------------------------------


def _greedy_match(
    ious: np.ndarray,
    gt_ignore: np.ndarray,
    gt_crowd: np.ndarray,
    thr: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy per-image matching at one IoU threshold.

    Ground truths must already be ordered non-ignored-first (stable in id).
    Returns (matched gt index or -1 per det, det-ignore flags). A detection
    takes the highest-IoU ground truth still available at or above the
    threshold, preferring the lowest id on ties; matches to ignored ground
    truth mark the detection ignored rather than true positive.
    """
    n_det, n_gt = ious.shape
    # plain lists: the inner loop dominates evaluation time, and scalar
    # indexing into numpy arrays is several times slower than list access
    rows = ious.tolist()
    ignore_l = gt_ignore.tolist()
    crowd_l = gt_crowd.tolist()
    gt_taken = [False] * n_gt
    det_match = np.full(n_det, -1, dtype=int)
    det_ignore = np.zeros(n_det, dtype=bool)
    floor = min(thr, 1.0 - 1e-10)
    for d in range(n_det):
        row = rows[d]
        best = floor
        m = -1
        for g in range(n_gt):
            if gt_taken[g] and not crowd_l[g]:
                continue
            if m > -1 and not ignore_l[m] and ignore_l[g]:
                # remaining candidates are all ignored; a real match stands
                break
            v = row[g]
            ok = v >= best if m == -1 else v > best
            if ok:
                best = v
                m = g
        if m == -1:
            continue
        det_match[d] = m
        det_ignore[d] = ignore_l[m]
        if not crowd_l[m]:
            gt_taken[m] = True
    return det_match, det_ignore


@dataclass(frozen=True)
class MatchResult:
    """Outcome of greedy matching on one image and class.

    Detections appear in rank order (score descending, id ascending).
    ``matched_gt[i]`` is the ground-truth id detection i took, or None;
    ``ignored[i]`` marks matches to crowd regions, which count neither as
    true nor false positives.
    """

    det_ids: tuple[int, ...]
    matched_gt: tuple[int | None, ...]
    true_positive: tuple[bool, ...]
    ignored: tuple[bool, ...]
    unmatched_gt: tuple[int, ...]


def match_detections(
    gts: list[Annotation],
    dets: list[Annotation],
    threshold: float,
    *,
    iou_mode: Literal["segm", "bbox"] = "segm",
    image_size: tuple[int, int] = (0, 0),
) -> MatchResult:
    """Greedily match one image's detections to ground truth at one IoU.

    Detections are taken in score-descending order; each claims the
    highest-IoU available ground truth at or above the threshold, lowest
    id on ties. Crowd ground truth can absorb any number of detections,
    which become ignored rather than true positives.
    """
    for det in dets:
        if det.score is None:
            raise DataError(f"detection {det.id} has no score")
    dets = sorted(dets, key=lambda a: (-(a.score or 0.0), a.id))
    gts = sorted(gts, key=lambda a: a.id)
    cache = _MaskCache()
    ious = _iou_matrix(dets, gts, iou_mode, cache, image_size[0], image_size[1])
    gt_ignore = np.array([bool(g.iscrowd) for g in gts], dtype=bool)
    perm = np.argsort(gt_ignore, kind="stable")
    match, det_ig = _greedy_match(
        ious[:, perm] if len(gts) else ious, gt_ignore[perm], gt_ignore[perm], threshold
    )
    gt_order = [gts[i] for i in perm]
    matched = tuple(None if m < 0 else gt_order[m].id for m in match)
    taken = {g for g in matched if g is not None}
    return MatchResult(
        det_ids=tuple(d.id for d in dets),
        matched_gt=matched,
        true_positive=tuple(bool(m >= 0 and not ig) for m, ig in zip(match, det_ig)),
        ignored=tuple(bool(ig) for ig in det_ig),
        unmatched_gt=tuple(g.id for g in gts if g.id not in taken and not g.iscrowd),
    )


def _recall_grid(n: int) -> np.ndarray:
    # correctly-rounded k/(n-1), so recalls that are exact hundredths land
    # on the grid point rather than one ulp to either side of it
    return np.arange(n, dtype=float) / (n - 1)


def _precision_on_grid(
    scores: np.ndarray,
    det_ids: np.ndarray,
    tp: np.ndarray,
    ignore: np.ndarray,
    n_gt: int,
    recall_points: int,
) -> tuple[np.ndarray, float]:
    """Interpolated precision at each recall grid point, plus max recall."""
    order = np.lexsort((det_ids, -scores))
    tp = tp[order]
    ignore = ignore[order]
    keep = ~ignore
    tps = np.cumsum(tp & keep)
    fps = np.cumsum(~tp & keep)
    if len(tps) == 0 or n_gt == 0:
        return np.zeros(recall_points), 0.0
    recall = tps / n_gt
    precision = tps / np.maximum(tps + fps, 1e-12)
    # envelope: precision at recall r is the best precision at recall >= r
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    grid = _recall_grid(recall_points)
    idx = np.searchsorted(recall, grid, side="left")
    q = np.zeros(recall_points)
    valid = idx < len(precision)
    q[valid] = precision[idx[valid]]
    return q, float(recall[-1])


def _ap_from_flags(
    scores: np.ndarray,
    det_ids: np.ndarray,
    tp: np.ndarray,
    ignore: np.ndarray,
    n_gt: int,
    recall_points: int,
) -> tuple[float, float]:
    """Interpolated AP and max recall from pooled per-detection flags."""
    q, rmax = _precision_on_grid(scores, det_ids, tp, ignore, n_gt, recall_points)
    return float(q.mean()), rmax


@dataclass
class _UnitResult:
    """Matching output for one (image, class, stratum): rows per threshold."""

    scores: np.ndarray
    det_ids: np.ndarray
    tp: np.ndarray  # (T, D)
    ignore: np.ndarray  # (T, D)
    n_gt: int


def _evaluate_unit(
    dets: list[Annotation],
    gts: list[Annotation],
    ious: np.ndarray,
    thresholds: tuple[float, ...],
    area_lo: float,
    area_hi: float,
) -> _UnitResult:
    gt_ignore = np.array(
        [bool(g.iscrowd) or not (area_lo <= g.area < area_hi) for g in gts],
        dtype=bool,
    )
    gt_crowd = np.array([bool(g.iscrowd) for g in gts], dtype=bool)
    # stable partition: non-ignored ground truth first, id order within
    perm = np.argsort(gt_ignore, kind="stable")
    gt_ignore_s = gt_ignore[perm]
    gt_crowd_s = gt_crowd[perm]
    ious_s = ious[:, perm] if len(gts) else ious

    n_det = len(dets)
    det_out = np.array(
        [not (area_lo <= d.area < area_hi) for d in dets], dtype=bool
    )
    tp = np.zeros((len(thresholds), n_det), dtype=bool)
    ignore = np.zeros((len(thresholds), n_det), dtype=bool)
    for ti, thr in enumerate(thresholds):
        match, det_ig = _greedy_match(ious_s, gt_ignore_s, gt_crowd_s, thr)
        tp[ti] = (match >= 0) & ~det_ig
        ignore[ti] = det_ig | ((match == -1) & det_out)
    return _UnitResult(
        scores=np.array([d.score for d in dets], dtype=float),
        det_ids=np.array([d.id for d in dets], dtype=int),
        tp=tp,
        ignore=ignore,
        n_gt=int(np.sum(~gt_ignore)),
    )


def _prepare(
    gt: Dataset, detections: list[Annotation], params: EvalParams
) -> tuple[dict[int, dict[int, list[Annotation]]], dict[int, dict[int, list[Annotation]]]]:
    """Bucket ground truth and detections by (class, image), validated."""
    images = gt.image_by_id()
    cat_ids = {c.id for c in gt.categories}
    gt_buckets: dict[int, dict[int, list[Annotation]]] = {c: {} for c in cat_ids}
    for ann in gt.annotations:
        gt_buckets[ann.category_id].setdefault(ann.image_id, []).append(ann)
    for bucket in gt_buckets.values():
        for anns in bucket.values():
            anns.sort(key=lambda a: a.id)

    det_buckets: dict[int, dict[int, list[Annotation]]] = {c: {} for c in cat_ids}
    for det in detections:
        if det.image_id not in images:
            raise DataError(f"detection {det.id} references unknown image {det.image_id}")
        if det.category_id not in cat_ids:
            raise DataError(
                f"detection {det.id} references unknown category {det.category_id}"
            )
        if det.score is None:
            raise DataError(f"detection {det.id} has no score")
        det_buckets[det.category_id].setdefault(det.image_id, []).append(det)
    for bucket in det_buckets.values():
        for image_id, anns in bucket.items():
            anns.sort(key=lambda a: (-(a.score or 0.0), a.id))
            if len(anns) > params.max_dets:
                bucket[image_id] = anns[: params.max_dets]
    return gt_buckets, det_buckets


def evaluate_detections(
    gt: Dataset, detections: list[Annotation], params: EvalParams | None = None
) -> EvalResult:
    """Score detections against ground truth with the interpolated-AP protocol."""
    params = params or EvalParams()
    images = gt.image_by_id()
    gt_buckets, det_buckets = _prepare(gt, detections, params)

    range_names = [r[0] for r in params.area_ranges]
    if "all" not in range_names:
        raise DataError("area ranges must include an 'all' stratum")

    per_class: dict[int, ClassMetrics] = {}
    for cat in sorted(c.id for c in gt.categories):
        cache = _MaskCache()
        image_ids = sorted(set(gt_buckets[cat]) | set(det_buckets[cat]))
        iou_by_image: dict[int, np.ndarray] = {}
        for image_id in image_ids:
            im = images[image_id]
            iou_by_image[image_id] = _iou_matrix(
                det_buckets[cat].get(image_id, []),
                gt_buckets[cat].get(image_id, []),
                params.iou_mode,
                cache,
                im.width,
                im.height,
            )

        ap_by_range: dict[str, list[float] | None] = {}
        recalls_all: list[float] = []
        n_gt_all = 0
        for rname, lo, hi in params.area_ranges:
            units = [
                _evaluate_unit(
                    det_buckets[cat].get(image_id, []),
                    gt_buckets[cat].get(image_id, []),
                    iou_by_image[image_id],
                    params.iou_thresholds,
                    lo,
                    hi,
                )
                for image_id in image_ids
            ]
            n_gt = sum(u.n_gt for u in units)
            if rname == "all":
                n_gt_all = n_gt
            if n_gt == 0:
                ap_by_range[rname] = None
                continue
            scores = np.concatenate([u.scores for u in units]) if units else np.array([])
            det_ids = np.concatenate([u.det_ids for u in units]) if units else np.array([])
            aps = []
            for ti in range(len(params.iou_thresholds)):
                tp = (
                    np.concatenate([u.tp[ti] for u in units])
                    if units
                    else np.array([], dtype=bool)
                )
                ig = (
                    np.concatenate([u.ignore[ti] for u in units])
                    if units
                    else np.array([], dtype=bool)
                )
                ap, rmax = _ap_from_flags(
                    scores, det_ids, tp, ig, n_gt, params.recall_points
                )
                aps.append(ap)
                if rname == "all":
                    recalls_all.append(rmax)
            ap_by_range[rname] = aps

        aps_all = ap_by_range.get("all")
        thr50 = params.iou_thresholds.index(0.5) if 0.5 in params.iou_thresholds else None
        thr75 = params.iou_thresholds.index(0.75) if 0.75 in params.iou_thresholds else None

        def mean_or_none(values: list[float] | None) -> float | None:
            return float(np.mean(values)) if values else None

        per_class[cat] = ClassMetrics(
            ap=mean_or_none(aps_all),
            ap50=(aps_all[thr50] if aps_all and thr50 is not None else None),
            ap75=(aps_all[thr75] if aps_all and thr75 is not None else None),
            ap_small=mean_or_none(ap_by_range.get("small")),
            ap_medium=mean_or_none(ap_by_range.get("medium")),
            ap_large=mean_or_none(ap_by_range.get("large")),
            ar100=(float(np.mean(recalls_all)) if recalls_all else None),
            n_gt=n_gt_all,
        )

    def class_mean(attr: str) -> float | None:
        vals = [getattr(m, attr) for m in per_class.values() if getattr(m, attr) is not None]
        return float(np.mean(vals)) if vals else None

    return EvalResult(
        per_class=per_class,
        mean_ap=class_mean("ap"),
        mean_ap50=class_mean("ap50"),
        mean_ap75=class_mean("ap75"),
        mean_ap_small=class_mean("ap_small"),
        mean_ap_medium=class_mean("ap_medium"),
        mean_ap_large=class_mean("ap_large"),
        mean_ar100=class_mean("ar100"),
        params=params,
    )


@dataclass(frozen=True)
class PRCurve:
    """Interpolated precision over the recall grid, at one IoU threshold."""

    recall: tuple[float, ...]
    precision: tuple[float, ...]
    ap: float | None
    n_gt: int


def pr_curve(
    gt: Dataset,
    detections: list[Annotation],
    class_id: int,
    iou_threshold: float = 0.5,
    params: EvalParams | None = None,
) -> PRCurve:
    """Dataset-wide precision/recall for one class at a single IoU.

    Pooled over all images (all object sizes). A class with no ground
    truth yields ap=None — undefined rather than zero, so it can be
    excluded from means.
    """
    params = params or EvalParams()
    images = gt.image_by_id()
    gt_buckets, det_buckets = _prepare(gt, detections, params)
    if class_id not in gt_buckets:
        raise DataError(f"unknown category id {class_id}")
    cache = _MaskCache()
    units = []
    for image_id in sorted(set(gt_buckets[class_id]) | set(det_buckets[class_id])):
        im = images[image_id]
        dets = det_buckets[class_id].get(image_id, [])
        gts = gt_buckets[class_id].get(image_id, [])
        ious = _iou_matrix(dets, gts, params.iou_mode, cache, im.width, im.height)
        units.append(
            _evaluate_unit(dets, gts, ious, (iou_threshold,), 0.0, math.inf)
        )
    n_gt = sum(u.n_gt for u in units)
    grid = _recall_grid(params.recall_points)
    if n_gt == 0:
        return PRCurve(
            recall=tuple(float(v) for v in grid),
            precision=(0.0,) * params.recall_points,
            ap=None, n_gt=0,
        )
    scores = np.concatenate([u.scores for u in units]) if units else np.array([])
    det_ids = np.concatenate([u.det_ids for u in units]) if units else np.array([])
    tp = (
        np.concatenate([u.tp[0] for u in units])
        if units else np.array([], dtype=bool)
    )
    ig = (
        np.concatenate([u.ignore[0] for u in units])
        if units else np.array([], dtype=bool)
    )
    q, _ = _precision_on_grid(scores, det_ids, tp, ig, n_gt, params.recall_points)
    return PRCurve(
        recall=tuple(float(v) for v in grid),
        precision=tuple(float(v) for v in q),
        ap=float(q.mean()), n_gt=n_gt,
    )


def coco_ap(
    gt: Dataset,
    detections: list[Annotation],
    class_id: int,
    iou_mode: Literal["segm", "bbox"] = "segm",
) -> ClassMetrics:
    """Full metric set for a single class (AP, AP50/75, size strata, AR100)."""
    result = evaluate_detections(gt, detections, EvalParams(iou_mode=iou_mode))
    if class_id not in result.per_class:
        raise DataError(f"unknown category id {class_id}")
    return result.per_class[class_id]


def mean_ap(
    per_class: dict[int, ClassMetrics], class_ids: Iterable[int] | None = None
) -> float | None:
    """Unweighted mean AP over a class subset.

    Classes whose AP is undefined (no ground truth) are excluded; None is
    returned when every class in the subset is undefined.
    """
    ids = list(per_class) if class_ids is None else list(class_ids)
    if not ids:
        raise DataError("mean AP needs at least one class")
    unknown = [i for i in ids if i not in per_class]
    if unknown:
        raise DataError(f"classes not in evaluation result: {unknown}")
    vals = [per_class[i].ap for i in ids if per_class[i].ap is not None]
    return float(np.mean(vals)) if vals else None


# ---------------------------------------------------------------------------
# dataset statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassStats:
    class_name: str
    count: int
    area_mean: float | None
    area_std: float | None
    aspect_mean: float | None
    aspect_std: float | None


@dataclass(frozen=True)
class DatasetStats:
    per_class: tuple[ClassStats, ...]
    total: int
    n_images: int
    condition_tallies: dict[str, dict[str, int]]


def dataset_stats(ds: Dataset, taxonomy: Taxonomy | None = None) -> DatasetStats:
    """Per-class annotation statistics: counts, areas, aspect ratios.

    Area is the polygon (shoelace) area when a segmentation is present,
    otherwise the stored annotation area. Aspect ratio is bbox height over
    width. Standard deviations are population (ddof=0). Classes are
    reported in taxonomy order when a taxonomy is given, dataset category
    order otherwise; image-level condition tags named ``weather`` or
    ``evening`` are tallied per annotation when present.
    """
    if taxonomy is not None:
        order = [c.name for c in taxonomy.classes]
        known = {c.name for c in ds.categories}
        names = [n for n in order if n in known] + sorted(known - set(order))
    else:
        names = [c.name for c in sorted(ds.categories, key=lambda c: c.id)]
    by_name: dict[str, list[Annotation]] = {n: [] for n in names}
    cat_names = {c.id: c.name for c in ds.categories}
    images = ds.image_by_id()
    tallies: dict[str, dict[str, int]] = {}
    for ann in ds.annotations:
        by_name[cat_names[ann.category_id]].append(ann)
        extra = images[ann.image_id].extra
        for key in ("weather", "evening"):
            if key in extra:
                bucket = tallies.setdefault(key, {})
                value = str(extra[key])
                bucket[value] = bucket.get(value, 0) + 1

    rows = []
    for name in names:
        anns = by_name[name]
        if not anns:
            rows.append(ClassStats(name, 0, None, None, None, None))
            continue
        areas = np.array(
            [
                polygons_area(a.segmentation) if a.segmentation else a.area
                for a in anns
            ]
        )
        aspects = np.array([a.bbox[3] / a.bbox[2] for a in anns if a.bbox[2] > 0])
        rows.append(
            ClassStats(
                class_name=name,
                count=len(anns),
                area_mean=float(areas.mean()),
                area_std=float(areas.std()),
                aspect_mean=float(aspects.mean()) if len(aspects) else None,
                aspect_std=float(aspects.std()) if len(aspects) else None,
            )
        )
    return DatasetStats(
        per_class=tuple(rows),
        total=len(ds.annotations),
        n_images=len(ds.images),
        condition_tallies=tallies,
    )


# ---------------------------------------------------------------------------
# error diagnosis ladder
# ---------------------------------------------------------------------------

_LOC_IOU = 0.10


def diagnose_errors(
    gt: Dataset, detections: list[Annotation], params: EvalParams | None = None
) -> DiagnosisResult:
    """Cumulative error ladder per class (all object sizes pooled).

    One matching pass runs at IoU 0.10; every stage reuses it. C75/C50
    re-flag matched pairs below the stricter threshold as localization
    false positives; Sim then ignores unmatched detections overlapping a
    same-super-category ground truth at 0.10, Oth those overlapping any
    other-class ground truth, BG every remaining false positive, and FN is
    1 by definition. Nesting makes the ladder exactly non-decreasing.
    """
    params = params or EvalParams()
    images = gt.image_by_id()
    gt_buckets, det_buckets = _prepare(gt, detections, params)
    supercat = {c.id: c.supercategory for c in gt.categories}
    gt_by_image: dict[int, list[Annotation]] = {}
    for ann in gt.annotations:
        gt_by_image.setdefault(ann.image_id, []).append(ann)

    per_class: dict[int, DiagnosisLadder] = {}
    for cat in sorted(c.id for c in gt.categories):
        cache = _MaskCache()
        image_ids = sorted(set(gt_buckets[cat]) | set(det_buckets[cat]))
        scores_l, ids_l = [], []
        pair_iou_l, sim_l, oth_l, ig_l = [], [], [], []
        n_gt = 0
        for image_id in image_ids:
            im = images[image_id]
            dets = det_buckets[cat].get(image_id, [])
            gts = gt_buckets[cat].get(image_id, [])
            ious = _iou_matrix(dets, gts, params.iou_mode, cache, im.width, im.height)
            gt_ignore = np.array([bool(g.iscrowd) for g in gts], dtype=bool)
            gt_crowd = gt_ignore.copy()
            perm = np.argsort(gt_ignore, kind="stable")
            match, det_ig = _greedy_match(
                ious[:, perm] if len(gts) else ious,
                gt_ignore[perm],
                gt_crowd[perm],
                _LOC_IOU,
            )
            n_gt += int(np.sum(~gt_ignore))

            others = [
                g
                for g in gt_by_image.get(image_id, [])
                if g.category_id != cat
            ]
            for di, det in enumerate(dets):
                scores_l.append(det.score)
                ids_l.append(det.id)
                ig_l.append(bool(det_ig[di]))
                if match[di] >= 0:
                    pair_iou_l.append(float(ious[di, perm[match[di]]]))
                    sim_l.append(False)
                    oth_l.append(False)
                    continue
                pair_iou_l.append(-1.0)
                sim_hit = oth_hit = False
                for g in others:
                    v = (
                        _bbox_pair_iou(det, g, bool(g.iscrowd))
                        if params.iou_mode == "bbox"
                        else _mask_pair_iou(
                            det, g, bool(g.iscrowd), cache, im.width, im.height
                        )
                    )
                    if v >= _LOC_IOU:
                        oth_hit = True
                        if supercat.get(g.category_id) == supercat.get(cat):
                            sim_hit = True
                            break
                sim_l.append(sim_hit)
                oth_l.append(oth_hit)

        if n_gt == 0:
            continue
        scores = np.array(scores_l, dtype=float)
        det_ids = np.array(ids_l, dtype=int)
        pair_iou = np.array(pair_iou_l)
        base_ig = np.array(ig_l, dtype=bool)
        sim_extra = np.array(sim_l, dtype=bool)
        oth_extra = np.array(oth_l, dtype=bool)
        matched = pair_iou >= 0

        def ap_of(tp: np.ndarray, ig: np.ndarray) -> float:
            return _ap_from_flags(scores, det_ids, tp, ig, n_gt, params.recall_points)[0]

        tp_loc = matched & ~base_ig
        c75 = ap_of(matched & (pair_iou >= 0.75) & ~base_ig, base_ig)
        c50 = ap_of(matched & (pair_iou >= 0.50) & ~base_ig, base_ig)
        loc = ap_of(tp_loc, base_ig)
        ig_sim = base_ig | (~matched & sim_extra)
        sim = ap_of(tp_loc, ig_sim)
        ig_oth = ig_sim | (~matched & oth_extra)
        oth = ap_of(tp_loc, ig_oth)
        ig_bg = ig_oth | ~tp_loc
        bg = ap_of(tp_loc, ig_bg)
        per_class[cat] = DiagnosisLadder(
            c75=c75, c50=c50, loc=loc, sim=sim, oth=oth, bg=bg, fn=1.0
        )

    mean = None
    if per_class:
        vals = list(per_class.values())

        def m(attr: str) -> float:
            return float(np.mean([getattr(v, attr) for v in vals]))

        mean = DiagnosisLadder(
            c75=m("c75"), c50=m("c50"), loc=m("loc"), sim=m("sim"), oth=m("oth"),
            bg=m("bg"), fn=1.0,
        )
    return DiagnosisResult(per_class=per_class, mean=mean)
