"""Second, independent implementation of the detection-evaluation protocol.

Used only as a cross-check oracle in tests. The code is deliberately
structured differently from ``posmap.evaluation``: masks are rasterized as
local bounding-box patches with a vectorized crossing-number test, matching
stores per-threshold gt/det assignment tables, and the accumulation stage
interpolates the PR curve with a linear scan instead of searchsorted.

It follows the same documented conventions: detections ranked by
(-score, id), greedy matching that prefers the lowest gt id on IoU ties,
crowd IoU as intersection over detection area, unmatched detections outside
the area stratum ignored, 101-point interpolated AP, and per-class metrics
that are None when the class has no ground truth.
"""

from __future__ import annotations

import math

import numpy as np

AREA_RANGES = {
    "all": (0.0, math.inf),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, math.inf),
}
IOU_THRESHOLDS = [0.5 + 0.05 * i for i in range(10)]


class PatchMask:
    """Polygon set rasterized only over its own integer bounding box."""

    def __init__(self, polygons, width, height):
        xs = np.concatenate([np.asarray(p[0::2], dtype=float) for p in polygons])
        ys = np.concatenate([np.asarray(p[1::2], dtype=float) for p in polygons])
        self.x0 = max(0, int(math.floor(xs.min())) - 1)
        self.y0 = max(0, int(math.floor(ys.min())) - 1)
        x1 = min(width, int(math.ceil(xs.max())) + 1)
        y1 = min(height, int(math.ceil(ys.max())) + 1)
        w = max(0, x1 - self.x0)
        h = max(0, y1 - self.y0)
        patch = np.zeros((h, w), dtype=bool)
        if w > 0 and h > 0:
            cx = self.x0 + np.arange(w) + 0.5
            cy = self.y0 + np.arange(h) + 0.5
            gx = cx[None, :, None]  # (1, w, 1)
            gy = cy[:, None, None]  # (h, 1, 1)
            for poly in polygons:
                px = np.asarray(poly[0::2], dtype=float)
                py = np.asarray(poly[1::2], dtype=float)
                qx = np.roll(px, -1)
                qy = np.roll(py, -1)
                # even-odd crossing number against each edge, all pixels at once
                straddle = (py[None, None, :] <= gy) != (qy[None, None, :] <= gy)
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = (gy - py[None, None, :]) / (qy - py)[None, None, :]
                    xhit = px[None, None, :] + t * (qx - px)[None, None, :]
                crossings = np.sum(straddle & (gx < xhit), axis=2)
                patch |= (crossings % 2).astype(bool)
        self.patch = patch
        self.area = int(patch.sum())

    def intersection(self, other: "PatchMask") -> int:
        x0 = max(self.x0, other.x0)
        y0 = max(self.y0, other.y0)
        x1 = min(self.x0 + self.patch.shape[1], other.x0 + other.patch.shape[1])
        y1 = min(self.y0 + self.patch.shape[0], other.y0 + other.patch.shape[0])
        if x1 <= x0 or y1 <= y0:
            return 0
        a = self.patch[y0 - self.y0 : y1 - self.y0, x0 - self.x0 : x1 - self.x0]
        b = other.patch[y0 - other.y0 : y1 - other.y0, x0 - other.x0 : x1 - other.x0]
        return int(np.sum(a & b))


def _iou_pair_bbox(det, gt, crowd):
    ax, ay, aw, ah = det["bbox"]
    bx, by, bw, bh = gt["bbox"]
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    denom = aw * ah if crowd else aw * ah + bw * bh - inter
    return inter / denom if denom > 0 else 0.0


def _iou_pair_mask(det, gt, crowd):
    inter = det["mask"].intersection(gt["mask"])
    if inter == 0:
        return 0.0
    denom = (
        det["mask"].area
        if crowd
        else det["mask"].area + gt["mask"].area - inter
    )
    return inter / denom if denom > 0 else 0.0


def _match_one_image(dets, gts, ious, thresholds, lo, hi):
    """pycocotools-style assignment tables for one (image, class, stratum).

    Returns dict with scores, det ids, and per-threshold tp / ignore rows.
    """
    n_d, n_g = len(dets), len(gts)
    gt_ig = np.array(
        [g["iscrowd"] or not (lo <= g["area"] < hi) for g in gts], dtype=bool
    )
    gt_order = np.argsort(gt_ig, kind="stable")
    T = len(thresholds)
    gtm = np.zeros((T, n_g), dtype=int) - 1
    dtm = np.zeros((T, n_d), dtype=int) - 1
    dt_ig = np.zeros((T, n_d), dtype=bool)
    for ti, thr in enumerate(thresholds):
        for di in range(n_d):
            best = min(thr, 1.0 - 1e-10)
            m = -1
            for gi in gt_order:
                if gtm[ti, gi] >= 0 and not gts[gi]["iscrowd"]:
                    continue
                if m > -1 and not gt_ig[m] and gt_ig[gi]:
                    break
                v = ious[di, gi]
                if m == -1:
                    if v >= best:
                        best, m = v, gi
                elif v > best:
                    best, m = v, gi
            if m == -1:
                continue
            dtm[ti, di] = m
            gtm[ti, m] = di
            dt_ig[ti, di] = gt_ig[m]
    out_of_stratum = np.array(
        [not (lo <= d["area"] < hi) for d in dets], dtype=bool
    )
    for ti in range(T):
        dt_ig[ti] |= (dtm[ti] == -1) & out_of_stratum
    return {
        "scores": np.array([d["score"] for d in dets], dtype=float),
        "ids": np.array([d["id"] for d in dets], dtype=int),
        "tp": (dtm >= 0) & ~dt_ig,
        "ig": dt_ig,
        "n_gt": int(np.sum(~gt_ig)),
    }


def _interp_ap(scores, ids, tp, ig, n_gt, n_points=101):
    """101-point AP via explicit envelope + linear-scan interpolation."""
    rank = sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))
    flags = [bool(tp[i]) for i in rank if not ig[i]]
    cum_tp, cum_fp = 0, 0
    recall, precision = [], []
    for flag in flags:
        cum_tp += int(flag)
        cum_fp += int(not flag)
        recall.append(cum_tp / n_gt)
        precision.append(cum_tp / (cum_tp + cum_fp))
    for i in range(len(precision) - 2, -1, -1):
        if precision[i + 1] > precision[i]:
            precision[i] = precision[i + 1]
    total = 0.0
    j = 0
    max_recall = recall[-1] if recall else 0.0
    for k in range(n_points):
        r = k / (n_points - 1)
        while j < len(recall) and recall[j] < r:
            j += 1
        if j < len(precision):
            total += precision[j]
    return total / n_points, max_recall


def _ann_to_entry(ann, image_sizes, iou_mode):
    entry = {
        "id": ann.id,
        "bbox": tuple(ann.bbox),
        "area": ann.area,
        "iscrowd": bool(ann.iscrowd),
        "score": ann.score,
    }
    if iou_mode == "segm":
        w, h = image_sizes[ann.image_id]
        entry["mask"] = PatchMask(ann.segmentation, w, h)
        # crowd regions keep their annotated area for stratum gating
    return entry


def reference_evaluate(gt_dataset, detections, iou_mode="segm", max_dets=100):
    """Full per-class metric table, independently computed.

    Returns {category_id: {ap, ap50, ap75, ap_small, ap_medium, ap_large,
    ar100, n_gt}} where undefined values are None, plus a "means" entry.
    """
    image_sizes = {im.id: (im.width, im.height) for im in gt_dataset.images}
    cats = sorted(c.id for c in gt_dataset.categories)

    gt_by: dict[tuple[int, int], list] = {}
    for ann in gt_dataset.annotations:
        gt_by.setdefault((ann.category_id, ann.image_id), []).append(ann)
    det_by: dict[tuple[int, int], list] = {}
    for ann in detections:
        det_by.setdefault((ann.category_id, ann.image_id), []).append(ann)

    table = {}
    for cat in cats:
        image_ids = sorted(
            {img for c, img in gt_by if c == cat}
            | {img for c, img in det_by if c == cat}
        )
        per_image = []
        for img in image_ids:
            gts = sorted(gt_by.get((cat, img), []), key=lambda a: a.id)
            dets = sorted(
                det_by.get((cat, img), []), key=lambda a: (-a.score, a.id)
            )[:max_dets]
            g_entries = [_ann_to_entry(g, image_sizes, iou_mode) for g in gts]
            d_entries = [_ann_to_entry(d, image_sizes, iou_mode) for d in dets]
            ious = np.zeros((len(d_entries), len(g_entries)))
            for i, d in enumerate(d_entries):
                for j, g in enumerate(g_entries):
                    pair = _iou_pair_mask if iou_mode == "segm" else _iou_pair_bbox
                    ious[i, j] = pair(d, g, g["iscrowd"])
            per_image.append((d_entries, g_entries, ious))

        row = {}
        for rname, (lo, hi) in AREA_RANGES.items():
            units = [
                _match_one_image(d, g, i, IOU_THRESHOLDS, lo, hi)
                for d, g, i in per_image
            ]
            n_gt = sum(u["n_gt"] for u in units)
            if rname == "all":
                row["n_gt"] = n_gt
            if n_gt == 0:
                row[rname] = None
                continue
            aps, recalls = [], []
            for ti in range(len(IOU_THRESHOLDS)):
                scores = np.concatenate([u["scores"] for u in units])
                ids = np.concatenate([u["ids"] for u in units])
                tp = np.concatenate([u["tp"][ti] for u in units])
                ig = np.concatenate([u["ig"][ti] for u in units])
                ap, r = _interp_ap(scores, ids, tp, ig, n_gt)
                aps.append(ap)
                recalls.append(r)
            row[rname] = {"aps": aps, "recalls": recalls}

        all_part = row.get("all")
        table[cat] = {
            "ap": None if all_part is None else float(np.mean(all_part["aps"])),
            "ap50": None if all_part is None else all_part["aps"][0],
            "ap75": None if all_part is None else all_part["aps"][5],
            "ap_small": (
                None if row["small"] is None else float(np.mean(row["small"]["aps"]))
            ),
            "ap_medium": (
                None if row["medium"] is None else float(np.mean(row["medium"]["aps"]))
            ),
            "ap_large": (
                None if row["large"] is None else float(np.mean(row["large"]["aps"]))
            ),
            "ar100": (
                None if all_part is None else float(np.mean(all_part["recalls"]))
            ),
            "n_gt": row["n_gt"],
        }

    means = {}
    for key in ("ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large", "ar100"):
        vals = [t[key] for t in table.values() if t[key] is not None]
        means[key] = float(np.mean(vals)) if vals else None
    table["means"] = means
    return table
