"""Command-line interface.

Every subcommand that writes files also writes a run manifest recording the
exact argument vector, resolved options, SHA-256 of each input, the output
paths, library versions, and wall time — enough to reproduce or audit a
run. Exit codes: 2 for configuration problems, 3 for bad data, 4 for
numeric/geometry failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import (
    calibrate_intrinsics_planar,
    load_correspondences,
    load_planar_views,
    solve_extrinsics,
)
from .camera import CameraModel, Distortion, Intrinsics, load_camera, save_camera
from .coco import (
    Dataset,
    export_labelme,
    filter_for_annotation,
    load_dataset,
    load_detections,
    save_dataset,
    split_dataset,
)
from .density import kde_raster, load_density, merge_rasters, save_density
from .errors import ConfigError, DataError, PosmapError
from .evaluation import (
    EvalParams,
    dataset_stats,
    diagnose_errors,
    evaluate_detections,
    mean_ap,
    pr_curve,
)
from .mapping import (
    MapExtent,
    SizePriors,
    load_observations,
    map_frame,
    save_observations,
)
from .simulate import SimConfig, default_camera, simulate
from .taxonomy import default_taxonomy, default_treatments, load_taxonomy

# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(
    where: Path,
    args: argparse.Namespace,
    inputs: list[Path],
    outputs: list[Path],
    t0: float,
) -> Path:
    resolved = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k != "func" and not k.startswith("_")
    }
    manifest = {
        "argv": sys.argv,
        "config": resolved,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "versions": {
            "posmap": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "elapsed_s": round(time.perf_counter() - t0, 3),
    }
    if "seed" in resolved:
        manifest["seed"] = resolved["seed"]
    if where.is_dir():
        path = where / "manifest.json"
    else:
        path = where.with_name(where.stem + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _load_extent(path: str | Path) -> MapExtent:
    try:
        doc = json.loads(Path(path).read_text())
        return MapExtent(
            origin=(float(doc["origin"][0]), float(doc["origin"][1])),
            rotation=float(doc["rotation"]),
            width=float(doc["width"]),
            length=float(doc["length"]),
        )
    except FileNotFoundError:
        raise DataError(f"extent file {path} not found") from None
    except (json.JSONDecodeError, KeyError, IndexError, TypeError, ValueError) as e:
        raise DataError(f"extent file {path} is malformed: {e}") from e


def _save_extent(path: Path, extent: MapExtent) -> None:
    path.write_text(
        json.dumps(
            {
                "origin": list(extent.origin),
                "rotation": extent.rotation,
                "width": extent.width,
                "length": extent.length,
            },
            indent=2,
        )
        + "\n"
    )


def _load_intrinsics_file(path: str | Path) -> tuple[Intrinsics, Distortion, tuple[int, int]]:
    """Read a camera JSON that may or may not have a pose yet."""
    try:
        doc = json.loads(Path(path).read_text())
        intr = doc["intrinsics"]
        dist = doc.get("distortion", {})
        intrinsics = Intrinsics(
            fx=float(intr["fx"]),
            fy=float(intr["fy"]),
            cx=float(intr["cx"]),
            cy=float(intr["cy"]),
            skew=float(intr.get("skew", 0.0)),
        )
        distortion = Distortion(
            k1=float(dist.get("k1", 0.0)),
            k2=float(dist.get("k2", 0.0)),
            k3=float(dist.get("k3", 0.0)),
            p1=float(dist.get("p1", 0.0)),
            p2=float(dist.get("p2", 0.0)),
        )
        size = (int(doc["image_size"][0]), int(doc["image_size"][1]))
        return intrinsics, distortion, size
    except FileNotFoundError:
        raise DataError(f"intrinsics file {path} not found") from None
    except (json.JSONDecodeError, KeyError, IndexError, TypeError, ValueError) as e:
        raise DataError(f"intrinsics file {path} is malformed: {e}") from e


def _resolve_treatment(name: str, taxonomy_path: str | None):
    if taxonomy_path is not None:
        tax, treatments = load_taxonomy(taxonomy_path)
        if not treatments:
            treatments = default_treatments(tax)
    else:
        tax = default_taxonomy()
        treatments = default_treatments(tax)
    if name not in treatments:
        raise ConfigError(
            f"unknown treatment {name!r}; available: {', '.join(sorted(treatments))}"
        )
    return treatments[name]


def _fmt(v: float | None, digits: int = 4) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def cmd_calibrate_intrinsics(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    views = load_planar_views(args.views)
    result = calibrate_intrinsics_planar(
        views, fit_distortion=not args.no_distortion, fix_skew=args.fix_skew
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "units": "m-px",
        "image_size": [args.image_size[0], args.image_size[1]],
        "intrinsics": {
            "fx": result.intrinsics.fx,
            "fy": result.intrinsics.fy,
            "cx": result.intrinsics.cx,
            "cy": result.intrinsics.cy,
            "skew": result.intrinsics.skew,
        },
        "distortion": {
            "k1": result.distortion.k1,
            "k2": result.distortion.k2,
            "k3": result.distortion.k3,
            "p1": result.distortion.p1,
            "p2": result.distortion.p2,
        },
        "rms_px": result.rms_px,
    }
    out.write_text(json.dumps(doc, indent=2) + "\n")
    _write_manifest(out, args, [Path(args.views)], [out], t0)
    print(
        f"calibrated from {len(views)} views: "
        f"fx={result.intrinsics.fx:.2f} fy={result.intrinsics.fy:.2f} "
        f"cx={result.intrinsics.cx:.2f} cy={result.intrinsics.cy:.2f} "
        f"rms={result.rms_px:.4f} px"
    )
    return 0


def cmd_calibrate_extrinsics(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    intrinsics, distortion, image_size = _load_intrinsics_file(args.intrinsics)
    world, pixels = load_correspondences(args.points)
    result = solve_extrinsics(intrinsics, distortion, world, pixels)
    camera = CameraModel(
        intrinsics=intrinsics,
        distortion=distortion,
        pose=result.pose,
        image_size=image_size,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_camera(out, camera)
    _write_manifest(out, args, [Path(args.intrinsics), Path(args.points)], [out], t0)
    c = camera.pose.camera_center
    print(
        f"solved pose from {len(world)} points: rms={result.rms_px:.4f} px, "
        f"camera at ({c[0]:.2f}, {c[1]:.2f}, {c[2]:.2f}) m"
    )
    return 0


# ---------------------------------------------------------------------------
# project
# ---------------------------------------------------------------------------


def cmd_project(args: argparse.Namespace) -> int:
    camera = load_camera(args.camera)
    if args.pixel is not None:
        x, y = camera.back_project_ground(args.pixel[0], args.pixel[1])
        print(f"{x:.6f} {y:.6f}")
    else:
        u, v = camera.project(np.array(args.world))
        print(f"{u:.6f} {v:.6f}")
    return 0


# ---------------------------------------------------------------------------
# map
# ---------------------------------------------------------------------------


def _map_one_image(payload):
    (camera, anns, class_names, treatment, extent, priors, ts, image_id, source) = payload
    return map_frame(
        camera,
        anns,
        class_names,
        treatment,
        extent=extent,
        priors=priors,
        timestamp=ts,
        image_id=image_id,
        source=source,
    )


def _parse_priors(specs: list[str] | None) -> SizePriors:
    if not specs:
        return SizePriors()
    table = dict(SizePriors().by_class)
    for spec in specs:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"prior {spec!r} must look like class:width:length")
        try:
            table[parts[0]] = (float(parts[1]), float(parts[2]))
        except ValueError as e:
            raise ConfigError(f"prior {spec!r} has non-numeric size: {e}") from e
    return SizePriors(by_class=table)


def cmd_map(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    camera = load_camera(args.camera)
    ds = load_dataset(args.annotations)
    treatment = _resolve_treatment(args.treatment, args.taxonomy)
    extent = _load_extent(args.extent) if args.extent else None
    priors = _parse_priors(args.prior)
    class_names = {c.id: c.name for c in ds.categories}
    by_image = ds.anns_by_image()
    images = sorted(ds.images, key=lambda im: im.id)

    payloads = []
    for index, image in enumerate(images):
        raw_ts = image.extra.get("timestamp")
        ts = float(raw_ts) if raw_ts is not None else index / args.fps
        payloads.append(
            (
                camera,
                by_image.get(image.id, []),
                class_names,
                treatment,
                extent,
                priors,
                ts,
                image.id,
                args.source,
            )
        )
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            frames = list(pool.map(_map_one_image, payloads, chunksize=16))
    else:
        frames = [_map_one_image(p) for p in payloads]

    if args.sample_rate is not None:
        from .density import accumulate, collect

        store: dict = {}
        accumulate(store, frames, sample_rate_hz=args.sample_rate)
        observations = collect(store)
    else:
        observations = [o for f in frames for o in f.observations]

    out = Path(args.out)
    save_observations(out, observations)
    inputs = [Path(args.camera), Path(args.annotations)]
    if args.extent:
        inputs.append(Path(args.extent))
    if args.taxonomy:
        inputs.append(Path(args.taxonomy))
    _write_manifest(out, args, inputs, [out], t0)

    n_out = sum(len(f.out_of_extent) for f in frames)
    n_fail = sum(len(f.failures) for f in frames)
    total_runtime = sum(f.runtime_s for f in frames)
    print(
        f"mapped {len(observations)} observations from {len(images)} images "
        f"({n_out} outside extent, {n_fail} geometry failures, "
        f"{total_runtime:.3f} s mapping time)"
    )
    for frame in frames:
        for ann_id, reason in frame.failures:
            print(f"  annotation {ann_id}: {reason}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# density
# ---------------------------------------------------------------------------


def cmd_density(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    if args.merge:
        grids = [load_density(base) for base in args.merge]
        merged = grids[0]
        for grid in grids[1:]:
            merged = merge_rasters(merged, grid)
        paths = save_density(out, merged)
        inputs = [Path(b).with_suffix(".csv") for b in args.merge] + [
            Path(b).with_suffix(".json") for b in args.merge
        ]
        _write_manifest(out.with_suffix(".json"), args, inputs, list(paths.values()), t0)
        print(
            f"merged {len(grids)} rasters: {merged.total_count} observations, "
            f"mass {merged.mass():.6f}"
        )
        return 0

    if not args.observations or not args.extent:
        raise ConfigError("density needs --observations and --extent (or --merge)")
    observations = load_observations(args.observations)
    extent = _load_extent(args.extent)
    bandwidth = None if args.bandwidth in (None, "auto") else float(args.bandwidth)
    classes = tuple(args.classes.split(",")) if args.classes else None
    grid = kde_raster(
        observations, extent, args.cell, bandwidth=bandwidth, classes=classes
    )
    paths = save_density(out, grid)
    _write_manifest(
        out.with_suffix(".json"),
        args,
        [Path(args.observations), Path(args.extent)],
        list(paths.values()),
        t0,
    )
    print(
        f"rasterized {grid.total_count} observations onto "
        f"{grid.shape[1]}x{grid.shape[0]} cells "
        f"(bandwidth {grid.bandwidth:.3f} m, mass {grid.mass():.6f})"
    )
    return 0


# ---------------------------------------------------------------------------
# eval / diagnose
# ---------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    gt = load_dataset(args.gt)
    dets = load_detections(args.detections)
    if args.treatment:
        from .coco import remap_annotations, remap_categories

        treatment = _resolve_treatment(args.treatment, args.taxonomy)
        dets = remap_annotations(dets, list(gt.categories), treatment)
        gt = remap_categories(gt, treatment)
    params = EvalParams(iou_mode=args.iou_mode, max_dets=args.max_dets)
    result = evaluate_detections(gt, dets, params)
    names = {c.id: c.name for c in gt.categories}
    for cat_id in sorted(result.per_class):
        m = result.per_class[cat_id]
        print(
            f"{names[cat_id]:>14s}  AP {_fmt(m.ap)}  AP50 {_fmt(m.ap50)}  "
            f"AP75 {_fmt(m.ap75)}  small {_fmt(m.ap_small)}  "
            f"medium {_fmt(m.ap_medium)}  large {_fmt(m.ap_large)}  "
            f"AR100 {_fmt(m.ar100)}  n_gt {m.n_gt}"
        )
    people_ids = [c.id for c in gt.categories if c.supercategory == "people"]
    map_people = mean_ap(result.per_class, people_ids) if people_ids else None
    print(
        f"{'mean':>14s}  AP {_fmt(result.mean_ap)}  AP50 {_fmt(result.mean_ap50)}  "
        f"AP75 {_fmt(result.mean_ap75)}  small {_fmt(result.mean_ap_small)}  "
        f"medium {_fmt(result.mean_ap_medium)}  large {_fmt(result.mean_ap_large)}  "
        f"AR100 {_fmt(result.mean_ar100)}"
    )
    print(f"{'people mAP':>14s}  {_fmt(map_people)}")
    outputs = []
    if args.pr_curves:
        pr_path = Path(args.pr_curves)
        pr_path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["class,recall,precision"]
        for cat_id in sorted(result.per_class):
            curve = pr_curve(gt, dets, cat_id, iou_threshold=0.5, params=params)
            if curve.ap is None:
                continue
            for r, p in zip(curve.recall, curve.precision):
                lines.append(f"{names[cat_id]},{r!r},{p!r}")
        pr_path.write_text("\n".join(lines) + "\n")
        outputs.append(pr_path)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "per_class": {
                names[cat_id]: {
                    "ap": m.ap,
                    "ap50": m.ap50,
                    "ap75": m.ap75,
                    "ap_small": m.ap_small,
                    "ap_medium": m.ap_medium,
                    "ap_large": m.ap_large,
                    "ar100": m.ar100,
                    "n_gt": m.n_gt,
                }
                for cat_id, m in result.per_class.items()
            },
            "mean": {
                "ap": result.mean_ap,
                "ap50": result.mean_ap50,
                "ap75": result.mean_ap75,
                "ap_small": result.mean_ap_small,
                "ap_medium": result.mean_ap_medium,
                "ap_large": result.mean_ap_large,
                "ar100": result.mean_ar100,
            },
            "map_people": map_people,
            "map_overall": result.mean_ap,
            "iou_mode": args.iou_mode,
        }
        out.write_text(json.dumps(doc, indent=2) + "\n")
        outputs.append(out)
        _write_manifest(out, args, [Path(args.gt), Path(args.detections)], outputs, t0)
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    gt = load_dataset(args.gt)
    dets = load_detections(args.detections)
    params = EvalParams(iou_mode=args.iou_mode, max_dets=args.max_dets)
    result = diagnose_errors(gt, dets, params)
    names = {c.id: c.name for c in gt.categories}
    header = f"{'class':>14s}  " + "  ".join(
        f"{s:>6s}" for s in ("C75", "C50", "Loc", "Sim", "Oth", "BG", "FN")
    )
    print(header)
    for cat_id in sorted(result.per_class):
        ladder = result.per_class[cat_id]
        print(
            f"{names[cat_id]:>14s}  "
            + "  ".join(f"{v:6.4f}" for _, v in ladder.steps())
        )
    if result.mean is not None:
        print(f"{'mean':>14s}  " + "  ".join(f"{v:6.4f}" for _, v in result.mean.steps()))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "per_class": {
                names[cat_id]: dict(ladder.steps())
                for cat_id, ladder in result.per_class.items()
            },
            "mean": dict(result.mean.steps()) if result.mean else None,
            "iou_mode": args.iou_mode,
        }
        out.write_text(json.dumps(doc, indent=2) + "\n")
        _write_manifest(out, args, [Path(args.gt), Path(args.detections)], [out], t0)
    return 0


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def cmd_stats(args: argparse.Namespace) -> int:
    ds = load_dataset(args.annotations)
    taxonomy = load_taxonomy(args.taxonomy)[0] if args.taxonomy else default_taxonomy()
    if args.treatment:
        from .coco import remap_categories

        ds = remap_categories(ds, _resolve_treatment(args.treatment, args.taxonomy))
    stats = dataset_stats(ds, taxonomy)
    print(
        f"{'class':>14s}  {'count':>7s}  {'area_mean':>10s}  {'area_std':>10s}  "
        f"{'aspect_mean':>11s}  {'aspect_std':>10s}"
    )
    rows = []
    for cs in stats.per_class:
        rows.append(
            {
                "class": cs.class_name,
                "count": cs.count,
                "area_mean": cs.area_mean,
                "area_std": cs.area_std,
                "aspect_mean": cs.aspect_mean,
                "aspect_std": cs.aspect_std,
            }
        )
        if cs.count == 0:
            continue
        print(
            f"{cs.class_name:>14s}  {cs.count:>7d}  {cs.area_mean:>10.1f}  "
            f"{cs.area_std:>10.1f}  "
            f"{_fmt(cs.aspect_mean, 2):>11s}  {_fmt(cs.aspect_std, 2):>10s}"
        )
    print(f"{'total':>14s}  {stats.total:>7d}  (images: {stats.n_images})")
    for tag, tally in sorted(stats.condition_tallies.items()):
        counts = ", ".join(f"{k}: {v}" for k, v in sorted(tally.items()))
        print(f"{tag:>14s}  {counts}")
    if args.out:
        doc = {"per_class": rows, "conditions": stats.condition_tallies}
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return 0


# ---------------------------------------------------------------------------
# filter-annotations / export-labelme / split
# ---------------------------------------------------------------------------


def cmd_filter(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    dets = load_detections(args.detections)
    kept = filter_for_annotation(
        dets, score_threshold=args.score, min_area_px=args.min_area
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for ann in kept:
        row = {
            "id": ann.id,
            "image_id": ann.image_id,
            "category_id": ann.category_id,
            "bbox": list(ann.bbox),
            "area": ann.area,
            "segmentation": [list(p) for p in ann.segmentation],
        }
        if ann.score is not None:
            row["score"] = ann.score
        rows.append(row)
    out.write_text(json.dumps(rows, indent=2) + "\n")
    _write_manifest(out, args, [Path(args.detections)], [out], t0)
    print(
        f"kept {len(kept)} of {len(dets)} detections "
        f"(score >= {args.score}, area >= {args.min_area} px^2)"
    )
    return 0


def cmd_export_labelme(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    ds = load_dataset(args.annotations)
    out_dir = Path(args.out_dir)
    written = export_labelme(ds, out_dir)
    _write_manifest(out_dir, args, [Path(args.annotations)], written, t0)
    print(f"wrote {len(written)} polygon files to {out_dir}")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    ds = load_dataset(args.annotations)
    train, test = split_dataset(
        ds, args.fraction, args.seed, stratify_key=args.stratify
    )
    out_train = Path(args.out_train)
    out_test = Path(args.out_test)
    out_train.parent.mkdir(parents=True, exist_ok=True)
    out_test.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out_train, train)
    save_dataset(out_test, test)
    _write_manifest(
        out_train, args, [Path(args.annotations)], [out_train, out_test], t0
    )
    print(
        f"split {len(ds.images)} images into {len(train.images)} train / "
        f"{len(test.images)} test (seed {args.seed})"
    )
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    if args.extent:
        extent = _load_extent(args.extent)
    else:
        extent = MapExtent(origin=(0.0, 0.0), rotation=0.0, width=4.5, length=32.0)
    camera = default_camera(extent)
    config = SimConfig(
        extent=extent,
        camera=camera,
        n_agents=args.agents,
        cyclist_fraction=args.cyclists,
        fps=args.fps,
        seed=args.seed,
        noise_px=args.noise,
        miss_rate=args.miss,
        confusion_rate=args.confusion,
        attractor=tuple(args.attractor) if args.attractor else None,
    )
    result = simulate(config, args.frames)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    save_camera(out_dir / "camera.json", camera)
    _save_extent(out_dir / "extent.json", extent)
    save_dataset(out_dir / "gt.json", result.dataset)
    det_rows = []
    for ann in result.detections:
        det_rows.append(
            {
                "id": ann.id,
                "image_id": ann.image_id,
                "category_id": ann.category_id,
                "bbox": list(ann.bbox),
                "area": ann.area,
                "score": ann.score,
                "segmentation": [list(p) for p in ann.segmentation],
            }
        )
    (out_dir / "detections.json").write_text(json.dumps(det_rows) + "\n")
    truth_lines = ["frame,timestamp,class,x,y,heading,height"]
    for frame in result.frames:
        ts = frame.image.extra["timestamp"]
        for state in frame.truth:
            truth_lines.append(
                f"{frame.image.id},{ts!r},{state.class_name},{state.x!r},"
                f"{state.y!r},{state.heading!r},{state.height!r}"
            )
    (out_dir / "truth.csv").write_text("\n".join(truth_lines) + "\n")
    outputs = [
        out_dir / "camera.json",
        out_dir / "extent.json",
        out_dir / "gt.json",
        out_dir / "detections.json",
        out_dir / "truth.csv",
    ]
    _write_manifest(out_dir, args, [], outputs, t0)
    n_gt = len(result.dataset.annotations)
    print(
        f"simulated {args.frames} frames, {args.agents} agents: "
        f"{n_gt} ground-truth objects, {len(result.detections)} detections "
        f"-> {out_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posmap",
        description="Ground-plane mapping, density rasters, and detector "
        "evaluation for public-space cameras.",
    )
    parser.add_argument("--version", action="version", version=f"posmap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="camera calibration")
    cal_sub = p_cal.add_subparsers(dest="mode", required=True)

    p_ci = cal_sub.add_parser("intrinsics", help="intrinsics from planar pattern views")
    p_ci.add_argument("--views", required=True, help="JSON list of plane/pixel views")
    p_ci.add_argument("--image-size", nargs=2, type=int, required=True, metavar=("W", "H"))
    p_ci.add_argument("--no-distortion", action="store_true")
    p_ci.add_argument("--fix-skew", action="store_true")
    p_ci.add_argument("--out", required=True)
    p_ci.set_defaults(func=cmd_calibrate_intrinsics)

    p_ce = cal_sub.add_parser("extrinsics", help="world pose from surveyed points")
    p_ce.add_argument("--intrinsics", required=True, help="camera JSON without pose")
    p_ce.add_argument("--points", required=True, help="CSV with columns X,Y,Z,u,v")
    p_ce.add_argument("--out", required=True)
    p_ce.set_defaults(func=cmd_calibrate_extrinsics)

    p_proj = sub.add_parser("project", help="project between pixels and the ground plane")
    p_proj.add_argument("--camera", required=True)
    g = p_proj.add_mutually_exclusive_group(required=True)
    g.add_argument("--pixel", nargs=2, type=float, metavar=("U", "V"))
    g.add_argument("--world", nargs=3, type=float, metavar=("X", "Y", "Z"))
    p_proj.set_defaults(func=cmd_project)

    p_map = sub.add_parser("map", help="map detections onto the ground plane")
    p_map.add_argument("--camera", required=True)
    p_map.add_argument("--annotations", required=True)
    p_map.add_argument("--treatment", default="merging")
    p_map.add_argument("--taxonomy", default=None)
    p_map.add_argument("--extent", default=None)
    p_map.add_argument("--prior", action="append", metavar="CLASS:W:L")
    p_map.add_argument("--fps", type=float, default=1.0)
    p_map.add_argument("--sample-rate", type=float, default=None,
                       help="subsample to one frame per source per 1/RATE s")
    p_map.add_argument("--source", default="")
    p_map.add_argument("--jobs", type=int, default=1)
    p_map.add_argument("--out", required=True)
    p_map.set_defaults(func=cmd_map)

    p_den = sub.add_parser("density", help="rasterize observations to a density grid")
    p_den.add_argument("--observations")
    p_den.add_argument("--extent")
    p_den.add_argument("--cell", type=float, default=0.25)
    p_den.add_argument("--bandwidth", default="auto")
    p_den.add_argument("--classes", default=None, help="comma-separated filter")
    p_den.add_argument("--merge", nargs="+", default=None, metavar="BASE")
    p_den.add_argument("--out", required=True)
    p_den.set_defaults(func=cmd_density)

    p_eval = sub.add_parser("eval", help="score detections against ground truth")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--detections", required=True)
    p_eval.add_argument("--iou-mode", choices=("segm", "bbox"), default="segm")
    p_eval.add_argument("--max-dets", type=int, default=100)
    p_eval.add_argument("--treatment", default=None)
    p_eval.add_argument("--taxonomy", default=None)
    p_eval.add_argument("--pr-curves", default=None, metavar="CSV",
                        help="write per-class recall/precision at IoU 0.5")
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_diag = sub.add_parser("diagnose", help="cumulative error ladder")
    p_diag.add_argument("--gt", required=True)
    p_diag.add_argument("--detections", required=True)
    p_diag.add_argument("--iou-mode", choices=("segm", "bbox"), default="segm")
    p_diag.add_argument("--max-dets", type=int, default=100)
    p_diag.add_argument("--out", default=None)
    p_diag.set_defaults(func=cmd_diagnose)

    p_stats = sub.add_parser("stats", help="per-class annotation statistics")
    p_stats.add_argument("--annotations", required=True)
    p_stats.add_argument("--treatment", default=None)
    p_stats.add_argument("--taxonomy", default=None)
    p_stats.add_argument("--out", default=None)
    p_stats.set_defaults(func=cmd_stats)

    p_filt = sub.add_parser(
        "filter-annotations", help="keep detections worth human annotation"
    )
    p_filt.add_argument("--detections", required=True)
    p_filt.add_argument("--score", type=float, default=0.75)
    p_filt.add_argument("--min-area", type=float, default=600.0)
    p_filt.add_argument("--out", required=True)
    p_filt.set_defaults(func=cmd_filter)

    p_lm = sub.add_parser("export-labelme", help="export per-image polygon files")
    p_lm.add_argument("--annotations", required=True)
    p_lm.add_argument("--out-dir", required=True)
    p_lm.set_defaults(func=cmd_export_labelme)

    p_sim = sub.add_parser("simulate", help="generate a synthetic scene")
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--frames", type=int, default=60)
    p_sim.add_argument("--agents", type=int, default=12)
    p_sim.add_argument("--cyclists", type=float, default=0.0)
    p_sim.add_argument("--fps", type=float, default=1.0)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--noise", type=float, default=0.0, help="vertex noise in px")
    p_sim.add_argument("--miss", type=float, default=0.0, help="miss rate in [0,1]")
    p_sim.add_argument("--confusion", type=float, default=0.0,
                       help="class confusion rate in [0,1]")
    p_sim.add_argument("--extent", default=None, help="extent JSON (default 4.5x32 m)")
    p_sim.add_argument("--attractor", nargs=2, type=float, default=None, metavar=("X", "Y"))
    p_sim.set_defaults(func=cmd_simulate)

    p_split = sub.add_parser("split", help="train/test split by image")
    p_split.add_argument("--annotations", required=True)
    p_split.add_argument("--fraction", type=float, default=0.9)
    p_split.add_argument("--seed", type=int, default=0)
    p_split.add_argument("--stratify", default=None)
    p_split.add_argument("--out-train", required=True)
    p_split.add_argument("--out-test", required=True)
    p_split.set_defaults(func=cmd_split)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except PosmapError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
