"""Ground-plane mapping: footpoints, 3D boxes, extents, persistence."""

from __future__ import annotations

import math

import numpy as np
import pytest

from posmap.camera import CameraModel, Distortion, Intrinsics, Pose
from posmap.coco import Annotation
from posmap.errors import DataError, DegenerateGeometryError
from posmap.mapping import (
    Box3D,
    GroundObservation,
    MapExtent,
    SizePriors,
    estimate_box3d,
    footpoint,
    load_observations,
    locate,
    map_dataset,
    map_frame,
    save_observations,
    top_point,
)
from posmap.taxonomy import default_taxonomy, default_treatments

TAX = default_taxonomy()
MERGING = default_treatments(TAX)["merging"]
CLASS_NAMES = {c.class_id: c.name for c in TAX.classes}
PED_ID = TAX.by_name("pedestrian").class_id
DOG_ID = TAX.by_name("dog").class_id


def _bbox_ann(x, y, w, h, ann_id=1, cat=PED_ID, score=None):
    return Annotation(id=ann_id, image_id=1, category_id=cat,
                      bbox=(x, y, w, h), area=w * h, score=score)


def _person_ann(camera: CameraModel, gx: float, gy: float, height: float = 1.75,
                jitter=(0.0, 0.0, 0.0, 0.0), ann_id=1, score=None) -> Annotation:
    """Diamond polygon whose bottom/top vertices are the exact foot/head pixels."""
    fu, fv = camera.project(np.array([gx, gy, 0.0]))
    hu, hv = camera.project(np.array([gx, gy, height]))
    fu, fv = fu + jitter[0], fv + jitter[1]
    hu, hv = hu + jitter[2], hv + jitter[3]
    mid_y = (fv + hv) / 2.0
    poly = [hu, hv, fu + 20.0, mid_y, fu, fv, fu - 20.0, mid_y]
    from posmap.geometry2d import polygons_area, polygons_bounds

    return Annotation(id=ann_id, image_id=1, category_id=PED_ID,
                      segmentation=[poly], bbox=polygons_bounds([poly]),
                      area=polygons_area([poly]), score=score)


# -- pixel anchors ---------------------------------------------------------


def test_footpoint_bbox_is_bottom_center():
    assert footpoint(_bbox_ann(100.0, 50.0, 40.0, 80.0)) == (120.0, 130.0)


def test_top_point_bbox_is_top_center():
    assert top_point(_bbox_ann(100.0, 50.0, 40.0, 80.0)) == (120.0, 50.0)


def test_polygon_band_anchors(camera):
    ann = _person_ann(camera, 2.25, 12.0)
    fu, fv = camera.project(np.array([2.25, 12.0, 0.0]))
    hu, hv = camera.project(np.array([2.25, 12.0, 1.75]))
    assert footpoint(ann) == pytest.approx((fu, fv), abs=1e-9)
    assert top_point(ann) == pytest.approx((hu, hv), abs=1e-9)


# -- locate -----------------------------------------------------------------


def test_locate_noiseless_is_exact(camera):
    ann = _person_ann(camera, 2.25, 12.0)
    obs = locate(camera, ann, "pedestrian", image_id=3, timestamp=1.5, source="cam0")
    assert math.hypot(obs.x - 2.25, obs.y - 12.0) < 1e-6
    assert abs(obs.box.height - 1.75) < 1e-6
    assert obs.class_name == "pedestrian"
    assert (obs.image_id, obs.timestamp, obs.source) == (3, 1.5, "cam0")
    assert obs.annotation_id == ann.id


def test_locate_height_stays_plausible_under_pixel_noise(camera, rng):
    heights = []
    for _ in range(50):
        jitter = rng.normal(scale=1.0, size=4)
        ann = _person_ann(camera, 2.25, 12.0, jitter=tuple(jitter))
        heights.append(locate(camera, ann, "pedestrian").box.height)
    assert min(heights) > 1.70
    assert max(heights) < 1.80


def test_locate_applies_treatment(camera):
    ann = _person_ann(camera, 2.25, 12.0)
    obs = locate(camera, ann, "roller", MERGING)
    assert obs.class_name == "pedestrian"


def test_locate_carries_score(camera):
    ann = _person_ann(camera, 2.25, 12.0, score=0.87)
    assert locate(camera, ann, "pedestrian").score == 0.87


def test_box_uses_prior_footprint_verbatim(camera):
    priors = SizePriors(by_class={"pedestrian": (0.41, 0.73)})
    ann = _person_ann(camera, 2.25, 12.0)
    obs = locate(camera, ann, "pedestrian", priors=priors)
    assert (obs.box.width, obs.box.length) == (0.41, 0.73)


def test_box_center_sits_half_a_length_beyond_contact(camera):
    obs = locate(camera, _person_ann(camera, 2.25, 12.0), "pedestrian")
    cam_x, cam_y, _ = camera.pose.camera_center
    away = math.atan2(obs.y - cam_y, obs.x - cam_x)
    assert obs.box.yaw == pytest.approx(away)
    dist = math.hypot(obs.box.center_x - obs.x, obs.box.center_y - obs.y)
    assert dist == pytest.approx(obs.box.length / 2.0)


def test_estimate_box3d_clamps_height(camera):
    gxy = (2.25, 12.0)
    # head pixel far below the foot pixel implies a negative height
    foot_px = camera.project(np.array([2.25, 12.0, 0.0]))
    box = estimate_box3d(camera, gxy, (foot_px[0], foot_px[1] + 200.0), (0.5, 0.6))
    assert box.height == 0.3


def test_vertical_head_ray_is_degenerate():
    rot = np.diag([1.0, -1.0, -1.0])  # straight-down camera at 5 m
    center = np.array([0.0, 0.0, 5.0])
    pose = Pose.from_matrix(rot, -rot @ center)
    cam = CameraModel(
        intrinsics=Intrinsics(fx=1000.0, fy=1000.0, cx=320.0, cy=240.0),
        distortion=Distortion(),
        pose=pose,
        image_size=(640, 480),
    )
    with pytest.raises(DegenerateGeometryError, match="vertical"):
        estimate_box3d(cam, (0.5, 0.5), (320.0, 240.0), (0.5, 0.6))


# -- extent -------------------------------------------------------------------


def test_extent_boundaries_are_closed():
    ext = MapExtent(origin=(10.0, 5.0), rotation=0.0, width=4.0, length=20.0)
    assert ext.contains(10.0, 5.0)
    assert ext.contains(14.0, 25.0)
    assert ext.contains(12.0, 5.0)
    assert not ext.contains(14.000001, 25.0)
    assert not ext.contains(9.999999, 5.0)


def test_extent_rotation():
    ext = MapExtent(origin=(0.0, 0.0), rotation=math.pi / 2.0, width=4.0, length=20.0)
    # local +x becomes world +y: local (2, 10) sits at world (-10, 2)
    assert ext.contains(-10.0, 2.0)
    assert not ext.contains(10.0, 2.0)
    assert not ext.contains(4.0, 0.1)
    lx, ly = ext.to_local(-10.0, 2.0)
    assert (lx, ly) == pytest.approx((2.0, 10.0), abs=1e-12)


# -- frame / dataset mapping ---------------------------------------------------


def test_map_frame_keeps_people_only(camera, extent):
    people = _person_ann(camera, 2.25, 12.0, ann_id=1)
    dog = _bbox_ann(900.0, 700.0, 60.0, 40.0, ann_id=2, cat=DOG_ID)
    result = map_frame(camera, [people, dog], CLASS_NAMES, MERGING, extent=extent)
    assert [o.annotation_id for o in result.observations] == [1]
    assert result.failures == ()


def test_map_frame_separates_out_of_extent(camera, extent):
    inside = _person_ann(camera, 2.25, 12.0, ann_id=1)
    outside = _person_ann(camera, 2.25, 40.0, ann_id=2)  # beyond 32 m extent
    result = map_frame(camera, [inside, outside], CLASS_NAMES, MERGING, extent=extent)
    assert [o.annotation_id for o in result.observations] == [1]
    assert [o.annotation_id for o in result.out_of_extent] == [2]


def test_map_frame_records_geometry_failures(camera, extent):
    sky = _bbox_ann(960.0, -2000.0, 40.0, 80.0, ann_id=5)
    good = _person_ann(camera, 2.25, 12.0, ann_id=6)
    result = map_frame(camera, [sky, good], CLASS_NAMES, MERGING, extent=extent)
    assert [o.annotation_id for o in result.observations] == [6]
    assert len(result.failures) == 1
    assert result.failures[0][0] == 5


def test_map_frame_unknown_category(camera):
    bad = _bbox_ann(100.0, 100.0, 10.0, 20.0, cat=999)
    with pytest.raises(DataError, match="unknown category"):
        map_frame(camera, [bad], CLASS_NAMES, MERGING)


def test_map_dataset_timestamps(camera, extent):
    from posmap.coco import Category, Dataset, ImageRecord

    cats = [Category(id=c.class_id, name=c.name, supercategory=c.supercategory)
            for c in TAX.classes]
    images = [
        ImageRecord(id=1, file_name="f1.jpg", width=1920, height=1080),
        ImageRecord(id=2, file_name="f2.jpg", width=1920, height=1080),
        ImageRecord(id=3, file_name="f3.jpg", width=1920, height=1080,
                    extra={"timestamp": 99.5}),
    ]
    anns = [_person_ann(camera, 2.25, 12.0, ann_id=i) for i in (1, 2, 3)]
    for i, a in enumerate(anns, start=1):
        a.image_id = i
    ds = Dataset(images=images, annotations=anns, categories=cats)
    results = map_dataset(camera, ds, MERGING, extent=extent, fps=2.0)
    assert [r.timestamp for r in results] == [0.0, 0.5, 99.5]
    assert all(len(r.observations) == 1 for r in results)
    with pytest.raises(DataError, match="fps"):
        map_dataset(camera, ds, MERGING, fps=0.0)


# -- persistence ----------------------------------------------------------------


def test_observation_csv_round_trip(camera, tmp_path):
    anns = [
        _person_ann(camera, 2.25, 12.0, ann_id=1, score=0.9),
        _person_ann(camera, 1.0, 20.0, ann_id=2),
    ]
    obs = [
        locate(camera, anns[0], "pedestrian", image_id=1, timestamp=0.5, source="c0"),
        locate(camera, anns[1], "cyclist", image_id=2),
    ]
    path = tmp_path / "obs.csv"
    assert save_observations(path, obs) == 2
    loaded = load_observations(path)
    assert loaded == obs


def test_observation_csv_empty(tmp_path):
    path = tmp_path / "empty.csv"
    assert save_observations(path, []) == 0
    assert load_observations(path) == []


def test_observation_csv_errors(tmp_path):
    missing = tmp_path / "missing.csv"
    missing.write_text("source,image_id\n")
    with pytest.raises(DataError, match="columns"):
        load_observations(missing)

    bad = tmp_path / "bad.csv"
    bad.write_text(
        "source,image_id,annotation_id,timestamp,class_name,x,y,yaw,width,length,height,score\n"
        "c0,1,1,0.0,pedestrian,1.0,2.0,0.0,0.5,0.6,oops,\n"
    )
    with pytest.raises(DataError, match=":2"):
        load_observations(bad)
