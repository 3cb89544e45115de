import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import otsu_exhaustive, random_histograms
from seaice_seg import labels as L
from seaice_seg.annotate import (
    AnnotationConfig,
    AnnotationError,
    DegenerateInputError,
    ManualKeyframe,
    annotate_video,
    classify_by_thresholds,
    filter_small_components,
    interpolate_keyframes,
    luma,
    merge_labels,
    multi_otsu,
    n_brightest_classes,
    propose_floe_mask,
    threshold_water,
)
from seaice_seg.evaluation import accumulate, per_class_iou
from seaice_seg.geometry import CameraModel, build_region_partition, build_threshold_field


# --- multi-level Otsu -------------------------------------------------------


@pytest.mark.parametrize("k", [1, 2, 3])
def test_otsu_matches_exhaustive_search(k):
    for h in random_histograms(200, seed=k):
        assert np.array_equal(multi_otsu(h, k), otsu_exhaustive(h, k))


def test_two_spikes():
    h = np.zeros(256)
    h[10] = 500
    h[200] = 300
    t = multi_otsu(h, 1)
    assert 10 <= t[0] <= 199
    assert np.array_equal(t, otsu_exhaustive(h, 1))
    # empty gap: every cut ties, lexicographically smallest wins
    assert t[0] == 10


def test_three_spikes():
    h = np.zeros(256)
    h[[0, 100, 200]] = 1
    t = multi_otsu(h, 2)
    assert 0 <= t[0] < 100 <= t[1] < 200
    assert np.array_equal(t, otsu_exhaustive(h, 2))


def test_constant_is_degenerate():
    h = np.zeros(256)
    h[77] = 1000
    with pytest.raises(DegenerateInputError):
        multi_otsu(h, 1)


@pytest.mark.parametrize("k", [4, 9])
def test_higher_k_sorted_and_feasible(k):
    for h in random_histograms(20, seed=10 + k):
        t = multi_otsu(h, k)
        assert len(t) == k and np.all(np.diff(t) > 0) and t[0] >= 0 and t[-1] < 255


def test_otsu_rejects_bad_input():
    with pytest.raises(ValueError):
        multi_otsu(-np.ones(256), 1)
    with pytest.raises(ValueError):
        multi_otsu(np.ones((2, 2)), 1)
    with pytest.raises(ValueError):
        multi_otsu(np.ones(256), 0)


def test_classify_rule():
    t = np.array([10, 20])
    assert classify_by_thresholds(np.array([0, 10, 11, 20, 21, 255]), t).tolist() == [0, 0, 1, 1, 2, 2]


def test_otsu_speed():
    hs = random_histograms(50, seed=99)
    t0 = time.perf_counter()
    for h in hs:
        multi_otsu(h, 9)
    assert time.perf_counter() - t0 < 5.0


# --- floe proposal ---------------------------------------------------------


@pytest.fixture
def camera():
    return CameraModel(3.0, 200.0, 128, 128, 127, 32)


def test_brightest_count():
    assert n_brightest_classes(0.3, 9) == 3
    assert n_brightest_classes(1.0, 9) == 10
    assert n_brightest_classes(0.01, 2) == 1


def test_fraction_one_marks_roi(camera, rng):
    p = build_region_partition(camera, 3)
    gray = rng.integers(0, 256, (128, 128)).astype(np.uint8)
    m = propose_floe_mask(gray, p, 9, 1.0)
    assert np.array_equal(m, p.roi_mask)


def test_bright_blobs_only_in_region_zero(camera):
    p = build_region_partition(camera, 2)
    gray = np.full((128, 128), 60, dtype=np.uint8)
    gray[::2] = 50  # texture so every band has several levels
    blob = np.zeros_like(gray, dtype=bool)
    blob[110:120, 30:50] = True
    blob[115:125, 80:95] = True
    assert np.all(p.region_index_map[blob] == 0)
    gray[blob] = 230
    m = propose_floe_mask(gray, p, 2, 0.34)
    assert m.any()
    assert not np.any(m & p.region_mask(1))
    assert np.array_equal(m & blob, blob)


def test_top_three_of_ten_classes(camera, rng):
    p = build_region_partition(camera, 1)
    gray = rng.integers(0, 256, (128, 128)).astype(np.uint8)
    m = propose_floe_mask(gray, p, 9, 0.3)
    roi = p.roi_mask
    t = multi_otsu(np.bincount(gray[roi], minlength=256), 9)
    assert np.array_equal(m[roi], gray[roi] > t[6])


def test_constant_region_warns_and_is_empty(camera, caplog):
    p = build_region_partition(camera, 3)
    gray = np.full((128, 128), 120, dtype=np.uint8)
    with caplog.at_level("WARNING"):
        m = propose_floe_mask(gray, p, 9, 0.3)
    assert not m.any()
    assert "skipped" in caplog.text


def test_exclude_pixels(camera, rng):
    p = build_region_partition(camera, 3)
    gray = rng.integers(0, 256, (128, 128)).astype(np.uint8)
    ex = np.zeros_like(gray, dtype=bool)
    ex[60:90] = True
    assert not propose_floe_mask(gray, p, 3, 0.5, exclude=ex)[ex].any()


# --- components and water --------------------------------------------------


def _blob(shape, cells):
    m = np.zeros(shape, dtype=bool)
    for y, x in cells:
        m[y, x] = True
    return m


def test_component_area_boundaries():
    three = _blob((10, 10), [(1, 1), (1, 2), (2, 2)])
    assert not filter_small_components(three, 4).any()
    four = _blob((10, 10), [(1, 1), (1, 2), (2, 2), (3, 3)])  # diagonal joins under 8-connectivity
    assert np.array_equal(filter_small_components(four, 4), four)


def test_two_blobs():
    m = np.zeros((40, 40), dtype=bool)
    m[1, 1:4] = True
    m[20:25, 20:30] = True
    out = filter_small_components(m, 10)
    assert out.sum() == 50 and not out[1].any()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), area=st.integers(0, 30))
def test_filter_idempotent(seed, area):
    m = np.random.default_rng(seed).random((32, 32)) < 0.3
    once = filter_small_components(m, area)
    assert np.array_equal(filter_small_components(once, area), once)
    assert not np.any(once & ~m)


def test_water_strict_and_outside(camera):
    field = build_threshold_field(camera, 100.0, 100.0)
    blue = np.full((128, 128), 100, dtype=np.uint8)
    assert not threshold_water(blue, field).any()
    blue[:] = 99
    w = threshold_water(blue, field)
    assert np.array_equal(w, camera.roi_mask())


def test_far_value_above_range_marks_far_field(camera):
    field = build_threshold_field(camera, 100.0, 340.0)
    blue = np.full((128, 128), 255, dtype=np.uint8)
    w = threshold_water(blue, field)
    z = camera.normalized_distance()
    assert np.array_equal(w, np.nan_to_num(field.threshold_map, nan=0) > 255)
    assert w[np.nan_to_num(z) > 0.7].all()


def test_zero_image_all_water(camera):
    field = build_threshold_field(camera, 100.0, 340.0)
    assert np.array_equal(threshold_water(np.zeros((128, 128)), field), camera.roi_mask())


# --- keyframes -------------------------------------------------------------


def _disk(shape, cy, cx, r):
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def test_keyframe_exact_at_index():
    a = ManualKeyframe(0, {"ship": _disk((64, 64), 32, 32, 5)})
    b = ManualKeyframe(10, {"ship": _disk((64, 64), 32, 32, 9)})
    out = interpolate_keyframes([a, b], 10)
    assert np.array_equal(out["ship"], b.masks["ship"])
    assert not out["sky"].any()


def test_identical_keyframes():
    m = _disk((64, 64), 20, 30, 7)
    out = interpolate_keyframes([ManualKeyframe(0, {"iceberg": m}), ManualKeyframe(10, {"iceberg": m})], 5)
    assert np.array_equal(out["iceberg"], m)


def test_disk_radius_blend():
    shape = (96, 96)
    a = ManualKeyframe(0, {"iceberg": _disk(shape, 48, 48, 10)})
    b = ManualKeyframe(10, {"iceberg": _disk(shape, 48, 48, 20)})
    out = interpolate_keyframes([a, b], 5)["iceberg"]
    r_eff = np.sqrt(out.sum() / np.pi)
    assert abs(r_eff - 15) <= 1
    # disagreement with the radius-15 disk stays within a one-pixel ring
    assert np.sum(out ^ _disk(shape, 48, 48, 15)) < 2 * np.pi * 15


def test_outside_bracket_copies_nearest():
    a = ManualKeyframe(3, {"sky": _disk((32, 32), 5, 5, 3)})
    b = ManualKeyframe(8, {"sky": _disk((32, 32), 20, 20, 3)})
    assert np.array_equal(interpolate_keyframes([a, b], 0)["sky"], a.masks["sky"])
    assert np.array_equal(interpolate_keyframes([a, b], 15)["sky"], b.masks["sky"])


def test_keyframe_errors():
    with pytest.raises(AnnotationError):
        interpolate_keyframes([], 0)
    m = np.ones((4, 4), dtype=bool)
    with pytest.raises(AnnotationError):
        ManualKeyframe(0, {"ship": m, "sky": m})
    with pytest.raises(AnnotationError):
        ManualKeyframe(0, {"boat": m})


# --- merge -----------------------------------------------------------------


def test_merge_fallbacks(camera):
    p = build_region_partition(camera, 3)
    z = np.zeros((128, 128), dtype=bool)
    out = merge_labels({}, z, z, p)
    assert np.all(out[p.roi_mask] == L.BRASH_ICE) and np.all(out[~p.roi_mask] == L.SKY)


def test_merge_priority_and_all_classes(camera):
    p = build_region_partition(camera, 3)
    floe = np.zeros((128, 128), dtype=bool)
    water = np.zeros_like(floe)
    ship = np.zeros_like(floe)
    iceberg = np.zeros_like(floe)
    sky = np.zeros_like(floe)
    floe[100:110, 10:20] = True
    ship[105:110, 15:20] = True
    water[60:70, 60:70] = True
    iceberg[40:50, 90:100] = True
    sky[:10] = True
    out = merge_labels({"ship": ship, "sky": sky, "iceberg": iceberg}, floe, water, p)
    assert np.all(out[ship] == L.SHIP)
    assert set(np.unique(out)) == set(range(6))
    assert L.IGNORE not in out


def test_merge_shape_mismatch(camera):
    p = build_region_partition(camera, 3)
    with pytest.raises(AnnotationError):
        merge_labels({}, np.zeros((10, 10), bool), np.zeros((128, 128), bool), p)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_merge_exhaustive_disjoint(seed):
    cam = CameraModel(3.0, 50.0, 32, 32, 31, 8)
    p = build_region_partition(cam, 3)
    r = np.random.default_rng(seed)
    masks = {c: r.random((32, 32)) < 0.1 for c in ("ship", "sky", "iceberg")}
    out = merge_labels(masks, r.random((32, 32)) < 0.4, r.random((32, 32)) < 0.4, p)
    assert np.isin(out, list(range(6))).all()
    total = sum((out == c).sum() for c in range(6))
    assert total == out.size


# --- config and pipeline ---------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [dict(n_otsu_classes=0), dict(n_otsu_classes=21), dict(floe_brightest_fraction=0.0), dict(keyframe_stride=0)],
)
def test_config_validation(kwargs):
    with pytest.raises(AnnotationError):
        AnnotationConfig(**kwargs)


def test_luma_weights():
    img = np.zeros((1, 3, 3), dtype=np.uint8)
    img[0, 0] = (255, 0, 0)
    img[0, 1] = (0, 255, 0)
    img[0, 2] = (0, 0, 255)
    assert luma(img).tolist() == [[76, 150, 29]]


def test_annotation_fidelity(scene16):
    t0 = time.perf_counter()
    out = annotate_video(scene16.frames, scene16.keyframes(10), AnnotationConfig(), scene16.spec.camera_model())
    elapsed = time.perf_counter() - t0
    cm = sum(accumulate(p, t) for p, t in zip(out, scene16.labels))
    iou = per_class_iou(cm)
    assert elapsed < 60
    for c in (L.ICE_FLOE, L.WATER, L.BRASH_ICE):
        assert iou[c] >= 0.95, (L.CLASS_NAMES[c], iou[c])


def test_keyframes_reproduced_exactly(scene16):
    kfs = scene16.keyframes(10)
    out = annotate_video(scene16.frames[:11], [k for k in kfs if k.frame_index <= 10], AnnotationConfig(), scene16.spec.camera_model())
    for kf in kfs[:2]:
        for name, cid in (("ship", L.SHIP), ("sky", L.SKY), ("iceberg", L.ICEBERG)):
            assert np.array_equal(out[kf.frame_index] == cid, kf.masks[name] & ~_higher(kf, name))


def _higher(kf, name):
    order = ["ship", "sky", "iceberg"]
    m = np.zeros_like(kf.masks[name])
    for other in order[: order.index(name)]:
        m |= kf.masks[other]
    return m


def test_identical_frames_identical_labels(scene16):
    frames = [scene16.frames[0]] * 3
    kfs = [ManualKeyframe(0, scene16.keyframes(10)[0].masks)]
    out = annotate_video(frames, kfs, AnnotationConfig(), scene16.spec.camera_model())
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])
    again = annotate_video(frames, kfs, AnnotationConfig(), scene16.spec.camera_model())
    assert all(np.array_equal(a, b) for a, b in zip(out, again))


def test_size_mismatch(scene16):
    with pytest.raises(AnnotationError):
        annotate_video(scene16.frames[:1], scene16.keyframes(10), AnnotationConfig(), CameraModel(3, 800, 256, 256, 255, 64))
