import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.registration import phase_cross_correlation

from seaice_seg import labels as L
from seaice_seg.dataset import (
    DatasetError,
    FramePair,
    LabelFormatError,
    Manifest,
    SyntheticSceneSpec,
    build_manifest,
    decode_label,
    encode_label,
    list_frames,
    pair_indices,
    read_keyframes,
    read_label,
    sample_pairs,
    synthesize_scene,
    write_image,
    write_keyframes,
    write_label,
    write_video,
)


def _fake_video(root, vid, n, size=8, seed=0):
    rng = np.random.default_rng(seed)
    frames = [rng.integers(0, 256, (size, size, 3), dtype=np.uint8) for _ in range(n)]
    labels = [rng.integers(0, 6, (size, size)).astype(np.uint8) for _ in range(n)]
    write_video(root / vid, frames, labels)
    return root / vid


# ---------------------------------------------------------------------------
# codecs


@given(st.integers(0, 2**31 - 1), st.sampled_from([(1, 1), (7, 13), (64, 32)]))
@settings(max_examples=30, deadline=None)
def test_label_round_trip(seed, shape):
    lab = np.random.default_rng(seed).choice(np.array(sorted(L.VALID_IDS), dtype=np.uint8), size=shape)
    assert np.array_equal(decode_label(encode_label(lab)), lab)


def test_all_ignore_map_is_valid():
    lab = np.full((4, 4), 255, np.uint8)
    assert np.array_equal(decode_label(encode_label(lab)), lab)


def test_out_of_range_id_rejected_on_decode(tmp_path):
    from PIL import Image

    path = tmp_path / "bad.png"
    Image.fromarray(np.full((3, 3), 7, np.uint8), mode="L").save(path)
    with pytest.raises(LabelFormatError, match="7"):
        read_label(path)


def test_encode_rejects_bad_ids_and_ndim():
    with pytest.raises(LabelFormatError):
        encode_label(np.full((2, 2), 6, np.uint8))
    with pytest.raises(LabelFormatError):
        encode_label(np.zeros((2, 2, 3), np.uint8))


def test_rgb_label_file_rejected(tmp_path):
    path = tmp_path / "rgb.png"
    write_image(path, np.zeros((4, 4, 3), np.uint8))
    with pytest.raises(LabelFormatError, match="single-channel"):
        read_label(path)


def test_label_bytes_are_verbatim_ids(tmp_path):
    from PIL import Image

    lab = np.array([[0, 1, 2], [3, 4, 5], [255, 0, 1]], np.uint8)
    write_label(tmp_path / "l.png", lab)
    img = Image.open(tmp_path / "l.png")
    assert img.mode == "L"
    assert np.array_equal(np.array(img), lab)


# ---------------------------------------------------------------------------
# manifest


def test_manifest_split_ratio_800_90_90(tmp_path):
    # only the counts matter, so tiny frames keep this fast
    dirs = [_fake_video(tmp_path, "v1", 800, size=2), _fake_video(tmp_path, "v2", 90, size=2), _fake_video(tmp_path, "v3", 90, size=2)]
    m = build_manifest(dirs, {"v1": "train", "v2": "val", "v3": "test"})
    assert m.counts() == {"train": 800, "val": 90, "test": 90}
    c = m.counts()
    assert c["train"] / c["val"] == pytest.approx(80 / 9)
    assert c["val"] == c["test"]


def test_manifest_single_video_warns_for_empty_splits(tmp_path, caplog):
    d = _fake_video(tmp_path, "only", 3)
    with caplog.at_level("WARNING"):
        m = build_manifest([d], {"only": "train"})
    assert m.counts() == {"train": 3, "val": 0, "test": 0}
    assert "'val' is empty" in caplog.text and "'test' is empty" in caplog.text


def test_manifest_duplicate_frame_index_rejected(tmp_path):
    d = _fake_video(tmp_path, "v", 2)
    write_image(d / "frames" / "frame_0001.png", np.zeros((8, 8, 3), np.uint8))
    with pytest.raises(DatasetError, match="duplicate frame index 1"):
        build_manifest([d], {"v": "train"})


def test_manifest_missing_label_names_the_frame(tmp_path):
    d = _fake_video(tmp_path, "v", 3)
    (d / "labels" / "00001.png").unlink()
    with pytest.raises(DatasetError, match="00001.png"):
        build_manifest([d], {"v": "train"})


def test_manifest_is_a_partition_and_round_trips(tmp_path):
    dirs = [_fake_video(tmp_path, f"v{i}", 2 + i, seed=i) for i in range(4)]
    assignment = {"v0": "train", "v1": "train", "v2": "val", "v3": "test"}
    m = build_manifest(dirs, assignment)
    keys = [(r.video_id, r.frame_index) for r in m.records]
    assert len(keys) == len(set(keys)) == 2 + 3 + 4 + 5
    for vid, recs in m.videos().items():
        assert {r.split for r in recs} == {assignment[vid]}
        assert [r.frame_index for r in recs] == list(range(len(recs)))
    m.save(tmp_path / "m.jsonl")
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    assert set(json.loads(lines[0])) == {"video_id", "frame_index", "frame_path", "label_path", "split"}
    assert Manifest.load(tmp_path / "m.jsonl") == m


def test_list_frames_skips_masks_and_sorts_numerically(tmp_path):
    for name in ["f10.png", "f2.png", "f2_mask.png", "notes.txt"]:
        (tmp_path / name).write_bytes(b"")
    assert [i for i, _ in list_frames(tmp_path)] == [2, 10]


# ---------------------------------------------------------------------------
# pairs


@pytest.mark.parametrize("n,stride,expected", [
    (5, 1, [(0, 1), (1, 2), (2, 3), (3, 4)]),
    (5, 2, [(0, 2), (1, 3), (2, 4)]),
    (3, 3, []),
    (1, 1, []),
])
def test_pair_indices(n, stride, expected):
    assert pair_indices(n, stride) == expected


@given(st.integers(0, 40), st.integers(1, 10))
def test_pair_count_property(n, stride):
    assert len(pair_indices(n, stride)) == max(0, n - stride)


def test_sample_pairs_never_cross_videos(tmp_path):
    dirs = [_fake_video(tmp_path, "a", 3, seed=1), _fake_video(tmp_path, "b", 3, seed=2)]
    m = build_manifest(dirs, {"a": "train", "b": "train"})
    pairs = list(sample_pairs(m, "train", 1))
    assert [(p.video_id, p.index_a, p.index_b) for p in pairs] == [("a", 0, 1), ("a", 1, 2), ("b", 0, 1), ("b", 1, 2)]
    recs = m.videos("train")["b"]
    assert np.array_equal(pairs[2].label_b, read_label(recs[1].label_path))


def test_sample_pairs_stride_too_long_warns(tmp_path, caplog):
    m = build_manifest([_fake_video(tmp_path, "a", 3)], {"a": "train"})
    with caplog.at_level("WARNING"):
        assert list(sample_pairs(m, "train", 5)) == []
    assert "exceeds every video length" in caplog.text


def test_sample_pairs_empty_split_raises(tmp_path):
    m = build_manifest([_fake_video(tmp_path, "a", 3)], {"a": "train"})
    with pytest.raises(DatasetError, match="empty"):
        list(sample_pairs(m, "test"))


def test_frame_pair_invariants():
    img, lab = np.zeros((4, 4, 3), np.uint8), np.zeros((4, 4), np.uint8)
    with pytest.raises(DatasetError):
        FramePair(img, img, lab, lab, stride=0)
    with pytest.raises(DatasetError):
        FramePair(img, np.zeros((4, 5, 3), np.uint8), lab, lab)


# ---------------------------------------------------------------------------
# synthetic scenes


def test_synthetic_size_must_divide_by_64():
    with pytest.raises(DatasetError, match="64"):
        SyntheticSceneSpec(height=500)


def test_synthetic_same_seed_is_bit_identical():
    spec = SyntheticSceneSpec(seed=5, n_frames=3, height=128, width=128)
    a, b = synthesize_scene(spec), synthesize_scene(spec)
    for fa, fb, la, lb in zip(a.frames, b.frames, a.labels, b.labels):
        assert np.array_equal(fa, fb) and np.array_equal(la, lb)
    c = synthesize_scene(SyntheticSceneSpec(seed=6, n_frames=3, height=128, width=128))
    assert not np.array_equal(a.frames[0], c.frames[0])


def test_synthetic_zero_flow_frames_identical():
    v = synthesize_scene(SyntheticSceneSpec(seed=2, n_frames=3, height=128, width=128, flow=(0, 0)))
    assert np.array_equal(v.frames[0], v.frames[2])
    assert np.array_equal(v.labels[0], v.labels[2])


def test_synthetic_flow_recovered_by_phase_correlation(scene16):
    roi = slice(scene16.spec.roi_top_row, int(scene16.spec.height * 0.85))
    for t in (0, 7):
        g0 = scene16.frames[t][roi].mean(axis=2)
        g1 = scene16.frames[t + 1][roi].mean(axis=2)
        shift, _, _ = phase_cross_correlation(g0, g1, upsample_factor=10)
        # shift registers g1 onto g0, so it is minus the content motion
        assert shift[1] == pytest.approx(-4.0, abs=0.5)
        assert shift[0] == pytest.approx(0.0, abs=0.5)


@pytest.mark.parametrize("flow", [(4, 0), (-3, 2), (0, -5)])
def test_synthetic_labels_consistent_under_flow(flow):
    v = synthesize_scene(SyntheticSceneSpec(seed=11, n_frames=3, height=128, width=128, flow=flow))
    dx, dy = flow
    H, W = v.labels[0].shape
    for t in range(2):
        a, b = v.labels[t], v.labels[t + 1]
        ys = slice(max(0, dy), H + min(0, dy))
        xs = slice(max(0, dx), W + min(0, dx))
        src = a[max(0, -dy):H - max(0, dy), max(0, -dx):W - max(0, dx)]
        dst = b[ys, xs]
        moving = ~(np.isin(dst, (L.SHIP, L.SKY)) | np.isin(src, (L.SHIP, L.SKY)))
        assert np.array_equal(src[moving], dst[moving])


def test_synthetic_scene_has_expected_classes(scene16):
    present = set(np.unique(scene16.labels[0]).tolist())
    assert {L.WATER, L.ICE_FLOE, L.SKY, L.SHIP} <= present
    H = scene16.spec.height
    assert (scene16.labels[0][0] == L.SKY).all()
    assert (scene16.labels[0][H - 1, H // 2] == L.SHIP)


def test_keyframes_round_trip(tmp_path, small_scene):
    kfs = small_scene.keyframes(2)
    assert [k.frame_index for k in kfs] == [0, 2, 4]
    write_keyframes(tmp_path, "vid", kfs)
    back = read_keyframes(tmp_path, "vid")
    assert [k.frame_index for k in back] == [0, 2, 4]
    for k, b in zip(kfs, back):
        for cls in ("ship", "sky", "iceberg"):
            assert np.array_equal(k.masks[cls], b.masks[cls])
    assert read_keyframes(tmp_path, "other") == []
