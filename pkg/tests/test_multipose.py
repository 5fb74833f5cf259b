import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pamm.descriptor import (
    COLOR_BINS,
    DESCRIPTOR_DIM,
    ORIENTATION_BINS,
    edge_orientation,
    extract_builtin_descriptor,
    load_patch,
    patch_path,
    resize_bilinear,
)
from pamm.errors import EmptyPatch, EmptyTrack, MissingFeature
from pamm.multipose import (
    POSES,
    FeatureVector,
    MultiPoseModel,
    assign_pose_group,
    build_multipose_model,
    pose_indices,
    pose_label,
)
from pamm.pose import BoundingBox, Track, TrackSample

BLOCK = 3 * COLOR_BINS + ORIENTATION_BINS


def table_oracle(angle):
    table = [(0.0, 45.0, "front"), (45.0, 135.0, "right"), (135.0, 225.0, "back"), (225.0, 315.0, "left"), (315.0, 360.0, "front")]
    hits = [name for lo, hi, name in table if lo <= angle < hi]
    assert len(hits) == 1
    return hits[0]


def test_pose_bin_examples():
    assert assign_pose_group(350.0) == "front"
    assert assign_pose_group(45.0) == "right"
    assert assign_pose_group(315.0) == "front"
    assert assign_pose_group(44.999999) == "front"
    assert assign_pose_group(135.0) == "back" and assign_pose_group(225.0) == "left"


def test_half_degree_sweep_matches_table():
    grid = np.arange(0.0, 360.0, 0.5)
    labels = [assign_pose_group(a) for a in grid]
    assert labels == [table_oracle(a) for a in grid]
    assert [POSES[i] for i in pose_indices(grid)] == labels


@given(st.floats(0, 360, exclude_max=True))
def test_bins_partition_circle(angle):
    assert assign_pose_group(angle) == table_oracle(angle) == POSES[int(pose_indices([angle])[0])]


def test_out_of_range_angles_rejected():
    for bad in (-0.1, 360.0):
        with pytest.raises(ValueError):
            assign_pose_group(bad)
    with pytest.raises(ValueError):
        pose_indices([10.0, 400.0])


def test_pose_label_aliases():
    assert pose_label("F") == "front" and pose_label("left") == "left"
    with pytest.raises(ValueError):
        pose_label("up")


# descriptor


def test_uniform_gray_patch():
    fv = extract_builtin_descriptor(np.full((60, 30), 100, dtype=np.uint8))
    assert fv.dim == DESCRIPTOR_DIM
    blocks = fv.values.reshape(-1, BLOCK)
    for b in blocks:
        for ch in range(3):
            hist = b[ch * COLOR_BINS : (ch + 1) * COLOR_BINS]
            assert np.count_nonzero(hist) == 1 and np.argmax(hist) == 100 * COLOR_BINS // 256
        assert np.abs(b[3 * COLOR_BINS :]).max() < 1e-12


def test_descriptor_is_deterministic():
    rng = np.random.default_rng(0)
    patch = rng.integers(0, 256, (90, 40, 3), dtype=np.uint8)
    a = extract_builtin_descriptor(patch).values
    b = extract_builtin_descriptor(patch.copy()).values
    assert a.tobytes() == b.tobytes()


def _finite_difference_orientation(gray):
    """Per-pixel central differences with one-sided edges, in plain loops."""
    h, w = gray.shape
    mag = np.zeros((h, w))
    ori = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            xl, xr = max(x - 1, 0), min(x + 1, w - 1)
            yt, yb = max(y - 1, 0), min(y + 1, h - 1)
            gx = (gray[y, xr] - gray[y, xl]) / (xr - xl)
            gy = (gray[yb, x] - gray[yt, x]) / (yb - yt)
            mag[y, x] = np.hypot(gx, gy)
            ori[y, x] = (np.degrees(np.arctan2(gy, gx)) + 90.0) % 180.0
    return mag, ori


def test_vertical_edge_dominates_ninety_degree_bin():
    patch = np.zeros((128, 48))
    patch[:, 24:] = 1.0
    mag, ori = edge_orientation(patch)
    omag, oori = _finite_difference_orientation(patch)
    np.testing.assert_allclose(mag, omag, atol=1e-12)
    strong = omag > 0
    np.testing.assert_allclose(ori[strong], oori[strong], atol=1e-9)
    assert np.allclose(oori[strong], 90.0)
    ninety_bin = int(90.0 // (180.0 / ORIENTATION_BINS))
    assert ninety_bin == 4
    blocks = extract_builtin_descriptor(patch).values.reshape(-1, BLOCK)
    for b in blocks:
        og = b[3 * COLOR_BINS :]
        if og.max() > 0:
            assert np.argmax(og) == ninety_bin


def test_blocks_are_unit_norm_and_empty_patch_rejected():
    rng = np.random.default_rng(1)
    blocks = extract_builtin_descriptor(rng.random((50, 20, 3))).values.reshape(-1, BLOCK)
    for b in blocks:
        for part in np.split(b, [8, 16, 24]):
            assert abs(np.linalg.norm(part) - 1.0) < 1e-12
    with pytest.raises(EmptyPatch):
        extract_builtin_descriptor(np.zeros((0, 5)))


def test_resize_identity_and_constant():
    img = np.random.default_rng(2).random((16, 8))
    np.testing.assert_allclose(resize_bilinear(img, 16, 8), img, atol=1e-15)
    np.testing.assert_allclose(resize_bilinear(np.full((7, 3, 3), 0.25), 128, 48), 0.25)


def test_patch_files(tmp_path):
    from PIL import Image

    arr = np.random.default_rng(3).integers(0, 256, (20, 10, 3), dtype=np.uint8)
    Image.fromarray(arr).save(tmp_path / "c0_p1_5.png")
    p = patch_path(tmp_path, "c0", "p1", 5)
    assert p is not None and patch_path(tmp_path, "c0", "p1", 6) is None
    np.testing.assert_array_equal(load_patch(p), arr)


# models


def _track(angles):
    return Track("p", "c", tuple(
        TrackSample("p", "c", i, (0.0, 5.0), BoundingBox(0, 0, 1, 1), smooth_angle=a) for i, a in enumerate(angles)
    ))


def _features(track, d=3):
    return {s.key: FeatureVector(np.full(d, float(s.frame))) for s in track.samples}


def test_one_member_per_group():
    tr = _track([10.0, 100.0, 200.0, 300.0])
    m = build_multipose_model(tr, _features(tr))
    assert m.counts == (1, 1, 1, 1)
    assert [g.frames for g in m.groups] == [(0,), (1,), (2,), (3,)]


def test_all_front_model_is_valid():
    tr = _track([0.0] * 5)
    m = build_multipose_model(tr, _features(tr))
    assert m.counts == (5, 0, 0, 0)
    assert m.group("r").features.shape == (0, 3)
    feats, labels = m.stacked()
    assert feats.shape == (5, 3) and set(labels) == {0}


def test_random_angles_recount_and_order():
    rng = np.random.default_rng(9)
    angles = rng.uniform(0, 360, 1000)
    tr = _track(angles)
    m = build_multipose_model(tr, _features(tr, d=2))
    recount = {p: 0 for p in POSES}
    for a in angles:
        recount[table_oracle(a)] += 1
    assert m.counts == tuple(recount[p] for p in POSES)
    assert sum(m.counts) == 1000
    for g in m.groups:
        assert list(g.frames) == sorted(g.frames)
        np.testing.assert_array_equal(g.features[:, 0], g.frames)


def test_model_errors():
    with pytest.raises(EmptyTrack):
        build_multipose_model(Track("p", "c", ()), {})
    tr = _track([10.0, 20.0])
    feats = _features(tr)
    feats.pop(tr.samples[1].key)
    with pytest.raises(MissingFeature):
        build_multipose_model(tr, feats)
    with pytest.raises(ValueError):
        FeatureVector([1.0, np.nan])
