import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

cv2 = pytest.importorskip("cv2")

from flowvo.features import (
    BORDER,
    detect,
    distribute_quadtree,
    fast_score_map,
    is_fast_corner,
    level_budgets,
    occupancy_mask,
)
from flowvo.image import build_pyramid
from flowvo.synthetic import SyntheticSequence

from oracles import fast9_is_corner


@pytest.fixture(scope="module")
def frame():
    return SyntheticSequence("smooth", 3).frame(1)[0][:, :, 0]


def checkerboard(h=480, w=640, cell=12, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    board = ((xx // cell + yy // cell) % 2) * 160 + 40
    return np.clip(board + rng.normal(0, 6, (h, w)), 0, 255).astype(np.uint8)


@pytest.mark.parametrize("t", [7, 20])
def test_fast_set_matches_opencv(frame, t):
    s = fast_score_map(frame, t, BORDER)
    kp = cv2.FastFeatureDetector_create(t, False, cv2.FAST_FEATURE_DETECTOR_TYPE_9_16).detect(frame)
    ref = np.zeros_like(s, dtype=bool)
    h, w = frame.shape
    for k in kp:
        x, y = int(k.pt[0]), int(k.pt[1])
        if BORDER <= x < w - BORDER and BORDER <= y < h - BORDER:
            ref[y, x] = True
    np.testing.assert_array_equal(s > 0, ref)


def test_fast_matches_plain_segment_test():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, (40, 40), dtype=np.uint8)
    s = fast_score_map(img, 20, 3)
    for y in range(3, 37):
        for x in range(3, 37):
            assert (s[y, x] > 0) == fast9_is_corner(img, x, y, 20)
            assert is_fast_corner(img, x, y, 20) == fast9_is_corner(img, x, y, 20)


def test_score_is_largest_passing_threshold(frame):
    s = fast_score_map(frame, 7, BORDER)
    ys, xs = np.nonzero(s)
    for x, y in list(zip(xs, ys))[::5000]:
        assert fast9_is_corner(frame, x, y, s[y, x] - 1)
        assert not fast9_is_corner(frame, x, y, s[y, x])


def test_constant_image_has_no_keypoints():
    assert len(detect(build_pyramid(np.full((480, 640), 128, np.uint8)))) == 0


def test_bright_square_corners():
    img = np.zeros((200, 200), np.uint8)
    img[100:105, 100:105] = 255
    kps = detect(build_pyramid(img))
    assert len(kps) >= 1
    for cx, cy in [(100, 100), (104, 100), (100, 104), (104, 104)]:
        d = np.hypot(kps.xy[:, 0] - cx, kps.xy[:, 1] - cy)
        assert d.min() <= 3.0


def test_checkerboard_budget_and_quadtree_leaves():
    pyr = build_pyramid(checkerboard())
    kps = detect(pyr, max_count=100)
    assert len(kps) <= 100
    img = pyr.levels[0]
    h, w = img.shape
    scores = fast_score_map(img, 7, BORDER)
    ys, xs = np.nonzero(scores)
    pts = np.column_stack([xs, ys]).astype(float)
    kept, leaf = distribute_quadtree(pts, scores[ys, xs], (BORDER, BORDER, w - BORDER, h - BORDER), 50)
    assert len(np.unique(leaf[kept])) == len(kept)
    # each retained corner is the strongest of its leaf
    for k in kept:
        assert scores[ys[k], xs[k]] == scores[ys, xs][leaf == leaf[k]].max()


@given(st.integers(1, 400), st.integers(0, 2000), st.integers(0, 10_000))
@settings(max_examples=50)
def test_quadtree_leaves_hold_one_point(n_target, m, seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform([0, 0], [640, 480], size=(m, 2))
    scores = rng.integers(1, 100, m)
    kept, leaf = distribute_quadtree(xy, scores, (0, 0, 640, 480), n_target)
    assert len(kept) <= n_target
    assert len(np.unique(leaf[kept])) == len(kept)
    assert (np.diff(kept) > 0).all()


@pytest.mark.parametrize("n", [1, 10, 100, 1000, 2000])
def test_count_never_exceeds_max(frame, n):
    assert len(detect(build_pyramid(frame), max_count=n)) <= n


def test_rejects_zero_max():
    with pytest.raises(ValueError):
        detect(build_pyramid(np.zeros((100, 100), np.uint8)), max_count=0)


def test_deterministic_and_ordered(frame):
    a = detect(build_pyramid(frame))
    b = detect(build_pyramid(frame.copy()))
    np.testing.assert_array_equal(a.xy, b.xy)
    np.testing.assert_array_equal(a.level, b.level)
    keys = list(zip(-a.score, a.xy[:, 1], a.xy[:, 0]))
    assert keys == sorted(keys)


def test_every_keypoint_passes_segment_test(frame):
    pyr = build_pyramid(frame)
    kps = detect(pyr)
    assert len(kps) > 500
    for kp in kps:
        s = pyr.scale(kp.level)
        x, y = int(round(kp.position[0] / s)), int(round(kp.position[1] / s))
        assert fast9_is_corner(pyr.levels[kp.level], x, y, 7)
        assert 0 <= kp.level < 8
        assert 0 <= kp.position[0] < 640 and 0 <= kp.position[1] < 480


def test_mask_suppresses_occupied_cells(frame):
    pyr = build_pyramid(frame)
    full = detect(pyr)
    mask = np.zeros((30, 40), bool)
    mask[:, :20] = True
    masked = detect(pyr, mask=mask)
    assert len(masked) > 0
    assert (masked.xy[:, 0] >= 20 * 16).all()
    assert (full.xy[:, 0] < 320).any()


def test_occupancy_mask_cells():
    m = occupancy_mask(np.array([[0, 0], [17.5, 33.0], [639.9, 479.9]]), 640, 480)
    assert m.shape == (30, 40)
    assert m[0, 0] and m[2, 1] and m[29, 39]
    assert m.sum() == 3


def test_level_budgets_sum_and_proportion():
    b = level_budgets(1000, 8, 1.2)
    assert b.sum() == 1000
    assert (np.diff(b) <= 0).all()
    assert abs(b[1] / b[0] - 1 / 1.44) < 0.02
