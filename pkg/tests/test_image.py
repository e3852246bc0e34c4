import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

cv2 = pytest.importorskip("cv2")

from flowvo.errors import InvalidInput, OutOfBounds
from flowvo.image import (
    build_pyramid,
    clahe,
    patch_gradients,
    read_depth,
    read_gray,
    read_pgm,
    rgb_to_gray,
    sample_bilinear,
    write_pgm,
    write_png,
)
from flowvo.synthetic import BoxRoom, DEFAULT_K, SyntheticSequence


def reference_pyramid(img, n=8, ratio=1.2):
    """Smooth with [1 2 1]/4 (edge replicated), then sample at i*ratio bilinearly."""
    levels = [img]
    h0, w0 = img.shape
    for level in range(1, n):
        src = levels[-1].astype(np.float32)
        p = np.pad(src, 1, mode="edge")
        rows = np.float32(0.25) * p[:, :-2] + np.float32(0.5) * p[:, 1:-1] + np.float32(0.25) * p[:, 2:]
        sm = np.float32(0.25) * rows[:-2] + np.float32(0.5) * rows[1:-1] + np.float32(0.25) * rows[2:]
        h, w = sm.shape
        ow, oh = int(round(w0 / ratio ** level)), int(round(h0 / ratio ** level))
        xs = np.minimum(np.arange(ow) * ratio, w - 1)
        ys = np.minimum(np.arange(oh) * ratio, h - 1)
        x0 = np.minimum(np.floor(xs).astype(int), w - 2)
        y0 = np.minimum(np.floor(ys).astype(int), h - 2)
        fx = (xs - x0).astype(np.float32)
        fy = (ys - y0).astype(np.float32)[:, None]
        cols = sm[:, x0] * (1 - fx) + sm[:, x0 + 1] * fx
        out = cols[y0] * (1 - fy) + cols[y0 + 1] * fy
        levels.append(np.clip(np.rint(out), 0, 255).astype(np.uint8))
    return levels


@pytest.fixture(scope="module")
def frame():
    return SyntheticSequence("smooth", 3).frame(1)[0][:, :, 0]


def test_rgb_to_gray_bt601():
    rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255], [10, 20, 30]]], np.uint8)
    np.testing.assert_array_equal(rgb_to_gray(rgb)[0], [76, 150, 29, 18])
    g = np.arange(12, dtype=np.uint8).reshape(3, 4)
    assert rgb_to_gray(g) is g or np.array_equal(rgb_to_gray(g), g)


def test_rgb_to_gray_matches_opencv():
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, (60, 80, 3), dtype=np.uint8)
    ref = cv2.cvtColor(rgb, cv2.COLOR_RGB2GRAY)
    assert np.abs(rgb_to_gray(rgb).astype(int) - ref).max() <= 1


@pytest.mark.parametrize("shape", [(480, 640), (101, 77), (64, 64), (37, 200)])
def test_clahe_matches_opencv(shape):
    rng = np.random.default_rng(shape[0])
    img = rng.integers(0, 256, shape, dtype=np.uint8)
    ref = cv2.createCLAHE(clipLimit=3.0, tileGridSize=(8, 8)).apply(img)
    np.testing.assert_array_equal(clahe(img, 3.0, (8, 8)), ref)


def test_clahe_matches_opencv_on_rendered_frame(frame):
    ref = cv2.createCLAHE(clipLimit=3.0, tileGridSize=(8, 8)).apply(frame)
    np.testing.assert_array_equal(clahe(frame), ref)


@pytest.mark.parametrize("clip,tiles", [(1.0, (4, 4)), (2.0, (8, 6)), (40.0, (2, 3))])
def test_clahe_parameters_match_opencv(clip, tiles):
    rng = np.random.default_rng(5)
    img = (rng.random((120, 160)) * 90 + 80).astype(np.uint8)
    ref = cv2.createCLAHE(clipLimit=clip, tileGridSize=tiles).apply(img)
    np.testing.assert_array_equal(clahe(img, clip, tiles), ref)


def test_clahe_shape_and_range(frame):
    out = clahe(frame)
    assert out.shape == frame.shape and out.dtype == np.uint8


def _ramp():
    return np.tile(np.linspace(0, 255, 640).astype(np.uint8), (480, 1))


def test_clahe_ramp_matches_reference():
    ref = cv2.createCLAHE(clipLimit=3.0, tileGridSize=(8, 8)).apply(_ramp())
    np.testing.assert_array_equal(clahe(_ramp()), ref)


def test_clahe_ramp_nearly_monotone():
    # tile-LUT blending allows small local reversals, bounded by a couple of levels
    assert np.diff(clahe(_ramp()).astype(int), axis=1).min() >= -2


@pytest.mark.xfail(strict=True, reason="bilinear blending of tile LUTs dips by up to 2 levels "
                   "on a ramp; the reference implementation does the same")
def test_clahe_ramp_stays_monotone():
    assert (np.diff(clahe(_ramp()).astype(int), axis=1) >= 0).all()


def test_clahe_rejects_tiny_image():
    with pytest.raises(InvalidInput):
        clahe(np.zeros((4, 4), np.uint8), 3.0, (8, 8))
    with pytest.raises(InvalidInput):
        clahe(np.zeros((64, 64), np.uint8), 0.0, (8, 8))


@pytest.mark.xfail(strict=True, reason="CLAHE is not idempotent; the reference implementation "
                   "shows the same per-pixel change on a second pass")
def test_clahe_twice_within_two_levels(frame):
    once = clahe(frame)
    twice = clahe(once)
    assert np.abs(once.astype(int) - twice).max() <= 2


def test_clahe_second_pass_agrees_with_reference(frame):
    c = cv2.createCLAHE(clipLimit=3.0, tileGridSize=(8, 8))
    np.testing.assert_array_equal(clahe(clahe(frame)), c.apply(c.apply(frame)))


def test_pyramid_level_zero_identical(frame):
    pyr = build_pyramid(frame)
    assert pyr.levels[0] is frame or np.array_equal(pyr.levels[0], frame)
    assert pyr.n_levels == 8 and pyr.scale_ratio == 1.2


def test_pyramid_sizes():
    pyr = build_pyramid(np.zeros((480, 640), np.uint8))
    h7, w7 = pyr.levels[7].shape
    assert abs(w7 - 178) <= 1 and abs(h7 - 133) <= 1
    for lv, (a, b) in enumerate(zip(pyr.levels, pyr.levels[1:])):
        assert b.shape[0] < a.shape[0] and b.shape[1] < a.shape[1]
        assert abs(b.shape[1] - 640 // 1.2 ** (lv + 1)) <= 1


def test_pyramid_matches_reference(frame):
    for img in (frame, np.random.default_rng(1).integers(0, 256, (97, 131), dtype=np.uint8)):
        for a, b in zip(build_pyramid(img).levels, reference_pyramid(img)):
            np.testing.assert_array_equal(a, b)


@given(st.integers(0, 255))
def test_pyramid_constant_image(v):
    pyr = build_pyramid(np.full((70, 90), v, np.uint8))
    for lv in pyr.levels:
        assert (lv == v).all()


def test_pyramid_rejects_small_image():
    with pytest.raises(InvalidInput):
        build_pyramid(np.zeros((63, 100), np.uint8))


def test_pyramid_deterministic(frame):
    a, b = build_pyramid(frame), build_pyramid(frame.copy())
    for x, y in zip(a.levels, b.levels):
        np.testing.assert_array_equal(x, y)


def test_pyramid_packed_layout(frame):
    pyr = build_pyramid(frame)
    buf, offs, widths, heights = pyr.packed()
    for lv, img in enumerate(pyr.levels):
        seg = buf[offs[lv]:offs[lv] + widths[lv] * heights[lv]].reshape(heights[lv], widths[lv])
        np.testing.assert_allclose(seg, img / 255.0, atol=1e-6)


def test_sample_bilinear_examples():
    img = np.array([[10, 20], [30, 40]], np.uint8)
    assert sample_bilinear(img, 0, 0) == 10
    assert sample_bilinear(img, 1, 1) == 40
    assert sample_bilinear(img, 0.5, 0) == 15.0
    assert sample_bilinear(img, 0.5, 0.5) == 25.0


def test_sample_bilinear_out_of_bounds():
    img = np.zeros((5, 5), np.uint8)
    with pytest.raises(OutOfBounds):
        sample_bilinear(img, 4.5, 0)
    with pytest.raises(OutOfBounds):
        sample_bilinear(img, -0.1, 0)


@given(st.floats(0, 8.999), st.floats(0, 6.999))
def test_sample_bilinear_matches_opencv_remap(x, y):
    img = np.random.default_rng(2).integers(0, 256, (8, 10), dtype=np.uint8)
    ref = cv2.remap(img.astype(np.float32), np.array([[x]], np.float32), np.array([[y]], np.float32),
                    cv2.INTER_LINEAR)[0, 0]
    assert abs(sample_bilinear(img, x, y) - ref) < 0.05


def test_patch_gradients_constant_and_ramps():
    const = np.full((20, 20), 7, np.uint8)
    g = patch_gradients(const, (10.3, 9.6), 2)
    assert len(g) == 25
    assert np.all(g.ix == 0) and np.all(g.iy == 0)
    xx, yy = np.meshgrid(np.arange(20), np.arange(20))
    g = patch_gradients(xx.astype(np.uint8), (8.25, 9.5), 2)
    np.testing.assert_allclose(g.ix, 1.0)
    np.testing.assert_allclose(g.iy, 0.0)
    g = patch_gradients((xx + yy).astype(np.uint8), (8.7, 9.1), 2)
    np.testing.assert_allclose(g.ix, 1.0)
    np.testing.assert_allclose(g.iy, 1.0)


def test_patch_gradients_out_of_bounds():
    with pytest.raises(OutOfBounds):
        patch_gradients(np.zeros((20, 20), np.uint8), (2.5, 10), 2)


def test_png_and_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    gray = rng.integers(0, 256, (30, 40), dtype=np.uint8)
    depth = rng.integers(0, 65535, (30, 40), dtype=np.uint16)
    rgb = rng.integers(0, 256, (30, 40, 3), dtype=np.uint8)
    write_png(tmp_path / "g.png", gray)
    write_png(tmp_path / "d.png", depth)
    write_png(tmp_path / "c.png", rgb)
    write_pgm(tmp_path / "g.pgm", gray)
    np.testing.assert_array_equal(read_gray(tmp_path / "g.png"), gray)
    np.testing.assert_array_equal(read_depth(tmp_path / "d.png"), depth)
    np.testing.assert_array_equal(read_gray(tmp_path / "c.png"), rgb_to_gray(rgb))
    np.testing.assert_array_equal(read_pgm(tmp_path / "g.pgm"), gray)
    np.testing.assert_array_equal(cv2.imread(str(tmp_path / "d.png"), cv2.IMREAD_UNCHANGED), depth)


def test_rendered_depth_is_metric():
    room = BoxRoom()
    _, depth = room.render(SyntheticSequence("static", 1).poses_wc[0], DEFAULT_K)
    # the optical axis hits the far wall at z = 3 m
    assert depth[240, 320] == 15000
