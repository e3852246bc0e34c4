"""Grayscale image utilities: equalization, pyramids, subpixel access.

Images are plain 2-D ``numpy.uint8`` arrays (row-major, ``img[y, x]``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from PIL import Image

from .errors import InvalidInput, OutOfBounds

N_LEVELS = 8
SCALE_RATIO = 1.2
MIN_PYRAMID_SIZE = 64


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma, rounded to nearest. Gray input is returned unchanged."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return rgb.astype(np.uint8, copy=False)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise InvalidInput(f"unsupported image shape {rgb.shape}")
    if rgb.dtype == np.uint8:
        out = np.empty(rgb.shape[:2], np.uint8)
        _gray_kernel(rgb, out)
        return out
    c = rgb[..., :3].astype(np.float64)
    y = 0.299 * c[..., 0] + 0.587 * c[..., 1] + 0.114 * c[..., 2]
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


@numba.njit(cache=True)
def _gray_kernel(rgb, out):
    # same arithmetic as the float64 path, without the temporaries
    h, w = out.shape
    for y in range(h):
        for x in range(w):
            v = 0.299 * np.float64(rgb[y, x, 0]) + 0.587 * np.float64(rgb[y, x, 1]) + 0.114 * np.float64(rgb[y, x, 2])
            out[y, x] = np.uint8(min(max(np.rint(v), 0.0), 255.0))


def read_image(path) -> np.ndarray:
    """Load an 8-bit gray or RGB(A) PNG as an array."""
    with Image.open(path) as im:
        if im.mode in ("L", "RGB"):
            return np.array(im)
        if im.mode in ("RGBA", "P", "LA"):
            return np.array(im.convert("RGB"))
        raise InvalidInput(f"{path}: unsupported intensity image mode {im.mode}")


def read_gray(path) -> np.ndarray:
    return rgb_to_gray(read_image(path))


def read_depth(path) -> np.ndarray:
    """Load a 16-bit single-channel depth PNG as ``uint16``."""
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise InvalidInput(f"{path}: depth image must be single-channel")
    return arr.astype(np.uint16)


def write_png(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype == np.uint16:
        Image.fromarray(img.astype(np.uint16)).save(path)
    else:
        Image.fromarray(img.astype(np.uint8)).save(path)


def write_pgm(path, img: np.ndarray) -> None:
    """Binary (P5) PGM for debug dumps."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise InvalidInput(f"{path}: not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w).copy()


def clahe(img: np.ndarray, clip_limit: float = 3.0, tiles=(8, 8)) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Per-tile clipped histograms become lookup tables; each pixel blends
    the four nearest tile tables bilinearly. Images whose size is not a
    multiple of the tile grid are reflect-padded for the histograms only.

    Args:
        img: uint8 image.
        clip_limit: histogram clip as a multiple of the mean bin count.
        tiles: ``(tiles_x, tiles_y)``.
    """
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise InvalidInput("clahe expects a 2-D uint8 image")
    tx, ty = int(tiles[0]), int(tiles[1])
    if tx < 1 or ty < 1 or not clip_limit > 0:
        raise InvalidInput("tiles must be >= 1x1 and clip_limit > 0")
    h, w = img.shape
    if w < tx or h < ty:
        raise InvalidInput(f"image {w}x{h} smaller than tile grid {tx}x{ty}")

    src = img
    if w % tx or h % ty:
        src = np.pad(img, ((0, ty - h % ty), (0, tx - w % tx)), mode="reflect")
    tw, th = src.shape[1] // tx, src.shape[0] // ty
    area = tw * th

    tiles_img = src[: th * ty, : tw * tx].reshape(ty, th, tx, tw).transpose(0, 2, 1, 3)
    tile_id = np.arange(ty * tx).reshape(ty, tx)[:, :, None, None]
    flat = (tile_id * 256 + tiles_img).ravel()
    hist = np.bincount(flat, minlength=ty * tx * 256).reshape(ty * tx, 256)

    limit = max(int(clip_limit * area / 256), 1)
    excess = np.maximum(hist - limit, 0).sum(axis=1)
    hist = np.minimum(hist, limit)
    batch = excess // 256
    residual = excess - batch * 256
    hist += batch[:, None]
    step = np.maximum(256 // np.maximum(residual, 1), 1)
    bins = np.arange(256)
    extra = (bins[None, :] % step[:, None] == 0) & (bins[None, :] // step[:, None] < residual[:, None])
    hist += extra

    scale = np.float32(255.0 / area)
    cdf = np.cumsum(hist, axis=1).astype(np.float32)
    lut = np.clip(np.rint(cdf * scale), 0, 255).astype(np.float32).reshape(-1)

    inv_tw = np.float32(1.0) / np.float32(tw)
    inv_th = np.float32(1.0) / np.float32(th)
    txf = np.arange(w, dtype=np.float32) * inv_tw - np.float32(0.5)
    tyf = np.arange(h, dtype=np.float32) * inv_th - np.float32(0.5)
    tx1 = np.floor(txf).astype(np.int64)
    ty1 = np.floor(tyf).astype(np.int64)
    xa = (txf - tx1).astype(np.float32)
    ya = (tyf - ty1).astype(np.float32)
    tx2 = np.minimum(tx1 + 1, tx - 1)
    ty2 = np.minimum(ty1 + 1, ty - 1)
    tx1 = np.maximum(tx1, 0)
    ty1 = np.maximum(ty1, 0)

    out = np.empty((h, w), np.uint8)
    _clahe_interp(img, lut, tx, tx1, tx2, xa, ty1, ty2, ya, out)
    return out


@numba.njit(cache=True)
def _clahe_interp(img, lut, tx, tx1, tx2, xa, ty1, ty2, ya, out):
    h, w = img.shape
    one = np.float32(1.0)
    for y in range(h):
        r1 = ty1[y] * tx
        r2 = ty2[y] * tx
        b = ya[y]
        b1 = one - b
        for x in range(w):
            v = img[y, x]
            a = xa[x]
            a1 = one - a
            top = lut[(r1 + tx1[x]) * 256 + v] * a1 + lut[(r1 + tx2[x]) * 256 + v] * a
            bottom = lut[(r2 + tx1[x]) * 256 + v] * a1 + lut[(r2 + tx2[x]) * 256 + v] * a
            res = np.float32(np.rint(top * b1 + bottom * b))
            out[y, x] = np.uint8(min(max(res, np.float32(0.0)), np.float32(255.0)))


@numba.njit(cache=True)
def _downsample_kernel(img, x0, fx, y0, fy, out):
    # separable [1 2 1]/4 smoothing with edge replication, evaluated only
    # at the rows and columns the bilinear resample touches
    h, w = img.shape
    q = np.float32(0.25)
    hf = np.float32(0.5)
    one = np.float32(1.0)
    out_h, out_w = out.shape
    need = np.zeros(h, np.bool_)
    for j in range(out_h):
        need[y0[j]] = True
        need[y0[j] + 1] = True
    rows = np.empty((h, w), np.float32)
    for y in range(h):
        if not (need[y] or (y > 0 and need[y - 1]) or (y + 1 < h and need[y + 1])):
            continue
        for x in range(w):
            a = np.float32(img[y, max(x - 1, 0)])
            b = np.float32(img[y, x])
            c = np.float32(img[y, min(x + 1, w - 1)])
            rows[y, x] = q * a + hf * b + q * c
    sm = np.empty((2, w), np.float32)
    cols = np.empty((2, out_w), np.float32)
    for j in range(out_h):
        for k in range(2):
            y = y0[j] + k
            ya = max(y - 1, 0)
            yc = min(y + 1, h - 1)
            for x in range(w):
                sm[k, x] = q * rows[ya, x] + hf * rows[y, x] + q * rows[yc, x]
            for i in range(out_w):
                f = fx[i]
                cols[k, i] = sm[k, x0[i]] * (one - f) + sm[k, x0[i] + 1] * f
        g = fy[j]
        for i in range(out_w):
            v = cols[0, i] * (one - g) + cols[1, i] * g
            v = np.float32(np.rint(v))
            out[j, i] = np.uint8(min(max(v, np.float32(0.0)), np.float32(255.0)))


def _downsample(img: np.ndarray, ratio: float, out_w: int, out_h: int) -> np.ndarray:
    # dst pixel i samples src position i * ratio, so level L pixel x sits
    # exactly at level-0 position x * ratio**L
    h, w = img.shape
    xs = np.minimum(np.arange(out_w) * ratio, w - 1)
    ys = np.minimum(np.arange(out_h) * ratio, h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 2)
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 2)
    fx = (xs - x0).astype(np.float32)
    fy = (ys - y0).astype(np.float32)
    out = np.empty((out_h, out_w), np.uint8)
    _downsample_kernel(np.ascontiguousarray(img), x0, fx, y0, fy, out)
    return out


@dataclass
class Pyramid:
    """Image pyramid; ``levels[0]`` is the source image."""

    levels: list
    scale_ratio: float = SCALE_RATIO
    _packed: tuple = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def scale(self, level: int) -> float:
        return self.scale_ratio ** level

    def packed(self):
        """Flat float32 buffer of all levels scaled to [0, 1], plus per-level
        offsets, widths and heights; the layout consumed by compiled kernels."""
        if self._packed is None:
            sizes = [lv.size for lv in self.levels]
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
            buf = np.concatenate([lv.ravel() for lv in self.levels]).astype(np.float32)
            buf *= np.float32(1.0 / 255.0)
            widths = np.array([lv.shape[1] for lv in self.levels], dtype=np.int64)
            heights = np.array([lv.shape[0] for lv in self.levels], dtype=np.int64)
            self._packed = (buf, offsets, widths, heights)
        return self._packed


def level_size(width: int, height: int, level: int, ratio: float = SCALE_RATIO):
    s = ratio ** level
    return int(round(width / s)), int(round(height / s))


def build_pyramid(img: np.ndarray, n_levels: int = N_LEVELS, scale_ratio: float = SCALE_RATIO) -> Pyramid:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise InvalidInput("build_pyramid expects a 2-D uint8 image")
    h, w = img.shape
    if w < MIN_PYRAMID_SIZE or h < MIN_PYRAMID_SIZE:
        raise InvalidInput(f"image {w}x{h} too small for a pyramid")
    levels = [img]
    for level in range(1, n_levels):
        lw, lh = level_size(w, h, level, scale_ratio)
        levels.append(_downsample(levels[-1], scale_ratio, lw, lh))
    return Pyramid(levels, scale_ratio)


def sample_bilinear(img: np.ndarray, x: float, y: float) -> float:
    h, w = img.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise OutOfBounds(f"({x}, {y}) outside {w}x{h} image")
    x0 = min(int(x), w - 2)
    y0 = min(int(y), h - 2)
    ax = x - x0
    ay = y - y0
    p = img[y0:y0 + 2, x0:x0 + 2].astype(np.float64)
    return float(
        (p[0, 0] * (1 - ax) + p[0, 1] * ax) * (1 - ay) + (p[1, 0] * (1 - ax) + p[1, 1] * ax) * ay
    )


def sample_grid(img: np.ndarray, x: float, y: float, half: int) -> np.ndarray:
    """Bilinear samples on the (2*half+1)^2 integer-offset grid around (x, y)."""
    h, w = img.shape
    if not (x - half >= 0.0 and y - half >= 0.0 and x + half <= w - 1 and y + half <= h - 1):
        raise OutOfBounds(f"window of half-size {half} at ({x}, {y}) leaves the {w}x{h} image")
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    ax = x - x0
    ay = y - y0
    f = np.pad(img.astype(np.float64), ((0, 1), (0, 1)), mode="edge")
    n = 2 * half + 1
    p = f[y0 - half:y0 - half + n + 1, x0 - half:x0 - half + n + 1]
    cols = p[:, :-1] * (1 - ax) + p[:, 1:] * ax
    return cols[:-1] * (1 - ay) + cols[1:] * ay


@dataclass(frozen=True)
class GradientPatch:
    values: np.ndarray
    ix: np.ndarray
    iy: np.ndarray

    def __len__(self) -> int:
        return self.values.size


def patch_gradients(img: np.ndarray, center, half_window: int = 2) -> GradientPatch:
    """Central-difference gradients over a square window at a subpixel center."""
    g = sample_grid(img, float(center[0]), float(center[1]), half_window + 1)
    vals = g[1:-1, 1:-1]
    ix = 0.5 * (g[1:-1, 2:] - g[1:-1, :-2])
    iy = 0.5 * (g[2:, 1:-1] - g[:-2, 1:-1])
    return GradientPatch(vals.ravel(), ix.ravel(), iy.ravel())
