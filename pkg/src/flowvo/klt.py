"""Pyramidal Lucas-Kanade solver for per-keypoint movement vectors.

Each keypoint is tracked coarse-to-fine through the pyramid. The initial
guess is injected at the deepest level; every finer level starts from the
coarser result scaled by the pyramid ratio. Within a level the 2x2 normal
matrix is built once from reference-patch gradients and reused for all
Gauss-Newton steps. After each step, iteration stops when the mean
absolute window residual is below ``min_window_error`` (intensities in
[0, 1]) or the step became negligible; ``max_iterations`` caps the steps
per level. A window that already matches exactly takes no step.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numba
import numpy as np

from .image import Pyramid


class TrackStatus(enum.IntEnum):
    CONVERGED = 0
    MAX_ITERATIONS = 1
    LOST = 2


@dataclass(frozen=True)
class TrackerConfig:
    half_window: int = 2
    max_iterations: int = 10
    min_window_error: float = 0.02
    n_levels: int = 8
    scale_ratio: float = 1.2
    min_eigenvalue: float = 1e-4
    # level-pixel step below which a level is considered converged; 0 disables
    step_epsilon: float = 0.01
    forward_backward: bool = False
    fb_threshold: float = 0.5

    def __post_init__(self):
        if self.half_window < 1 or self.max_iterations < 1 or self.n_levels < 1:
            raise ValueError("half_window, max_iterations and n_levels must be positive")
        if not (self.min_window_error > 0 and self.scale_ratio > 0):
            raise ValueError("min_window_error and scale_ratio must be positive")


@dataclass(frozen=True)
class TrackResult:
    movement: np.ndarray
    residual: float
    iterations_used: int
    status: TrackStatus
    max_level_iterations: int = 0

    @property
    def lost(self) -> bool:
        return self.status == TrackStatus.LOST


@dataclass
class TrackBatch:
    """Results of :func:`track_all` as parallel arrays."""

    movement: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    max_level_iterations: np.ndarray
    status: np.ndarray

    def __len__(self) -> int:
        return len(self.status)

    def __getitem__(self, i) -> TrackResult:
        return TrackResult(
            self.movement[i].copy(),
            float(self.residual[i]),
            int(self.iterations[i]),
            TrackStatus(int(self.status[i])),
            int(self.max_level_iterations[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def ok(self) -> np.ndarray:
        return self.status != TrackStatus.LOST


@numba.njit(cache=True)
def _sample_window(buf, off, w, x, y, n, out):
    # n x n bilinear samples at (x + i, y + j); caller guarantees bounds
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    ax = x - x0
    ay = y - y0
    w00 = (1.0 - ax) * (1.0 - ay)
    w01 = ax * (1.0 - ay)
    w10 = (1.0 - ax) * ay
    w11 = ax * ay
    for j in range(n):
        row = off + (y0 + j) * w + x0
        for i in range(n):
            a = row + i
            out[j, i] = w00 * buf[a] + w01 * buf[a + 1] + w10 * buf[a + w] + w11 * buf[a + w + 1]


@numba.njit(cache=True)
def _track_kernel(
    ref_buf, cur_buf, offs, widths, heights, ratio,
    pts, guesses, hw, max_iter, err_min, min_eig, step_eps,
    out_xy, out_res, out_iter, out_lvl_iter, out_status,
):
    n_levels = offs.shape[0]
    win = 2 * hw + 1
    k = win * win
    grid = np.empty((win + 2, win + 2))
    cur = np.empty((win, win))
    ix = np.empty((win, win))
    iy = np.empty((win, win))
    top_scale = ratio ** (n_levels - 1)
    div_limit = hw + 0.5
    for p in range(pts.shape[0]):
        x0 = pts[p, 0]
        y0 = pts[p, 1]
        mx = (guesses[p, 0] - x0) / top_scale
        my = (guesses[p, 1] - y0) / top_scale
        status = 0
        total_it = 0
        max_lvl_it = 0
        best_err = 1e30
        best_mx = 0.0
        best_my = 0.0
        lost = False
        for lvl in range(n_levels - 1, -1, -1):
            if lvl < n_levels - 1:
                mx *= ratio
                my *= ratio
            s = ratio ** lvl
            px = x0 / s
            py = y0 / s
            w = widths[lvl]
            h = heights[lvl]
            off = offs[lvl]
            # reference window plus a 1-px ring for central differences
            if px - hw - 1 < 0.0 or py - hw - 1 < 0.0 or px + hw + 1 >= w - 1 or py + hw + 1 >= h - 1:
                if lvl == 0:
                    lost = True
                    break
                continue
            _sample_window(ref_buf, off, w, px - hw - 1, py - hw - 1, win + 2, grid)
            gxx = 0.0
            gxy = 0.0
            gyy = 0.0
            for j in range(win):
                for i in range(win):
                    gx = 0.5 * (grid[j + 1, i + 2] - grid[j + 1, i])
                    gy = 0.5 * (grid[j + 2, i + 1] - grid[j, i + 1])
                    ix[j, i] = gx
                    iy[j, i] = gy
                    gxx += gx * gx
                    gxy += gx * gy
                    gyy += gy * gy
            tr = gxx + gyy
            det = gxx * gyy - gxy * gxy
            lam_min = 0.5 * (tr - np.sqrt(max((gxx - gyy) ** 2 + 4.0 * gxy * gxy, 0.0)))
            # a near-singular window cannot be stepped; at level 0 it is kept only
            # if it already matches exactly, since then there is nothing to solve
            singular = lam_min / k < min_eig or det <= 1e-20
            if singular and lvl > 0:
                continue
            it = 0
            n_big = 0
            small_step = False
            lvl_status = 0
            while True:
                cx = px + mx
                cy = py + my
                if cx - hw < 0.0 or cy - hw < 0.0 or cx + hw >= w - 1 or cy + hw >= h - 1:
                    if lvl == 0:
                        lost = True
                    break
                _sample_window(cur_buf, off, w, cx - hw, cy - hw, win, cur)
                err = 0.0
                bx = 0.0
                by = 0.0
                for j in range(win):
                    for i in range(win):
                        e = grid[j + 1, i + 1] - cur[j, i]
                        err += abs(e)
                        bx += e * ix[j, i]
                        by += e * iy[j, i]
                err /= k
                if lvl == 0 and err < best_err:
                    best_err = err
                    best_mx = mx
                    best_my = my
                if singular and err > 0.0:
                    lost = True
                    break
                # the window-error test applies after a step, so every level
                # refines its inherited estimate at least once
                if err == 0.0 or small_step or (it > 0 and err < err_min):
                    lvl_status = 0
                    break
                if it >= max_iter:
                    lvl_status = 1
                    break
                dx = (gyy * bx - gxy * by) / det
                dy = (gxx * by - gxy * bx) / det
                mx += dx
                my += dy
                it += 1
                step = np.sqrt(dx * dx + dy * dy)
                if step > div_limit:
                    n_big += 1
                    if n_big >= 3:
                        if lvl == 0:
                            lost = True
                        break
                else:
                    n_big = 0
                if step < step_eps:
                    small_step = True
            total_it += it
            if it > max_lvl_it:
                max_lvl_it = it
            if lost:
                break
            if lvl == 0:
                status = lvl_status
        if lost or best_err > 1e29:
            out_status[p] = 2
            out_xy[p, 0] = mx * 1.0
            out_xy[p, 1] = my * 1.0
            out_res[p] = best_err if best_err < 1e29 else np.inf
        else:
            out_status[p] = status
            out_xy[p, 0] = best_mx
            out_xy[p, 1] = best_my
            out_res[p] = best_err
        out_iter[p] = total_it
        out_lvl_iter[p] = max_lvl_it


def _run(pyr_ref: Pyramid, pyr_cur: Pyramid, points, guesses, cfg: TrackerConfig) -> TrackBatch:
    n_levels = min(cfg.n_levels, pyr_ref.n_levels, pyr_cur.n_levels)
    ref_buf, offs, widths, heights = pyr_ref.packed()
    cur_buf, cur_offs, cur_w, cur_h = pyr_cur.packed()
    if not (np.array_equal(widths, cur_w) and np.array_equal(heights, cur_h)):
        raise ValueError("reference and current pyramids differ in shape")
    n = len(points)
    movement = np.zeros((n, 2))
    residual = np.zeros(n)
    iters = np.zeros(n, dtype=np.int64)
    lvl_iters = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    if n:
        _track_kernel(
            ref_buf, cur_buf, offs[:n_levels], widths[:n_levels], heights[:n_levels],
            float(pyr_ref.scale_ratio), points, guesses,
            int(cfg.half_window), int(cfg.max_iterations), float(cfg.min_window_error),
            float(cfg.min_eigenvalue), float(cfg.step_epsilon),
            movement, residual, iters, lvl_iters, status,
        )
    return TrackBatch(movement, residual, iters, lvl_iters, status)


def track_all(pyr_ref: Pyramid, pyr_cur: Pyramid, keypoints, init_guesses, cfg: TrackerConfig = TrackerConfig()) -> TrackBatch:
    """Track every keypoint independently.

    Args:
        keypoints: (N, 2) level-0 positions in the reference image.
        init_guesses: (N, 2) predicted positions in the current image.

    Returns:
        A :class:`TrackBatch`; ``movement[i]`` is the level-0 displacement.
    """
    pts = np.ascontiguousarray(np.asarray(keypoints, dtype=float).reshape(-1, 2))
    guesses = np.ascontiguousarray(np.asarray(init_guesses, dtype=float).reshape(-1, 2))
    if len(pts) != len(guesses):
        raise ValueError("keypoints and guesses differ in length")
    batch = _run(pyr_ref, pyr_cur, pts, guesses, cfg)
    if cfg.forward_backward and len(pts):
        found = pts + batch.movement
        back = _run(pyr_cur, pyr_ref, found, pts, cfg)
        err = np.linalg.norm(found + back.movement - pts, axis=1)
        bad = (back.status == TrackStatus.LOST) | (err > cfg.fb_threshold)
        batch.status[bad] = TrackStatus.LOST
    return batch


def track(pyr_ref: Pyramid, pyr_cur: Pyramid, kp, init_guess, cfg: TrackerConfig = TrackerConfig()) -> TrackResult:
    """Track a single keypoint; ``kp`` may be a position or a ``Keypoint``."""
    pos = getattr(kp, "position", kp)
    return track_all(pyr_ref, pyr_cur, [pos], [init_guess], cfg)[0]
