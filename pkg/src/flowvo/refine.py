"""Inlier refinement for tracked correspondences.

Two filters run in sequence:

1. Grid motion statistics: the reference image is split into a coarse
   grid; a match is supported by every match in its 3x3 cell neighbourhood
   whose displacement agrees with its own to within one cell. Matches whose
   support falls below ``alpha * sqrt(n / 9)`` (``n`` = matches in the
   neighbourhood) are dropped. Only displacement differences enter, so the
   filter is invariant to a global shift of the current points.
2. RANSAC over the normalised eight-point fundamental matrix, scored by
   point-to-epipolar-line distance in both images.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numba
import numpy as np

from .errors import InsufficientMatches


class MatchStage(enum.IntEnum):
    RAW = 0
    AFTER_GMS = 1
    AFTER_EPIPOLAR = 2


@dataclass
class MatchSet:
    ref: np.ndarray
    cur: np.ndarray
    inlier_mask: np.ndarray = None
    stage: MatchStage = MatchStage.RAW
    degenerate: bool = False

    def __post_init__(self):
        self.ref = np.asarray(self.ref, dtype=float).reshape(-1, 2)
        self.cur = np.asarray(self.cur, dtype=float).reshape(-1, 2)
        if len(self.ref) != len(self.cur):
            raise ValueError("reference and current point counts differ")
        if self.inlier_mask is None:
            self.inlier_mask = np.ones(len(self.ref), dtype=bool)
        else:
            self.inlier_mask = np.asarray(self.inlier_mask, dtype=bool).copy()
            if len(self.inlier_mask) != len(self.ref):
                raise ValueError("mask length differs from pair count")

    def __len__(self) -> int:
        return len(self.ref)

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())


@dataclass(frozen=True)
class RefineConfig:
    grid: tuple = (20, 20)
    alpha: float = 6.0
    threshold_px: float = 1.96
    confidence: float = 0.99
    max_iters: int = 200
    degenerate_ratio: float = 0.5
    batch: int = 16
    seed: int = 0


@numba.njit(cache=True)
def _gms_kernel(ref, disp, active, width, height, gx, gy, alpha, keep):
    n = ref.shape[0]
    cw = width / gx
    ch = height / gy
    cell = np.full(n, -1, np.int64)
    counts = np.zeros(gx * gy, np.int64)
    for i in range(n):
        if not active[i]:
            continue
        cx = min(max(int(ref[i, 0] / cw), 0), gx - 1)
        cy = min(max(int(ref[i, 1] / ch), 0), gy - 1)
        cell[i] = cy * gx + cx
        counts[cell[i]] += 1
    start = np.zeros(gx * gy + 1, np.int64)
    for c in range(gx * gy):
        start[c + 1] = start[c] + counts[c]
    fill = start[:-1].copy()
    members = np.empty(start[-1], np.int64)
    for i in range(n):
        if cell[i] >= 0:
            members[fill[cell[i]]] = i
            fill[cell[i]] += 1
    for i in range(n):
        keep[i] = False
        if cell[i] < 0:
            continue
        cx = cell[i] % gx
        cy = cell[i] // gx
        support = 0
        total = 0
        for ny in range(max(cy - 1, 0), min(cy + 2, gy)):
            for nx in range(max(cx - 1, 0), min(cx + 2, gx)):
                c = ny * gx + nx
                total += counts[c]
                for a in range(start[c], start[c + 1]):
                    j = members[a]
                    if abs(disp[j, 0] - disp[i, 0]) < cw and abs(disp[j, 1] - disp[i, 1]) < ch:
                        support += 1
        keep[i] = support >= alpha * math.sqrt(total / 9.0)


def gms_filter(matches: MatchSet, image_size, grid=(20, 20), alpha: float = 6.0) -> MatchSet:
    """Motion-smoothness filter; returns a new set tagged ``AFTER_GMS``.

    Args:
        image_size: ``(width, height)`` of the reference image.
    """
    width, height = float(image_size[0]), float(image_size[1])
    keep = np.zeros(len(matches), dtype=bool)
    if len(matches):
        _gms_kernel(
            matches.ref, matches.cur - matches.ref, matches.inlier_mask,
            width, height, int(grid[0]), int(grid[1]), float(alpha), keep,
        )
    return replace(matches, inlier_mask=keep & matches.inlier_mask, stage=MatchStage.AFTER_GMS)


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _design(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    # rows of x2^T F x1 = 0 in row-major F order; works on (..., N, 2)
    a, b = x1[..., 0], x1[..., 1]
    c, d = x2[..., 0], x2[..., 1]
    one = np.ones_like(a)
    return np.stack([c * a, c * b, c, d * a, d * b, d, a, b, one], axis=-1)


def _rank2(f: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(f)
    s[..., 2] = 0.0
    return (u * s[..., None, :]) @ vt


def epipolar_distances(f: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Max of the two point-to-epipolar-line distances, in pixels.

    ``f`` may be a single (3, 3) matrix or a stack (B, 3, 3); the result
    has shape (N,) or (B, N).
    """
    h1 = np.column_stack([x1, np.ones(len(x1))])
    h2 = np.column_stack([x2, np.ones(len(x2))])
    l2 = h1 @ np.swapaxes(f, -1, -2)  # F x1, lines in image 2
    l1 = h2 @ f  # F^T x2, lines in image 1
    alg = (h2 * l2).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = np.abs(alg) / np.hypot(l2[..., 0], l2[..., 1])
        d1 = np.abs(alg) / np.hypot(l1[..., 0], l1[..., 1])
    d = np.maximum(d1, d2)
    return np.where(np.isfinite(d), d, np.inf)


def eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Normalised eight-point estimate (least squares for N > 8), rank 2, unit norm."""
    if len(x1) < 8:
        raise InsufficientMatches(f"{len(x1)} matches, need 8")
    t1, t2 = _normalizer(x1), _normalizer(x2)
    n1 = x1 @ t1[:2, :2].T + t1[:2, 2]
    n2 = x2 @ t2[:2, :2].T + t2[:2, 2]
    _, _, vt = np.linalg.svd(_design(n1, n2), full_matrices=False)
    f = _rank2(vt[-1].reshape(3, 3))
    f = t2.T @ f @ t1
    return _unit(f)


def _unit(f: np.ndarray) -> np.ndarray:
    f = f / np.linalg.norm(f)
    # fix the sign so equal matrices compare equal
    flat = f.ravel()
    return f if flat[np.argmax(np.abs(flat))] > 0 else -f


def _required_iterations(inlier_ratio: float, confidence: float, sample: int = 8) -> float:
    p = inlier_ratio ** sample
    if p >= 1.0:
        return 0.0
    if p <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - p)


def ransac_fundamental(matches: MatchSet, cfg: RefineConfig = RefineConfig(), rng=None):
    """Epipolar verification of the current inliers.

    Returns:
        ``(F, refined)``. When fewer than ``degenerate_ratio`` of the
        incoming inliers agree with the best model (e.g. rotation-only
        motion), the incoming set is returned unchanged with
        ``degenerate=True``.

    Raises:
        InsufficientMatches: fewer than 8 incoming inliers.
    """
    idx = np.flatnonzero(matches.inlier_mask)
    n = len(idx)
    if n < 8:
        raise InsufficientMatches(f"{n} matches, need 8")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    x1 = matches.ref[idx]
    x2 = matches.cur[idx]
    t1, t2 = _normalizer(x1), _normalizer(x2)
    n1 = x1 @ t1[:2, :2].T + t1[:2, 2]
    n2 = x2 @ t2[:2, :2].T + t2[:2, 2]
    rows = _design(n1, n2)

    best_count = -1
    best_mask = None
    done = 0
    needed = float(cfg.max_iters)
    while done < min(needed, cfg.max_iters):
        b = int(min(cfg.batch, cfg.max_iters - done))
        samples = rng.integers(0, n, size=(b, 8))
        for r in range(b):
            while len(np.unique(samples[r])) < 8:
                samples[r] = rng.integers(0, n, size=8)
        _, _, vt = np.linalg.svd(rows[samples])
        fs = _rank2(vt[:, -1, :].reshape(b, 3, 3))
        fs = t2.T @ fs @ t1
        dist = epipolar_distances(fs, x1, x2)
        inl = dist <= cfg.threshold_px
        counts = inl.sum(axis=1)
        r = int(np.argmax(counts))
        if counts[r] > best_count:
            best_count = int(counts[r])
            best_mask = inl[r]
            best_f = fs[r]
            needed = _required_iterations(best_count / n, cfg.confidence)
        done += b

    f = _unit(best_f)
    mask = best_mask
    if best_count >= 8:
        refit = eight_point(x1[best_mask], x2[best_mask])
        refit_mask = epipolar_distances(refit, x1, x2) <= cfg.threshold_px
        if refit_mask.sum() >= best_count:
            f, mask = refit, refit_mask

    if mask.sum() < cfg.degenerate_ratio * n:
        return f, replace(matches, degenerate=True)
    full = np.zeros(len(matches), dtype=bool)
    full[idx[mask]] = True
    return f, replace(matches, inlier_mask=full, stage=MatchStage.AFTER_EPIPOLAR, degenerate=False)


def refine(matches: MatchSet, image_size, cfg: RefineConfig = RefineConfig(), rng=None):
    """Grid motion statistics followed by epipolar RANSAC.

    Returns:
        ``(refined, F)``; ``F`` is ``None`` for an empty input.
    """
    if len(matches) == 0 or matches.n_inliers == 0:
        return replace(matches, stage=MatchStage.AFTER_EPIPOLAR), None
    after_gms = gms_filter(matches, image_size, cfg.grid, cfg.alpha)
    f, refined = ransac_fundamental(after_gms, cfg, rng)
    return refined, f
