"""FAST-9 keypoint detection over an image pyramid.

Corners are found per level with a 9-of-16 segment test, thinned by 3x3
non-maximum suppression, spread out with a quadtree, and reported at
level-0 coordinates (``position = level_position * 1.2**level``). No
orientation or descriptor is computed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .image import Pyramid

FAST_THRESHOLD = 20
FAST_MIN_THRESHOLD = 7
CELL_SIZE = 30
BORDER = 8
MASK_CELL = 16

# Bresenham circle of radius 3, clockwise from 12 o'clock
CIRCLE = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ],
    dtype=np.int64,
)


@dataclass
class Keypoint:
    position: np.ndarray
    level: int
    score: int


@dataclass
class Keypoints:
    """Detected keypoints as parallel arrays."""

    xy: np.ndarray
    level: np.ndarray
    score: np.ndarray

    @classmethod
    def empty(cls) -> "Keypoints":
        return cls(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.xy)

    def __getitem__(self, i) -> Keypoint:
        return Keypoint(self.xy[i].copy(), int(self.level[i]), int(self.score[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


@numba.njit(cache=True)
def _fast_scores(img, border, t_min, circle):
    h, w = img.shape
    out = np.zeros((h, w), np.int32)
    d = np.empty(32, np.int32)
    a2 = np.empty(24, np.int32)
    b2 = np.empty(24, np.int32)
    for y in range(border, h - border):
        for x in range(border, w - border):
            c = np.int32(img[y, x])
            hi = c + t_min
            lo = c - t_min
            p0 = np.int32(img[y - 3, x])
            p4 = np.int32(img[y, x + 3])
            p8 = np.int32(img[y + 3, x])
            p12 = np.int32(img[y, x - 3])
            nb = (p0 > hi) + (p4 > hi) + (p8 > hi) + (p12 > hi)
            nd = (p0 < lo) + (p4 < lo) + (p8 < lo) + (p12 < lo)
            if nb < 2 and nd < 2:
                continue
            for i in range(16):
                v = np.int32(img[y + circle[i, 1], x + circle[i, 0]]) - c
                d[i] = v
                d[i + 16] = v
            # sliding min/max over 9 consecutive ring pixels
            for i in range(24):
                a2[i] = min(d[i], d[i + 1])
                b2[i] = max(d[i], d[i + 1])
            best_b = -(1 << 20)
            best_d = 1 << 20
            for i in range(16):
                mn = min(min(a2[i], a2[i + 2]), min(a2[i + 4], a2[i + 6]))
                mn = min(mn, d[i + 8])
                mx = max(max(b2[i], b2[i + 2]), max(b2[i + 4], b2[i + 6]))
                mx = max(mx, d[i + 8])
                if mn > best_b:
                    best_b = mn
                if mx < best_d:
                    best_d = mx
            best = max(best_b, -best_d)
            if best > t_min:
                out[y, x] = best
    return out


@numba.njit(cache=True)
def _select_corners(scores, border, cell, t_hi, t_lo):
    h, w = scores.shape
    n_cx = (w - 2 * border + cell - 1) // cell
    n_cy = (h - 2 * border + cell - 1) // cell
    cell_has_strong = np.zeros((max(n_cy, 1), max(n_cx, 1)), np.bool_)
    xs = []
    ys = []
    ss = []
    for y in range(border, h - border):
        for x in range(border, w - border):
            s = scores[y, x]
            if s <= t_lo:
                continue
            keep = True
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    if dy == 0 and dx == 0:
                        continue
                    sn = scores[y + dy, x + dx]
                    # ties go to the first pixel in raster order
                    if sn > s or (sn == s and (dy < 0 or (dy == 0 and dx < 0))):
                        keep = False
            if keep:
                xs.append(x)
                ys.append(y)
                ss.append(s)
                if s > t_hi:
                    cell_has_strong[(y - border) // cell, (x - border) // cell] = True
    n = len(xs)
    keep_mask = np.zeros(n, np.bool_)
    for i in range(n):
        if ss[i] > t_hi:
            keep_mask[i] = True
        elif not cell_has_strong[(ys[i] - border) // cell, (xs[i] - border) // cell]:
            keep_mask[i] = True
    out_x = np.empty(n, np.int64)
    out_y = np.empty(n, np.int64)
    out_s = np.empty(n, np.int64)
    m = 0
    for i in range(n):
        if keep_mask[i]:
            out_x[m] = xs[i]
            out_y[m] = ys[i]
            out_s[m] = ss[i]
            m += 1
    return out_x[:m], out_y[:m], out_s[:m]


def fast_score_map(img: np.ndarray, threshold: int = FAST_MIN_THRESHOLD, border: int = BORDER) -> np.ndarray:
    """Per-pixel FAST-9 score: the largest threshold at which the pixel is
    still a corner; 0 where it is not a corner at ``threshold``."""
    return _fast_scores(np.ascontiguousarray(img, dtype=np.uint8), border, threshold, CIRCLE)


def is_fast_corner(img: np.ndarray, x: int, y: int, threshold: int) -> bool:
    """Plain segment test: 9 contiguous ring pixels all brighter or all darker."""
    c = int(img[y, x])
    ring = [int(img[y + dy, x + dx]) for dx, dy in CIRCLE]
    for sign in (1, -1):
        flags = [sign * (p - c) > threshold for p in ring]
        run = 0
        for f in flags + flags:
            run = run + 1 if f else 0
            if run >= 9:
                return True
    return False


def distribute_quadtree(xy: np.ndarray, scores: np.ndarray, bounds, n_target: int):
    """Spread points with a quadtree, keeping the best point of each leaf.

    Nodes holding more than one point are split into four until there are
    at least ``n_target`` nodes or nothing can be split; when a full round
    of splits would overshoot, only the most populated nodes are split.

    Args:
        xy: (M, 2) point coordinates.
        scores: (M,) corner responses.
        bounds: ``(x0, y0, x1, y1)`` region covering all points.
        n_target: desired number of leaves.

    Returns:
        ``(kept, leaf)``: indices of retained points (at most ``n_target``),
        and the leaf id of every input point.
    """
    m = len(xy)
    if m == 0 or n_target <= 0:
        return np.zeros(0, dtype=np.int64), np.zeros(m, dtype=np.int64)
    x0, y0, x1, y1 = (float(b) for b in bounds)
    n_root = max(int(round((x1 - x0) / max(y1 - y0, 1e-9))), 1)
    root_w = (x1 - x0) / n_root
    root = np.minimum(((xy[:, 0] - x0) / root_w).astype(np.int64), n_root - 1)
    nx0 = x0 + np.arange(n_root) * root_w
    boxes = np.column_stack([nx0, np.full(n_root, y0), nx0 + root_w, np.full(n_root, y1)])
    node = root
    boxes, node = _compact(boxes, node)

    while True:
        n_nodes = len(boxes)
        counts = np.bincount(node, minlength=n_nodes)
        splittable = (counts > 1) & ((boxes[:, 2] - boxes[:, 0]) > 0.5)
        if n_nodes >= n_target or not splittable.any():
            break
        cand = np.flatnonzero(splittable)
        if n_nodes + 3 * len(cand) > n_target:
            order = np.lexsort((cand, -counts[cand]))
            k = max(-(-(n_target - n_nodes) // 3), 1)
            cand = cand[order[:k]]
        boxes, node = _split(xy, boxes, node, cand)

    order = np.lexsort((xy[:, 0], xy[:, 1], -scores, node))
    first = np.ones(m, dtype=bool)
    first[1:] = node[order][1:] != node[order][:-1]
    kept = order[first]
    if len(kept) > n_target:
        rank = np.lexsort((xy[kept, 0], xy[kept, 1], -scores[kept]))
        kept = kept[rank[:n_target]]
    return np.sort(kept), node


def _compact(boxes, node):
    used, node = np.unique(node, return_inverse=True)
    return boxes[used], node


def _split(xy, boxes, node, split_ids):
    do_split = np.zeros(len(boxes), dtype=bool)
    do_split[split_ids] = True
    b = boxes[node]
    xm = 0.5 * (b[:, 0] + b[:, 2])
    ym = 0.5 * (b[:, 1] + b[:, 3])
    child = (xy[:, 0] >= xm).astype(np.int64) + 2 * (xy[:, 1] >= ym)
    child = np.where(do_split[node], child, -1)
    key = node * 5 + (child + 1)
    uniq, new_node = np.unique(key, return_inverse=True)
    parent = uniq // 5
    ch = uniq % 5 - 1
    pb = boxes[parent]
    pxm = 0.5 * (pb[:, 0] + pb[:, 2])
    pym = 0.5 * (pb[:, 1] + pb[:, 3])
    nb = pb.copy()
    right = ch % 2 == 1
    lower = ch >= 2
    split = ch >= 0
    nb[split & right, 0] = pxm[split & right]
    nb[split & ~right, 2] = pxm[split & ~right]
    nb[split & lower, 1] = pym[split & lower]
    nb[split & ~lower, 3] = pym[split & ~lower]
    return nb, new_node


def level_budgets(max_count: int, n_levels: int, scale_ratio: float) -> np.ndarray:
    """Split a keypoint budget across levels proportionally to level area."""
    f = 1.0 / scale_ratio ** 2
    weights = f ** np.arange(n_levels)
    share = max_count * weights / weights.sum()
    budgets = np.floor(share).astype(np.int64)
    budgets[0] += max_count - budgets.sum()
    return budgets


def occupancy_mask(xy: np.ndarray, width: int, height: int, cell: int = MASK_CELL) -> np.ndarray:
    """Boolean grid of ``cell``-pixel cells containing at least one point."""
    rows = -(-height // cell)
    cols = -(-width // cell)
    mask = np.zeros((rows, cols), dtype=bool)
    if len(xy):
        c = np.clip((np.asarray(xy)[:, 0] // cell).astype(np.int64), 0, cols - 1)
        r = np.clip((np.asarray(xy)[:, 1] // cell).astype(np.int64), 0, rows - 1)
        mask[r, c] = True
    return mask


def detect(
    pyr: Pyramid,
    max_count: int = 1000,
    mask: np.ndarray | None = None,
    threshold: int = FAST_THRESHOLD,
    min_threshold: int = FAST_MIN_THRESHOLD,
    mask_cell: int = MASK_CELL,
) -> Keypoints:
    """Detect up to ``max_count`` FAST corners across all pyramid levels.

    ``mask`` is an occupancy grid of ``mask_cell``-pixel cells at level 0;
    corners falling in occupied cells are dropped. Output is ordered by
    descending score, then row-major level-0 position.
    """
    if max_count < 1:
        raise ValueError("max_count must be >= 1")
    budgets = level_budgets(max_count, pyr.n_levels, pyr.scale_ratio)
    all_xy, all_lv, all_sc = [], [], []
    carry = 0
    for level, img in enumerate(pyr.levels):
        h, w = img.shape
        budget = int(budgets[level]) + carry
        if h <= 2 * BORDER or w <= 2 * BORDER or budget <= 0:
            carry = budget
            continue
        scores = fast_score_map(img, min_threshold, BORDER)
        xs, ys, ss = _select_corners(scores, BORDER, CELL_SIZE, threshold, min_threshold)
        scale = pyr.scale(level)
        xy = np.column_stack([xs * scale, ys * scale]).astype(float)
        if mask is not None and len(xy):
            r = np.clip((xy[:, 1] // mask_cell).astype(np.int64), 0, mask.shape[0] - 1)
            c = np.clip((xy[:, 0] // mask_cell).astype(np.int64), 0, mask.shape[1] - 1)
            free = ~mask[r, c]
            xs, ys, ss, xy = xs[free], ys[free], ss[free], xy[free]
        pts = np.column_stack([xs, ys]).astype(float)
        kept, _ = distribute_quadtree(pts, ss, (BORDER, BORDER, w - BORDER, h - BORDER), budget)
        carry = budget - len(kept)
        all_xy.append(xy[kept])
        all_lv.append(np.full(len(kept), level, dtype=np.int64))
        all_sc.append(ss[kept])
    if not all_xy:
        return Keypoints.empty()
    xy = np.concatenate(all_xy)
    lv = np.concatenate(all_lv)
    sc = np.concatenate(all_sc)
    order = np.lexsort((xy[:, 0], xy[:, 1], -sc))[:max_count]
    return Keypoints(xy[order], lv[order], sc[order])
