"""Ray-cast RGB-D frames of a textured box room, for tests and demos.

The room is an axis-aligned box whose walls carry a blocky random texture.
The first camera sits at the world origin looking down +z, so ground-truth
trajectories start at identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .camera import CameraIntrinsics
from .dataset import Trajectory, format_pose_line
from .image import write_png
from .se3 import SE3Pose, exp_rotation

DEFAULT_K = CameraIntrinsics(525.0, 525.0, 319.5, 239.5)


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    r = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-r, r + 1)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    out = img
    for axis in (0, 1):
        padded = np.concatenate([out.take(range(-r, 0), axis=axis), out, out.take(range(r), axis=axis)], axis=axis)
        acc = np.zeros_like(out)
        for i, w in enumerate(g):
            acc += w * padded.take(range(i, i + out.shape[axis]), axis=axis)
        out = acc
    return out


def make_texture(size: int = 1024, cell: int = 8, sigma: float = 1.5, seed: int = 7) -> np.ndarray:
    """Tileable blocky noise in [0, 255], float64."""
    rng = np.random.default_rng(seed)
    blocks = rng.integers(0, 256, size=(size // cell, size // cell)).astype(float)
    tex = np.kron(blocks, np.ones((cell, cell)))
    return _blur(tex, sigma)


@dataclass
class BoxRoom:
    lo: tuple = (-2.0, -1.5, -2.0)
    hi: tuple = (2.0, 1.5, 3.0)
    texel: float = 0.005
    texture: np.ndarray = None
    supersample: int = 3

    def __post_init__(self):
        if self.texture is None:
            self.texture = make_texture()
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)

    def render(self, pose_wc: SE3Pose, k: CameraIntrinsics = DEFAULT_K):
        """Gray image (uint8) and TUM raw depth (uint16) seen from ``pose_wc``.

        Intensity is the mean over ``supersample``^2 rays per pixel, which
        keeps the texture from aliasing; depth is taken on the centre ray.
        """
        o = np.asarray(pose_wc.translation, dtype=float)
        if np.any(o <= self.lo) or np.any(o >= self.hi):
            raise ValueError("camera is outside the room")
        gray, z = _render_kernel(
            np.ascontiguousarray(pose_wc.rotation, dtype=float), o, self.lo, self.hi, self.texture, self.texel,
            k.fx, k.fy, k.cx, k.cy, k.width, k.height, self.supersample,
        )
        gray = np.clip(np.rint(gray), 0, 255).astype(np.uint8)
        depth = np.clip(np.rint(z * k.depth_scale), 0, 65535).astype(np.uint16)
        return gray, depth


@numba.njit(cache=True)
def _floor(x):
    k = int(x)
    return k - 1 if k > x else k


@numba.njit(cache=True, error_model="numpy")
def _ray(r, o, lo, hi, tex, texel, dx, dy):
    """Texture value and depth along the camera ray ``(dx, dy, 1)``."""
    d0 = r[0, 0] * dx + r[0, 1] * dy + r[0, 2]
    d1 = r[1, 0] * dx + r[1, 1] * dy + r[1, 2]
    d2 = r[2, 0] * dx + r[2, 1] * dy + r[2, 2]
    best = np.inf
    face = 0
    upper = False
    if d0 != 0.0:
        best = ((hi[0] if d0 > 0 else lo[0]) - o[0]) / d0
        upper = d0 > 0
    if d1 != 0.0:
        tt = ((hi[1] if d1 > 0 else lo[1]) - o[1]) / d1
        if tt < best:
            best, face, upper = tt, 1, d1 > 0
    if d2 != 0.0:
        tt = ((hi[2] if d2 > 0 else lo[2]) - o[2]) / d2
        if tt < best:
            best, face, upper = tt, 2, d2 > 0
    px = o[0] + best * d0
    py = o[1] + best * d1
    pz = o[2] + best * d2
    # per-face texture coordinates and offsets so walls differ
    s = (py if face == 0 else px) + 1.37 * face
    t = (py if face == 2 else pz) + 0.61 * face + (2.9 if upper else 0.0)
    th, tw = tex.shape
    # wrap into the tile with multiplies only; integer modulo is slow here
    x = s / texel
    y = t / texel
    x -= tw * _floor(x / tw)
    y -= th * _floor(y / th)
    xi = min(int(x), tw - 1)
    yi = min(int(y), th - 1)
    ax = x - xi
    ay = y - yi
    xj = xi + 1 if xi + 1 < tw else 0
    yj = yi + 1 if yi + 1 < th else 0
    v = (tex[yi, xi] * (1 - ax) * (1 - ay) + tex[yi, xj] * ax * (1 - ay)
         + tex[yj, xi] * (1 - ax) * ay + tex[yj, xj] * ax * ay)
    return v, best


@numba.njit(cache=True, error_model="numpy")
def _render_kernel(r, o, lo, hi, tex, texel, fx, fy, cx, cy, w, h, ss):
    gray = np.empty((h, w))
    z = np.empty((h, w))
    inv = 1.0 / (ss * ss)
    for v in range(h):
        for u in range(w):
            acc = 0.0
            for j in range(ss):
                for i in range(ss):
                    su = u + (i + 0.5) / ss - 0.5
                    sv = v + (j + 0.5) / ss - 0.5
                    val, _ = _ray(r, o, lo, hi, tex, texel, (su - cx) / fx, (sv - cy) / fy)
                    acc += val
            gray[v, u] = acc * inv
            _, z[v, u] = _ray(r, o, lo, hi, tex, texel, (u - cx) / fx, (v - cy) / fy)
    return gray, z


def trajectory_poses(kind: str, n_frames: int, dt: float = 1.0 / 30.0):
    """Camera-to-world poses for a named motion, starting at identity.

    Kinds: ``static``, ``dolly`` (0.3 m/s along x), ``accelerating``
    (0.6 m/s^2 along x with a slow yaw ramp), ``smooth`` (bounded
    sinusoidal translation and rotation).
    """
    poses = []
    for i in range(n_frames):
        t = i * dt
        if kind == "static":
            r, p = np.eye(3), np.zeros(3)
        elif kind == "dolly":
            r, p = np.eye(3), np.array([0.3 * t, 0.0, 0.0])
        elif kind == "accelerating":
            r = exp_rotation([0.0, 0.05 * t * t, 0.0])
            p = np.array([0.3 * t * t, 0.02 * t * t, 0.0])
        elif kind == "smooth":
            w = 2 * math.pi / 6.0
            p = np.array([0.3 * math.sin(w * t), 0.1 * math.sin(2 * w * t), 0.2 * (1 - math.cos(w * t))])
            r = exp_rotation([0.05 * math.sin(w * t), 0.15 * math.sin(w * t), 0.03 * math.sin(2 * w * t)])
        else:
            raise ValueError(f"unknown trajectory kind {kind!r}")
        poses.append(SE3Pose(r, p))
    return poses


class SyntheticSequence:
    """In-memory rendered sequence; frames are produced lazily."""

    def __init__(self, kind: str = "smooth", n_frames: int = 200, k: CameraIntrinsics = DEFAULT_K,
                 room: BoxRoom | None = None, dt: float = 1.0 / 30.0):
        self.k = k
        self.room = room or BoxRoom()
        self.dt = dt
        self.poses_wc = trajectory_poses(kind, n_frames, dt)

    def __len__(self) -> int:
        return len(self.poses_wc)

    def timestamp(self, i: int) -> float:
        return round(i * self.dt, 6)

    def frame(self, i: int):
        """``(rgb, depth, timestamp)``; rgb is the gray render replicated to 3 channels."""
        gray, depth = self.room.render(self.poses_wc[i], self.k)
        return np.repeat(gray[:, :, None], 3, axis=2), depth, self.timestamp(i)

    def __iter__(self):
        return (self.frame(i) for i in range(len(self)))

    def groundtruth(self) -> Trajectory:
        return Trajectory([self.timestamp(i) for i in range(len(self))], list(self.poses_wc))


def write_dataset(seq: SyntheticSequence, directory) -> Path:
    """Write a TUM-format directory with images, lists, ground truth and calibration."""
    root = Path(directory)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    rgb_lines = ["# timestamp filename"]
    depth_lines = ["# timestamp filename"]
    gt_lines = ["# timestamp tx ty tz qx qy qz qw"]
    for i in range(len(seq)):
        rgb, depth, ts = seq.frame(i)
        name = f"{ts:.6f}.png"
        write_png(root / "rgb" / name, rgb)
        write_png(root / "depth" / name, depth)
        rgb_lines.append(f"{ts:.6f} rgb/{name}")
        depth_lines.append(f"{ts:.6f} depth/{name}")
        gt_lines.append(format_pose_line(ts, seq.poses_wc[i]))
    (root / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (root / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    (root / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n")
    (root / "calibration.txt").write_text(seq.k.to_line() + "\n")
    return root
