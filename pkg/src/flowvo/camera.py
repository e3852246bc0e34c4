"""Pinhole camera: projection and depth back-projection.

Poses passed here are world-to-camera transforms (``T_cw``).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput, MalformedLine, MissingFile
from .se3 import SE3Pose

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 5000.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0 and self.depth_scale > 0):
            raise InvalidInput("fx, fy and depth_scale must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInput("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_bounds(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (
            (uv[..., 0] >= 0.0)
            & (uv[..., 0] < self.width)
            & (uv[..., 1] >= 0.0)
            & (uv[..., 1] < self.height)
        )

    def to_line(self) -> str:
        return f"{self.fx!r} {self.fy!r} {self.cx!r} {self.cy!r} {self.depth_scale!r} {self.width} {self.height}"


def load_intrinsics(path) -> CameraIntrinsics:
    """Read ``fx fy cx cy depth_scale width height`` from a one-line text file.

    Blank lines and ``#`` comments are ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 7:
            raise MalformedLine(path, number, line)
        try:
            fx, fy, cx, cy, scale = (float(p) for p in parts[:5])
            width, height = int(parts[5]), int(parts[6])
            return CameraIntrinsics(fx, fy, cx, cy, scale, width, height)
        except ValueError as exc:
            raise MalformedLine(path, number, line) from exc
    raise MalformedLine(path, 0, "")


def project(landmark, pose: SE3Pose, k: CameraIntrinsics):
    """Project a world point; returns ``(u, v)`` or ``None`` when out of view."""
    pc = pose.rotation @ np.asarray(landmark, dtype=float) + pose.translation
    z = pc[2]
    if not z > MIN_DEPTH:
        return None
    u = k.cx + k.fx * pc[0] / z
    v = k.cy + k.fy * pc[1] / z
    if not (0.0 <= u < k.width and 0.0 <= v < k.height):
        return None
    return np.array([u, v])


def project_points(landmarks: np.ndarray, pose: SE3Pose, k: CameraIntrinsics):
    """Vectorised :func:`project`.

    Args:
        landmarks: (N, 3) world points; NaN rows are allowed and come back invalid.

    Returns:
        ``(uv, valid)`` with uv of shape (N, 2) and a boolean in-view mask.
    """
    landmarks = np.asarray(landmarks, dtype=float).reshape(-1, 3)
    pc = landmarks @ pose.rotation.T + pose.translation
    z = pc[:, 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        front = z > MIN_DEPTH
        zs = np.where(front, z, 1.0)
        uv = np.empty((len(pc), 2))
        uv[:, 0] = k.cx + k.fx * pc[:, 0] / zs
        uv[:, 1] = k.cy + k.fy * pc[:, 1] / zs
        valid = front & k.in_bounds(uv)
    return uv, valid


def back_project(pixel, raw_depth: int, pose: SE3Pose, k: CameraIntrinsics):
    """Lift a pixel with raw depth into the world frame; ``None`` for missing depth."""
    u, v = float(pixel[0]), float(pixel[1])
    if not (0.0 <= u < k.width and 0.0 <= v < k.height):
        raise InvalidInput(f"pixel ({u}, {v}) outside image")
    if raw_depth <= 0:
        return None
    z = raw_depth / k.depth_scale
    pc = np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])
    return pose.inverse().apply(pc)


def back_project_points(pixels: np.ndarray, depth: np.ndarray, pose: SE3Pose, k: CameraIntrinsics) -> np.ndarray:
    """Back-project pixels using the nearest depth sample.

    Returns (N, 3) world points, NaN where the depth is zero.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    h, w = depth.shape
    col = np.clip(np.rint(pixels[:, 0]).astype(int), 0, w - 1)
    row = np.clip(np.rint(pixels[:, 1]).astype(int), 0, h - 1)
    raw = depth[row, col].astype(float)
    z = raw / k.depth_scale
    pc = np.empty((len(pixels), 3))
    pc[:, 0] = (pixels[:, 0] - k.cx) * z / k.fx
    pc[:, 1] = (pixels[:, 1] - k.cy) * z / k.fy
    pc[:, 2] = z
    world = pose.inverse().apply(pc)
    world[raw <= 0] = np.nan
    return world
