"""Uniform-acceleration motion prediction.

The increment between consecutive relative motions is assumed constant,
which gives the next relative motion as ``T12 * T23^-1 * T12`` where
``T12`` and ``T23`` are the two most recent frame-to-frame motions.
Frame spacing is assumed constant; gaps in the frame index are not
rescaled.
"""
from __future__ import annotations

import enum
from collections import deque

import numpy as np

from .camera import CameraIntrinsics, project_points
from .se3 import SE3Pose, compose, relative


class PredictionTier(enum.IntEnum):
    IDENTITY = 0
    CONSTANT_VELOCITY = 1
    UNIFORM_ACCELERATION = 2


class PoseHistory:
    """The last three absolute (world-to-camera) poses, newest last."""

    def __init__(self, maxlen: int = 3):
        self._items = deque(maxlen=maxlen)

    def push(self, frame_index: int, pose: SE3Pose) -> None:
        if self._items and frame_index <= self._items[-1][0]:
            raise ValueError("frame indices must be strictly increasing")
        self._items.append((frame_index, pose))

    def reset(self, keep_last: bool = True) -> None:
        """Drop history, optionally keeping only the newest pose."""
        last = self._items[-1] if (keep_last and self._items) else None
        self._items.clear()
        if last is not None:
            self._items.append(last)

    def __len__(self) -> int:
        return len(self._items)

    @property
    def poses(self):
        """Poses ordered oldest to newest."""
        return [p for _, p in self._items]

    @property
    def frame_indices(self):
        return [i for i, _ in self._items]

    @property
    def last(self) -> SE3Pose | None:
        return self._items[-1][1] if self._items else None


def predict_relative(history: PoseHistory):
    """Predict the motion from the newest pose to the next frame.

    Returns:
        ``(motion, tier)``: the relative transform and which fallback
        produced it.
    """
    poses = history.poses
    if len(poses) >= 3:
        t3, t2, t1 = poses[-3:]
        t12 = relative(t1, t2)
        t23 = relative(t2, t3)
        return compose(compose(t12, t23.inverse()), t12), PredictionTier.UNIFORM_ACCELERATION
    if len(poses) == 2:
        return relative(poses[1], poses[0]), PredictionTier.CONSTANT_VELOCITY
    return SE3Pose.identity(), PredictionTier.IDENTITY


def predict_pose(history: PoseHistory) -> SE3Pose:
    """Initial pose of the next frame: predicted motion applied to the newest pose."""
    if len(history) == 0:
        return SE3Pose.identity()
    motion, _ = predict_relative(history)
    return compose(motion, history.last)


def predict_correspondences(
    positions: np.ndarray,
    landmarks: np.ndarray,
    predicted_pose: SE3Pose,
    k: CameraIntrinsics,
) -> np.ndarray:
    """Initial guesses for where each reference keypoint appears next.

    Keypoints whose landmark is missing (NaN row) or projects out of view
    keep their reference position.

    Args:
        positions: (N, 2) reference pixel positions.
        landmarks: (N, 3) world points, NaN for keypoints without depth.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(positions) == 0:
        return positions.copy()
    uv, valid = project_points(landmarks, predicted_pose, k)
    return np.where(valid[:, None], uv, positions)
