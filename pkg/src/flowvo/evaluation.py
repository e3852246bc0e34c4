"""Trajectory accuracy: rigid alignment, absolute and relative pose error.

Trajectories hold camera-to-world poses; absolute error compares camera
positions, relative error compares motions over a fixed frame interval.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import MAX_DT, Trajectory, associate_timestamps
from .errors import DegenerateGeometry, InsufficientOverlap
from .se3 import SE3Pose, compose, inverse, nearest_rotation, rotation_angle

# relative size of the second singular value below which a cloud counts as collinear
COLLINEAR_TOL = 1e-9


@dataclass
class EvalReport:
    ate_rmse: float = float("nan")
    ate_mean: float = float("nan")
    ate_median: float = float("nan")
    ate_max: float = float("nan")
    rpe_trans_rmse: float = float("nan")
    rpe_rot_rmse: float = float("nan")
    matched_pose_count: int = 0
    aligned: bool = False
    alignment_degenerate: bool = False
    ate_errors: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    ate_timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    rpe_trans_errors: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    rpe_rot_errors: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    _KEYS = (
        "ate_rmse", "ate_mean", "ate_median", "ate_max",
        "rpe_trans_rmse", "rpe_rot_rmse", "matched_pose_count",
        "aligned", "alignment_degenerate",
    )

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self._KEYS}

    def to_keyvalue(self) -> str:
        out = []
        for k, v in self.as_dict().items():
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = f"{v:.6f}"
            out.append(f"{k}={v}")
        return "\n".join(out) + "\n"

    def to_text(self) -> str:
        lines = [
            f"matched poses      {self.matched_pose_count}",
            f"alignment          {'se3' if self.aligned else 'none'}"
            + (" (degenerate, flagged)" if self.alignment_degenerate else ""),
            f"ATE rmse   [m]     {self.ate_rmse:.6f}",
            f"ATE mean   [m]     {self.ate_mean:.6f}",
            f"ATE median [m]     {self.ate_median:.6f}",
            f"ATE max    [m]     {self.ate_max:.6f}",
            f"RPE trans  [m]     {self.rpe_trans_rmse:.6f}",
            f"RPE rot    [rad]   {self.rpe_rot_rmse:.6f}",
        ]
        return "\n".join(lines) + "\n"

    def write_error_csv(self, path) -> None:
        """Per-frame absolute errors as ``timestamp,ate_m``."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("timestamp,ate_m\n")
            for t, e in zip(self.ate_timestamps, self.ate_errors):
                fh.write(f"{t:.6f},{e:.9f}\n")


def _associated(est: Trajectory, gt: Trajectory, max_dt: float):
    pairs = associate_timestamps(est.timestamps, gt.timestamps, max_dt)
    ei = [i for i, _ in pairs]
    gi = [j for _, j in pairs]
    return ei, gi


def _kabsch(src: np.ndarray, dst: np.ndarray):
    """Rigid ``(R, t)`` minimising ``sum |dst - (R src + t)|^2``; also reports degeneracy."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    h = a.T @ b
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    r = nearest_rotation(r)
    t = mu_d - r @ mu_s
    spread_s = np.linalg.svd(a, compute_uv=False)
    spread_d = np.linalg.svd(b, compute_uv=False)
    degenerate = any(
        sv[0] <= 0 or sv[1] <= COLLINEAR_TOL * sv[0] for sv in (spread_s, spread_d)
    )
    return SE3Pose(r, t), degenerate


def align_rigid(est: Trajectory, gt: Trajectory, max_dt: float = MAX_DT) -> SE3Pose:
    """Transform ``A`` such that ``A * est`` best matches ``gt`` in position.

    Raises:
        InsufficientOverlap: fewer than 3 associated pairs.
        DegenerateGeometry: positions are collinear, so rotation about the
            line is not determined.
    """
    ei, gi = _associated(est, gt, max_dt)
    if len(ei) < 3:
        raise InsufficientOverlap(f"{len(ei)} associated poses, need 3")
    pose, degenerate = _kabsch(est.translations()[ei], gt.translations()[gi])
    if degenerate:
        raise DegenerateGeometry("positions are collinear; rotation is ambiguous")
    return pose


def ate_rmse(est: Trajectory, gt: Trajectory, align: bool = False, max_dt: float = MAX_DT) -> EvalReport:
    """Absolute trajectory error over associated positions.

    With ``align`` and collinear positions, the least-squares transform is
    still applied (it is optimal but not unique) and the report is flagged.
    """
    ei, gi = _associated(est, gt, max_dt)
    need = 3 if align else 1
    if len(ei) < need:
        raise InsufficientOverlap(f"{len(ei)} associated poses, need {need}")
    e = est.translations()[ei]
    g = gt.translations()[gi]
    degenerate = False
    if align:
        pose, degenerate = _kabsch(e, g)
        e = e @ pose.rotation.T + pose.translation
    err = np.linalg.norm(g - e, axis=1)
    return EvalReport(
        ate_rmse=float(np.sqrt(np.mean(err ** 2))),
        ate_mean=float(err.mean()),
        ate_median=float(np.median(err)),
        ate_max=float(err.max()),
        matched_pose_count=len(ei),
        aligned=align,
        alignment_degenerate=degenerate,
        ate_errors=err,
        ate_timestamps=np.asarray(est.timestamps)[ei],
    )


def rpe(est: Trajectory, gt: Trajectory, delta_frames: int = 1, max_dt: float = MAX_DT):
    """Relative pose error over ``delta_frames`` associated steps.

    Returns:
        ``(trans_rmse, rot_rmse, trans_errors, rot_errors)``.
    """
    if delta_frames < 1:
        raise ValueError("delta_frames must be >= 1")
    ei, gi = _associated(est, gt, max_dt)
    if len(ei) < delta_frames + 1:
        raise InsufficientOverlap(f"{len(ei)} associated poses, need {delta_frames + 1}")
    trans, rot = [], []
    for a in range(len(ei) - delta_frames):
        b = a + delta_frames
        d_gt = compose(inverse(gt.poses[gi[a]]), gt.poses[gi[b]])
        d_est = compose(inverse(est.poses[ei[a]]), est.poses[ei[b]])
        err = compose(inverse(d_gt), d_est)
        trans.append(np.linalg.norm(err.translation))
        rot.append(rotation_angle(err.rotation))
    trans = np.array(trans)
    rot = np.array(rot)
    return (
        float(np.sqrt(np.mean(trans ** 2))),
        float(np.sqrt(np.mean(rot ** 2))),
        trans,
        rot,
    )


def evaluate(est: Trajectory, gt: Trajectory, align: bool = False, rpe_delta: int = 1,
             max_dt: float = MAX_DT) -> EvalReport:
    """ATE plus RPE in one report; RPE is left NaN when there are too few pairs."""
    report = ate_rmse(est, gt, align, max_dt)
    try:
        t, r, te, re = rpe(est, gt, rpe_delta, max_dt)
    except InsufficientOverlap:
        return report
    report.rpe_trans_rmse, report.rpe_rot_rmse = t, r
    report.rpe_trans_errors, report.rpe_rot_errors = te, re
    return report
