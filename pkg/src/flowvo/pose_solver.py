"""Motion-only pose refinement from 3D-2D correspondences.

Gauss-Newton on the SE(3) tangent with a left-multiplicative update
``T <- exp(delta) * T`` and a Huber kernel on the pixel residual norm.
Optimisation runs in rounds; after each round, correspondences whose
squared error exceeds the chi-square gate are deactivated for the next
round (and reactivated if they come back under it).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import MIN_DEPTH, CameraIntrinsics
from .errors import Diverged, InsufficientData
from .se3 import SE3Pose, Twist, compose, exp_map

DIVERGENCE_RTOL = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    huber_delta: float = 2.45
    rounds: int = 4
    iterations: int = 10
    chi2_threshold: float = 5.991
    min_correspondences: int = 10
    use_lm: bool = False
    lm_lambda: float = 1e-3


@dataclass
class PnPProblem:
    landmarks: np.ndarray
    pixels: np.ndarray
    intrinsics: CameraIntrinsics
    initial_pose: SE3Pose

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 3)
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        if len(self.landmarks) != len(self.pixels):
            raise ValueError("landmark and pixel counts differ")


@dataclass
class PoseEstimate:
    pose: SE3Pose
    inlier_mask: np.ndarray
    mean_error: float
    rounds_run: int


def reprojection_residuals(pose: SE3Pose, landmarks: np.ndarray, pixels: np.ndarray, k: CameraIntrinsics):
    """Projected minus observed pixel, shape (N, 2), and a positive-depth mask."""
    pc = landmarks @ pose.rotation.T + pose.translation
    z = pc[:, 2]
    front = z > MIN_DEPTH
    zs = np.where(front, z, 1.0)
    r = np.empty((len(pc), 2))
    r[:, 0] = k.cx + k.fx * pc[:, 0] / zs - pixels[:, 0]
    r[:, 1] = k.cy + k.fy * pc[:, 1] / zs - pixels[:, 1]
    return r, front


def reprojection_jacobian(pose: SE3Pose, landmarks: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """d(residual)/d(delta) for ``exp(delta) * pose``, delta = (phi, rho); shape (N, 2, 6)."""
    pc = landmarks @ pose.rotation.T + pose.translation
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    zi = 1.0 / z
    zi2 = zi * zi
    n = len(pc)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = k.fx * zi
    dproj[:, 0, 2] = -k.fx * x * zi2
    dproj[:, 1, 1] = k.fy * zi
    dproj[:, 1, 2] = -k.fy * y * zi2
    # d(pc)/d(phi) = -[pc]x, d(pc)/d(rho) = I
    dpc = np.zeros((n, 3, 6))
    dpc[:, 0, 1] = z
    dpc[:, 0, 2] = -y
    dpc[:, 1, 0] = -z
    dpc[:, 1, 2] = x
    dpc[:, 2, 0] = y
    dpc[:, 2, 1] = -x
    dpc[:, 0, 3] = dpc[:, 1, 4] = dpc[:, 2, 5] = 1.0
    return dproj @ dpc


def _huber_weights(norms: np.ndarray, delta: float) -> np.ndarray:
    w = np.ones_like(norms)
    big = norms > delta
    w[big] = delta / norms[big]
    return w


def solve_pose(problem: PnPProblem, cfg: SolverConfig = SolverConfig()) -> PoseEstimate:
    """Refine ``problem.initial_pose`` against the correspondences.

    Raises:
        InsufficientData: fewer than ``cfg.min_correspondences`` inputs, or
            too few survive the outlier gate.
        Diverged: three consecutive rounds each ended with a higher robust
            cost over their active set than they started with.
    """
    pts, obs, k = problem.landmarks, problem.pixels, problem.intrinsics
    n = len(pts)
    if n < cfg.min_correspondences:
        raise InsufficientData(f"{n} correspondences, need {cfg.min_correspondences}")
    pose = problem.initial_pose
    _, front = reprojection_residuals(pose, pts, obs, k)
    active = front.copy()
    increases = 0
    err = np.inf
    rounds = 0
    for rounds in range(1, cfg.rounds + 1):
        if active.sum() < 3:
            break
        lam = cfg.lm_lambda
        start_err = _robust_cost(pose, pts[active], obs[active], k, cfg.huber_delta)
        for _ in range(cfg.iterations):
            p = pts[active]
            r, _ = reprojection_residuals(pose, p, obs[active], k)
            jac = reprojection_jacobian(pose, p, k)
            w = _huber_weights(np.linalg.norm(r, axis=1), cfg.huber_delta)
            jw = jac * w[:, None, None]
            h = np.einsum("nki,nkj->ij", jw, jac)
            g = np.einsum("nki,nk->i", jw, r)
            if cfg.use_lm:
                h = h + lam * np.diag(np.diag(h))
            try:
                delta = -np.linalg.solve(h, g)
            except np.linalg.LinAlgError:
                break
            candidate = compose(exp_map(Twist.from_vector(delta)), pose)
            if cfg.use_lm:
                cost_old = _robust_cost(pose, p, obs[active], k, cfg.huber_delta)
                cost_new = _robust_cost(candidate, p, obs[active], k, cfg.huber_delta)
                if cost_new > cost_old:
                    lam *= 10.0
                    continue
                lam = max(lam / 10.0, 1e-9)
            pose = candidate
            if np.abs(delta).max() < 1e-12:
                break
        # divergence: the round made its own objective worse
        end_err = _robust_cost(pose, pts[active], obs[active], k, cfg.huber_delta)
        if end_err > start_err * (1.0 + DIVERGENCE_RTOL) + 1e-12:
            increases += 1
            if increases >= 3:
                raise Diverged(f"reprojection error increased for {increases} rounds")
        else:
            increases = 0
        r, front = reprojection_residuals(pose, pts, obs, k)
        sq = (r ** 2).sum(axis=1)
        active = front & (sq <= cfg.chi2_threshold)
        if not active.any():
            break
        err = float(np.sqrt(sq[active]).mean())
    if active.sum() < max(cfg.min_correspondences // 2, 3):
        raise InsufficientData(f"only {int(active.sum())} correspondences survived the outlier gate")
    return PoseEstimate(pose, active, err, rounds)


def _robust_cost(pose, pts, obs, k, delta) -> float:
    r, _ = reprojection_residuals(pose, pts, obs, k)
    e = np.linalg.norm(r, axis=1)
    return float(np.where(e <= delta, 0.5 * e * e, delta * (e - 0.5 * delta)).sum())
