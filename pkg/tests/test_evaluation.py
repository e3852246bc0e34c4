import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowvo.dataset import Trajectory
from flowvo.errors import DegenerateGeometry, InsufficientOverlap
from flowvo.evaluation import align_rigid, ate_rmse, evaluate, rpe
from flowvo.se3 import SE3Pose, Twist, compose, exp_map

from oracles import ate_bruteforce, horn_alignment, rodrigues


def random_traj(n, seed, spread=1.0):
    rng = np.random.default_rng(seed)
    poses = [exp_map(Twist(rng.normal(0, 0.4, 3), rng.normal(0, spread, 3))) for _ in range(n)]
    return Trajectory([i / 30 for i in range(n)], poses)


def transformed(traj, w):
    return Trajectory(list(traj.timestamps), [compose(w, p) for p in traj.poses])


def test_identity_alignment():
    gt = random_traj(20, 0)
    a = align_rigid(gt, gt)
    assert a.allclose(SE3Pose.identity(), 1e-9)
    assert ate_rmse(gt, gt).ate_rmse == 0.0


def test_offset_alignment():
    gt = random_traj(20, 1)
    est = transformed(gt, SE3Pose.from_translation([-1, -2, -3]))
    a = align_rigid(est, gt)
    np.testing.assert_allclose(a.translation, [1, 2, 3], atol=1e-9)
    np.testing.assert_allclose(a.rotation, np.eye(3), atol=1e-9)


def test_thirty_degree_rotation_recovered():
    gt = random_traj(30, 2)
    rz = rodrigues([0, 0, 1], math.radians(30))
    est = transformed(gt, SE3Pose(rz.T, np.zeros(3)))
    a = align_rigid(est, gt)
    np.testing.assert_allclose(a.rotation, rz, atol=1e-9)
    np.testing.assert_allclose(a.translation, 0, atol=1e-9)
    assert ate_rmse(est, gt, align=True).ate_rmse < 1e-9


def test_two_pose_hand_value():
    gt = Trajectory([0.0, 1.0], [SE3Pose.identity(), SE3Pose.identity()])
    est = Trajectory([0.0, 1.0], [SE3Pose.identity(), SE3Pose.from_translation([1, 0, 0])])
    r = ate_rmse(est, gt, align=False)
    assert abs(r.ate_rmse - math.sqrt(0.5)) < 1e-12
    assert f"{r.ate_rmse:.6f}" == "0.707107"
    assert r.ate_max == 1.0 and r.ate_mean == 0.5 and r.matched_pose_count == 2


def test_bruteforce_agreement_100_pairs():
    for s in range(100):
        n = 5 + s % 40
        est, gt = random_traj(n, 1000 + s, 3.0), random_traj(n, 2000 + s, 3.0)
        ours = ate_rmse(est, gt).ate_rmse
        assert abs(ours - ate_bruteforce(est.translations(), gt.translations())) < 1e-9


@given(st.integers(0, 100_000))
@settings(max_examples=50)
def test_alignment_matches_horn(seed):
    est, gt = random_traj(12, seed), random_traj(12, seed + 1)
    a = align_rigid(est, gt)
    r, t = horn_alignment(est.translations(), gt.translations())
    np.testing.assert_allclose(a.rotation, r, atol=1e-8)
    np.testing.assert_allclose(a.translation, t, atol=1e-8)


@given(st.integers(0, 100_000))
@settings(max_examples=50)
def test_alignment_never_hurts(seed):
    est, gt = random_traj(10, seed), random_traj(10, seed + 7)
    assert ate_rmse(est, gt, align=True).ate_rmse <= ate_rmse(est, gt, align=False).ate_rmse + 1e-12


@given(st.integers(0, 100_000), st.lists(st.floats(-2, 2), min_size=6, max_size=6))
@settings(max_examples=50)
def test_reanchoring_invariance(seed, w):
    w = exp_map(Twist.from_vector(w))
    est, gt = random_traj(10, seed), random_traj(10, seed + 3)
    a, b = evaluate(est, gt), evaluate(transformed(est, w), transformed(gt, w))
    assert abs(a.ate_rmse - b.ate_rmse) < 1e-9
    assert abs(a.rpe_trans_rmse - b.rpe_trans_rmse) < 1e-9
    assert abs(a.rpe_rot_rmse - b.rpe_rot_rmse) < 1e-9
    aa, ba = ate_rmse(est, gt, align=True), ate_rmse(transformed(est, w), transformed(gt, w), align=True)
    assert abs(aa.ate_rmse - ba.ate_rmse) < 1e-9


def test_rpe_identical_is_zero():
    gt = random_traj(15, 4)
    t, r, _, _ = rpe(gt, gt)
    assert t == 0.0 and r == 0.0


def test_rpe_offset_invariant():
    gt = random_traj(15, 5)
    est = transformed(gt, exp_map(Twist([0.3, -0.2, 0.1], [1, 2, 3])))
    t, r, _, _ = rpe(est, gt)
    assert t < 1e-12 and r < 1e-7


def test_rpe_single_jump():
    n_poses = 21
    gt = random_traj(n_poses, 6)
    poses = list(gt.poses)
    poses[10] = compose(SE3Pose.from_translation([0.1, 0, 0]), poses[10])
    est = Trajectory(list(gt.timestamps), poses)
    t, r, te, _ = rpe(est, gt, 1)
    n = n_poses - 1
    assert abs(t - 0.1 * math.sqrt(2 / n)) < 1e-12
    assert np.count_nonzero(te > 1e-12) == 2


def test_rpe_delta_and_validation():
    gt = random_traj(10, 8)
    _, _, te, _ = rpe(gt, gt, 3)
    assert len(te) == 7
    with pytest.raises(ValueError):
        rpe(gt, gt, 0)
    with pytest.raises(InsufficientOverlap):
        rpe(gt, gt, 10)


def test_insufficient_overlap():
    a = random_traj(5, 0)
    b = Trajectory([100 + i for i in range(5)], list(a.poses))
    with pytest.raises(InsufficientOverlap):
        ate_rmse(a, b)
    two = Trajectory(a.timestamps[:2], a.poses[:2])
    with pytest.raises(InsufficientOverlap):
        ate_rmse(two, two, align=True)
    with pytest.raises(InsufficientOverlap):
        align_rigid(two, two)


def test_collinear_alignment_flagged():
    line = Trajectory([0.0, 1.0, 2.0, 3.0], [SE3Pose.from_translation([x, 0, 0]) for x in range(4)])
    with pytest.raises(DegenerateGeometry):
        align_rigid(line, line)
    r = ate_rmse(line, line, align=True)
    assert r.alignment_degenerate and r.ate_rmse < 1e-12


def test_association_by_timestamp():
    gt = random_traj(10, 9)
    est = Trajectory([t + 0.005 for t in gt.timestamps[::2]], gt.poses[::2])
    r = ate_rmse(est, gt)
    assert r.matched_pose_count == 5 and r.ate_rmse == 0.0


def test_report_formats(tmp_path):
    gt = random_traj(10, 10)
    est = transformed(gt, SE3Pose.from_translation([0, 0, 0.5]))
    rep = evaluate(est, gt)
    kv = dict(line.split("=") for line in rep.to_keyvalue().splitlines())
    assert kv["ate_rmse"] == "0.500000" and kv["aligned"] == "false" and kv["matched_pose_count"] == "10"
    assert "ATE rmse   [m]     0.500000" in rep.to_text()
    rep.write_error_csv(tmp_path / "e.csv")
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "timestamp,ate_m" and len(rows) == 11
