import pytest

from flowvo.cli import main
from flowvo.dataset import Trajectory, write_trajectory
from flowvo.image import write_png
from flowvo.se3 import SE3Pose
from flowvo.synthetic import SyntheticSequence, write_dataset


@pytest.fixture(scope="module")
def fixture3(tmp_path_factory):
    return write_dataset(SyntheticSequence("dolly", 3), tmp_path_factory.mktemp("cli") / "seq")


def parse_stats(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def test_track_missing_dataset(tmp_path, capsys):
    assert main(["track", str(tmp_path / "absent"), "--out", str(tmp_path / "t.txt")]) == 2
    assert "error:" in capsys.readouterr().err


def test_track_bad_config(fixture3, tmp_path, capsys):
    assert main(["track", str(fixture3), "--out", str(tmp_path / "t.txt"), "--set", "bogus=1"]) == 1
    assert "bogus" in capsys.readouterr().err


def test_track_three_frames(fixture3, tmp_path):
    out = tmp_path / "traj.txt"
    assert main(["track", str(fixture3), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == "0.000000 0.000000 0.000000 0.000000 0.000000 0.000000 0.000000 1.000000"
    report = out.with_suffix(".report.txt").read_text().splitlines()
    assert len(report) == 4 and report[1].startswith("0 0.000000 Tracked")
    manifest = out.with_suffix(".manifest.txt").read_text()
    assert "seed = 0" in manifest and "config.max_keypoints = 1000" in manifest


def test_track_same_seed_identical_bytes(fixture3, tmp_path):
    a, b, c = tmp_path / "a.txt", tmp_path / "b.txt", tmp_path / "c.txt"
    assert main(["track", str(fixture3), "--out", str(a), "--seed", "7"]) == 0
    assert main(["track", str(fixture3), "--out", str(b), "--seed", "7"]) == 0
    assert a.read_bytes() == b.read_bytes()
    # the manifest alone reproduces the run
    assert main(["track", str(fixture3), "--out", str(c), "--manifest-in", str(a.with_suffix(".manifest.txt"))]) == 0
    assert c.read_bytes() == a.read_bytes()
    assert "seed = 7" in c.with_suffix(".manifest.txt").read_text()


def test_eval_identical_files(fixture3, capsys):
    gt = fixture3 / "groundtruth.txt"
    assert main(["eval", str(gt), str(gt)]) == 0
    assert "0.000000" in capsys.readouterr().out


def test_eval_two_pose_case(tmp_path, capsys):
    est, gt = tmp_path / "est.txt", tmp_path / "gt.txt"
    write_trajectory(Trajectory([0.0, 1.0], [SE3Pose.identity(), SE3Pose.from_translation([1, 0, 0])]), est)
    write_trajectory(Trajectory([0.0, 1.0], [SE3Pose.identity(), SE3Pose.identity()]), gt)
    kv = tmp_path / "r.kv"
    assert main(["eval", str(est), str(gt), "--kv", str(kv)]) == 0
    assert "0.707107" in capsys.readouterr().out
    assert parse_stats(kv)["ate_rmse"] == "0.707107"


def test_eval_malformed_line(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n")
    assert main(["eval", str(bad), str(bad)]) == 1
    assert f"{bad}:2:" in capsys.readouterr().err


def test_eval_no_overlap(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    write_trajectory(Trajectory([0.0, 1.0], [SE3Pose.identity()] * 2), a)
    write_trajectory(Trajectory([50.0, 51.0], [SE3Pose.identity()] * 2), b)
    assert main(["eval", str(a), str(b)]) == 3


@pytest.fixture(scope="module")
def dolly_pair(tmp_path_factory):
    root = tmp_path_factory.mktemp("pair")
    seq = SyntheticSequence("dolly", 7)
    (a, da, _), (b, _, _) = seq.frame(0), seq.frame(6)
    paths = root / "a.png", root / "b.png", root / "da.png"
    for p, img in zip(paths, (a, b, da)):
        write_png(p, img)
    return [str(p) for p in paths], root


def test_match_identical_images(dolly_pair, tmp_path, capsys):
    (a, _, da), _ = dolly_pair
    stats = tmp_path / "s.kv"
    assert main(["match", a, a, da, "--stats", str(stats)]) == 0
    out = capsys.readouterr().out
    assert "Ratio" in out and "Time(ms)" in out
    s = parse_stats(stats)
    for mode in ("zero", "predicted"):
        assert float(s[f"{mode}.ratio"]) >= 0.99
        assert f"{mode}.time_ms" in s


def test_match_prediction_helps(dolly_pair, tmp_path):
    (a, b, da), _ = dolly_pair
    stats = tmp_path / "s.kv"
    overlay = tmp_path / "o.pgm"
    # camera moved 6 cm along +x, so world-to-camera translation is -6 cm
    assert main(["match", a, b, da, "--motion", "-0.06", "0", "0", "--stats", str(stats), "--out", str(overlay)]) == 0
    s = parse_stats(stats)
    assert float(s["predicted.ratio"]) >= float(s["zero.ratio"])
    assert float(s["predicted.mean_iterations"]) < float(s["zero.mean_iterations"])
    assert overlay.read_bytes().startswith(b"P5")


def test_match_unreadable_image(tmp_path):
    assert main(["match", str(tmp_path / "x.png"), str(tmp_path / "y.png")]) == 2


def test_match_bad_motion(dolly_pair):
    (a, b, _), _ = dolly_pair
    assert main(["match", a, b, "--motion", "1", "2"]) == 1


def test_bench_single_run(fixture3, capsys):
    assert main(["bench", str(fixture3), "--runs", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("runs 1  frames 3")
    rows = {ln.split()[0]: float(ln.split()[1]) for ln in lines[1:]}
    stages = ("preprocess", "detect", "predict", "track", "refine", "solve")
    assert abs(rows["total"] - sum(rows[s] for s in stages)) <= 0.002
    assert main(["bench", str(fixture3), "--runs", "0"]) == 1


def test_synth_writes_dataset(tmp_path):
    assert main(["synth", str(tmp_path / "s"), "--kind", "static", "--frames", "2"]) == 0
    assert len((tmp_path / "s" / "rgb.txt").read_text().splitlines()) == 3
