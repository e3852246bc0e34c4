"""Command-line entry point: track, eval, match, bench, synth."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .camera import CameraIntrinsics, back_project_points, load_intrinsics
from .dataset import load_sequence, read_trajectory, write_trajectory
from .errors import ConfigError, InsufficientMatches, InsufficientOverlap, InvalidInput, MalformedLine, MissingFile, VOError
from .evaluation import evaluate
from .features import detect
from .image import build_pyramid, clahe, read_depth, read_gray, write_pgm
from .klt import track_all
from .motion_model import predict_correspondences
from .pipeline import STAGES, PipelineConfig, format_value, load_config, parse_config_text, run_sequence
from .refine import MatchSet, refine
from .se3 import SE3Pose, Twist, exp_map

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATASET = 2
EXIT_OVERLAP = 3

DATASET_ERRORS = (MissingFile, MalformedLine, InvalidInput, OSError)


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _config_from_args(args) -> PipelineConfig:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def write_manifest(path, cfg: PipelineConfig, dataset, outputs: dict, max_frames) -> None:
    lines = [
        f"tool_version = {__version__}",
        f"dataset = {Path(dataset).resolve()}",
        f"seed = {cfg.seed}",
        f"max_frames = {max_frames if max_frames is not None else 'all'}",
    ]
    lines += [f"output.{k} = {v}" for k, v in outputs.items()]
    lines += [f"config.{k} = {format_value(v)}" for k, v in cfg.to_flat().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest_config(path) -> PipelineConfig:
    """Rebuild the pipeline configuration recorded in a manifest."""
    values = parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))
    return PipelineConfig.from_flat({k[len("config."):]: v for k, v in values.items() if k.startswith("config.")})


def cmd_track(args) -> int:
    try:
        cfg = read_manifest_config(args.manifest_in) if args.manifest_in else _config_from_args(args)
        if args.manifest_in and args.seed is not None:
            cfg = PipelineConfig.from_flat({"seed": args.seed}, cfg)
    except (ConfigError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        seq = load_sequence(args.dataset)
    except DATASET_ERRORS as exc:
        return _fail(EXIT_DATASET, f"cannot load dataset {args.dataset}: {exc}")
    out = Path(args.out)
    report = Path(args.report) if args.report else out.with_suffix(".report.txt")
    manifest = Path(args.manifest) if args.manifest else out.with_suffix(".manifest.txt")
    write_manifest(manifest, cfg, args.dataset, {"trajectory": out, "report": report}, args.max_frames)
    try:
        run = run_sequence(seq, cfg, args.max_frames)
    except DATASET_ERRORS as exc:
        return _fail(EXIT_DATASET, str(exc))
    write_trajectory(run.trajectory, out)
    run.write_report(report)
    failed = sum(f.status.value == "Failed" for f in run.frames)
    print(f"frames {len(run.frames)}  failed {failed}  trajectory {out}")
    for stage, (mean, median) in run.timing_summary().items():
        print(f"  {stage:<10} mean {mean:8.3f} ms  median {median:8.3f} ms")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        est = read_trajectory(args.est)
        gt = read_trajectory(args.gt)
    except (MalformedLine, MissingFile) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        report = evaluate(est, gt, args.align, args.rpe_delta)
    except InsufficientOverlap as exc:
        return _fail(EXIT_OVERLAP, str(exc))
    print(report.to_text(), end="")
    if args.kv:
        Path(args.kv).write_text(report.to_keyvalue(), encoding="utf-8")
    if args.csv:
        report.write_error_csv(args.csv)
    return EXIT_OK


def _draw_segment(img: np.ndarray, p0, p1, value: int) -> None:
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 1
    xs = np.rint(np.linspace(p0[0], p1[0], n)).astype(int)
    ys = np.rint(np.linspace(p0[1], p1[1], n)).astype(int)
    ok = (xs >= 0) & (xs < img.shape[1]) & (ys >= 0) & (ys < img.shape[0])
    img[ys[ok], xs[ok]] = value


def match_pair(gray_a, gray_b, depth_a, k: CameraIntrinsics, motion: SE3Pose, cfg: PipelineConfig):
    """Detect on ``a`` and track into ``b`` with zero and motion-predicted guesses.

    Returns:
        ``{"zero": stats, "predicted": stats}`` with ratio, time and
        iteration statistics, plus the keypoints and refined matches.
    """
    if gray_a.shape != gray_b.shape:
        raise InvalidInput("images differ in size")
    if cfg.clahe.enabled:
        gray_a = clahe(gray_a, cfg.clahe.clip_limit, (cfg.clahe.tiles, cfg.clahe.tiles))
        gray_b = clahe(gray_b, cfg.clahe.clip_limit, (cfg.clahe.tiles, cfg.clahe.tiles))
    pa = build_pyramid(gray_a, cfg.tracker.n_levels, cfg.tracker.scale_ratio)
    pb = build_pyramid(gray_b, cfg.tracker.n_levels, cfg.tracker.scale_ratio)
    kps = detect(pa, cfg.max_keypoints, None, cfg.fast_threshold, cfg.fast_min_threshold)
    xy = kps.xy
    guesses = {"zero": xy.copy()}
    if depth_a is not None:
        landmarks = back_project_points(xy, depth_a, SE3Pose.identity(), k)
        guesses["predicted"] = predict_correspondences(xy, landmarks, motion, k)
    else:
        guesses["predicted"] = xy.copy()
    out = {}
    for mode, guess in guesses.items():
        t0 = time.perf_counter()
        batch = track_all(pa, pb, xy, guess, cfg.tracker)
        t1 = time.perf_counter()
        ok = batch.ok
        matches = MatchSet(xy[ok], (xy + batch.movement)[ok])
        try:
            refined, _ = refine(matches, (gray_a.shape[1], gray_a.shape[0]), cfg.refine,
                                np.random.default_rng(cfg.seed))
            n_in = refined.n_inliers
        except InsufficientMatches:
            refined, n_in = matches, 0
        t2 = time.perf_counter()
        out[mode] = {
            "total": len(xy),
            "tracked": int(ok.sum()),
            "inliers": n_in,
            "ratio": n_in / len(xy) if len(xy) else 0.0,
            "track_ms": (t1 - t0) * 1e3,
            "refine_ms": (t2 - t1) * 1e3,
            "time_ms": (t2 - t0) * 1e3,
            "mean_iterations": float(batch.iterations[ok].mean()) if ok.any() else 0.0,
            "matches": refined,
        }
    return out


def cmd_match(args) -> int:
    try:
        cfg = _config_from_args(args)
    except (ConfigError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        a = read_gray(args.img_a)
        b = read_gray(args.img_b)
        depth = read_depth(args.depth_a) if args.depth_a else None
        if args.intrinsics:
            k = load_intrinsics(args.intrinsics)
        else:
            h, w = a.shape
            k = CameraIntrinsics(525.0, 525.0, (w - 1) / 2.0, (h - 1) / 2.0, 5000.0, w, h)
        motion = SE3Pose.identity()
        if args.motion:
            if len(args.motion) not in (3, 6):
                return _fail(EXIT_CONFIG, "--motion takes 3 or 6 values")
            vals = list(args.motion) + [0.0] * (6 - len(args.motion))
            # hint given as translation then rotation; twist order is rotation first
            motion = exp_map(Twist.from_vector(np.r_[vals[3:6], vals[0:3]]))
        stats = match_pair(a, b, depth, k, motion, cfg)
    except (OSError, InvalidInput, MalformedLine, MissingFile) as exc:
        return _fail(EXIT_DATASET, str(exc))
    except VOError as exc:
        return _fail(EXIT_DATASET, str(exc))
    print(f"{'mode':<10} {'Total':>6} {'Inliers':>8} {'Ratio':>7} {'Time(ms)':>9} {'Iter':>6}")
    for mode, s in stats.items():
        print(f"{mode:<10} {s['total']:>6} {s['inliers']:>8} {s['ratio']:>7.3f} {s['time_ms']:>9.3f} {s['mean_iterations']:>6.2f}")
    if args.stats:
        lines = []
        for mode, s in stats.items():
            for key in ("total", "tracked", "inliers", "ratio", "track_ms", "refine_ms", "time_ms", "mean_iterations"):
                lines.append(f"{mode}.{key}={s[key]}")
        Path(args.stats).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.out:
        m = stats["predicted"]["matches"]
        canvas = (b // 2).astype(np.uint8)
        for p, q in zip(m.ref[m.inlier_mask], m.cur[m.inlier_mask]):
            _draw_segment(canvas, p, q, 255)
        write_pgm(args.out, canvas)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        cfg = _config_from_args(args)
    except (ConfigError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        seq = load_sequence(args.dataset)
    except DATASET_ERRORS as exc:
        return _fail(EXIT_DATASET, f"cannot load dataset {args.dataset}: {exc}")
    if args.runs < 1:
        return _fail(EXIT_CONFIG, "--runs must be >= 1")
    per_run = []
    try:
        # untimed warm-up so compiled kernels are loaded before measuring
        run_sequence(seq, cfg, 2)
        for _ in range(args.runs):
            run = run_sequence(seq, cfg, args.max_frames)
            per_run.append({s: m for s, (m, _) in run.timing_summary().items()})
    except DATASET_ERRORS as exc:
        return _fail(EXIT_DATASET, str(exc))
    medians = {s: float(np.median([r[s] for r in per_run])) for s in STAGES}
    print(f"runs {args.runs}  frames {len(run.frames)}  (mean ms per frame, median over runs)")
    for s in STAGES:
        print(f"  {s:<10} {medians[s]:8.3f}")
    print(f"  {'matching':<10} {medians['track'] + medians['refine']:8.3f}")
    print(f"  {'total':<10} {sum(medians.values()):8.3f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import SyntheticSequence, write_dataset

    try:
        seq = SyntheticSequence(args.kind, args.frames)
        root = write_dataset(seq, args.out)
    except (ValueError, OSError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    print(f"wrote {len(seq)} frames to {root}")
    return EXIT_OK


def _add_config_args(p) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="RANSAC seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowvo", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="run odometry over a TUM-format sequence")
    p.add_argument("dataset")
    p.add_argument("--out", default="traj.txt")
    p.add_argument("--report", help="sidecar per-frame report (default: <out>.report.txt)")
    p.add_argument("--manifest", help="run manifest path (default: <out>.manifest.txt)")
    p.add_argument("--manifest-in", help="reuse the configuration stored in a manifest")
    p.add_argument("--max-frames", type=int)
    _add_config_args(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="ATE/RPE of an estimate against ground truth")
    p.add_argument("est")
    p.add_argument("gt")
    p.add_argument("--align", action="store_true", help="rigidly align before ATE")
    p.add_argument("--rpe-delta", type=int, default=1, help="RPE interval in frames (30 = one second)")
    p.add_argument("--kv", help="write key=value report")
    p.add_argument("--csv", help="write per-frame ATE series")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("match", help="track one image pair with zero and predicted guesses")
    p.add_argument("img_a")
    p.add_argument("img_b")
    p.add_argument("depth_a", nargs="?")
    p.add_argument("--intrinsics", help="calibration file")
    p.add_argument("--motion", type=float, nargs="+", metavar="V",
                   help="world-to-camera motion hint a->b: tx ty tz [rx ry rz]")
    p.add_argument("--out", help="overlay PGM")
    p.add_argument("--stats", help="write key=value stats")
    _add_config_args(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("bench", help="median-of-runs timing")
    p.add_argument("dataset")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--max-frames", type=int)
    _add_config_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="render a synthetic TUM-format sequence")
    p.add_argument("out")
    p.add_argument("--kind", default="smooth", choices=["static", "dolly", "accelerating", "smooth"])
    p.add_argument("--frames", type=int, default=200)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
