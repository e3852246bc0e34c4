"""Frame-to-frame RGB-D odometry front-end.

Per frame: gray conversion, contrast equalisation and pyramid; motion-model
pose prediction and keypoint guesses; pyramidal LK tracking against the
previous frame; grid-statistics and epipolar refinement; motion-only pose
refinement against the tracked landmarks. Keypoints are topped up from the
current frame whenever the refined inlier count drops below the
redetection threshold.

Poses inside the pipeline are world-to-camera; trajectories are written
camera-to-world.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, back_project_points
from .dataset import SequenceHandle, Trajectory, associate
from .errors import ConfigError, Diverged, InsufficientData, InsufficientMatches, InvalidInput
from .features import FAST_MIN_THRESHOLD, FAST_THRESHOLD, detect, occupancy_mask
from .image import build_pyramid, clahe, read_depth, read_image, rgb_to_gray
from .klt import TrackerConfig, track_all
from .motion_model import PoseHistory, PredictionTier, predict_correspondences, predict_pose, predict_relative
from .pose_solver import PnPProblem, SolverConfig, solve_pose
from .refine import MatchSet, RefineConfig, refine
from .se3 import SE3Pose

STAGES = ("preprocess", "detect", "predict", "track", "refine", "solve")


@dataclass(frozen=True)
class ClaheConfig:
    enabled: bool = True
    clip_limit: float = 3.0
    tiles: int = 8


@dataclass(frozen=True)
class PipelineConfig:
    max_keypoints: int = 1000
    redetect_threshold: int = 300
    frame_interval: float = 1.0 / 30.0
    fast_threshold: int = FAST_THRESHOLD
    fast_min_threshold: int = FAST_MIN_THRESHOLD
    seed: int = 0
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    clahe: ClaheConfig = field(default_factory=ClaheConfig)

    def __post_init__(self):
        if not 0 < self.redetect_threshold < self.max_keypoints:
            raise ConfigError("need 0 < redetect_threshold < max_keypoints")
        if self.frame_interval <= 0:
            raise ConfigError("frame_interval must be positive")

    def to_flat(self) -> dict:
        """Flat ``{dotted.key: value}`` view, nested blocks prefixed by name."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "__dataclass_fields__"):
                for sub in fields(value):
                    out[f"{f.name}.{sub.name}"] = getattr(value, sub.name)
            else:
                out[f.name] = value
        return out

    @classmethod
    def from_flat(cls, values: dict, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """Apply string or typed overrides to ``base`` (defaults if omitted).

        Raises:
            ConfigError: unknown key or unparsable value.
        """
        base = base or cls()
        current = base.to_flat()
        top, nested = {}, {}
        for key, raw in values.items():
            key = key.strip()
            if key not in current:
                raise ConfigError(f"unknown config key {key!r}")
            value = _coerce(key, raw, current[key])
            if "." in key:
                block, name = key.split(".", 1)
                nested.setdefault(block, {})[name] = value
            else:
                top[key] = value
        try:
            for block, changes in nested.items():
                top[block] = replace(getattr(base, block), **changes)
            return replace(base, **top)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _coerce(key: str, raw, template):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(template, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float):
            return float(text)
        if isinstance(template, tuple):
            return tuple(int(p) for p in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{number}: expected key = value")
        key, value = body.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    values.update(overrides or {})
    return PipelineConfig.from_flat(values)


class FrameStatus(enum.Enum):
    TRACKED = "Tracked"
    FAILED = "Failed"


@dataclass
class FrameResult:
    frame_index: int
    timestamp: float
    pose: SE3Pose
    inlier_count: int
    status: FrameStatus
    timings: dict
    n_keypoints: int = 0
    tier: PredictionTier = PredictionTier.IDENTITY
    mean_iterations: float = 0.0
    tracked_count: int = 0
    reprojection_error: float = float("nan")
    failure: str = ""

    @property
    def total_ms(self) -> float:
        return float(sum(self.timings.values()))


class _Tracks:
    """Live keypoints as parallel arrays."""

    def __init__(self):
        self.ids = np.zeros(0, dtype=np.int64)
        self.xy = np.zeros((0, 2))
        self.level = np.zeros(0, dtype=np.int64)
        self.landmarks = np.zeros((0, 3))
        self.age = np.zeros(0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.ids)

    def keep(self, mask: np.ndarray) -> None:
        self.ids = self.ids[mask]
        self.xy = self.xy[mask]
        self.level = self.level[mask]
        self.landmarks = self.landmarks[mask]
        self.age = self.age[mask]

    def extend(self, ids, xy, level, landmarks) -> None:
        self.ids = np.concatenate([self.ids, ids])
        self.xy = np.concatenate([self.xy, xy])
        self.level = np.concatenate([self.level, level])
        self.landmarks = np.concatenate([self.landmarks, landmarks])
        self.age = np.concatenate([self.age, np.zeros(len(ids), dtype=np.int64)])


class VisualOdometry:
    """Stateful single-sequence tracker; feed frames in order."""

    def __init__(self, intrinsics: CameraIntrinsics, cfg: PipelineConfig = PipelineConfig()):
        self.k = intrinsics
        self.cfg = cfg
        self.history = PoseHistory()
        self.tracks = _Tracks()
        self.frame_index = -1
        self._next_id = 0
        self._ref_pyr = None
        self._pose = SE3Pose.identity()
        self._reinit = True

    @property
    def pose(self) -> SE3Pose:
        """Latest world-to-camera pose."""
        return self._pose

    def _preprocess(self, rgb, depth):
        rgb = np.asarray(rgb)
        depth = np.asarray(depth)
        want = (self.k.height, self.k.width)
        if rgb.shape[:2] != want or depth.shape != want:
            raise InvalidInput(f"frame {rgb.shape[:2]} / depth {depth.shape} does not match {want}")
        gray = rgb_to_gray(rgb)
        c = self.cfg.clahe
        if c.enabled:
            gray = clahe(gray, c.clip_limit, (c.tiles, c.tiles))
        return build_pyramid(gray, self.cfg.tracker.n_levels, self.cfg.tracker.scale_ratio)

    def _detect(self, pyr, depth, pose, masked: bool) -> int:
        budget = self.cfg.max_keypoints - len(self.tracks)
        if budget <= 0:
            return 0
        mask = occupancy_mask(self.tracks.xy, self.k.width, self.k.height) if masked else None
        kps = detect(pyr, budget, mask, self.cfg.fast_threshold, self.cfg.fast_min_threshold)
        n = len(kps)
        if n:
            ids = np.arange(self._next_id, self._next_id + n, dtype=np.int64)
            self._next_id += n
            self.tracks.extend(ids, kps.xy, kps.level, back_project_points(kps.xy, depth, pose, self.k))
        return n

    def _initialise(self, pyr, depth, pose, timings) -> int:
        t0 = time.perf_counter()
        self.tracks = _Tracks()
        n = self._detect(pyr, depth, pose, masked=False)
        timings["detect"] = (time.perf_counter() - t0) * 1e3
        return n

    def process_frame(self, rgb, depth, timestamp: float) -> FrameResult:
        """Track one RGB-D frame against the previous one.

        Raises:
            InvalidInput: image dimensions differ from the intrinsics.
        """
        timings = dict.fromkeys(STAGES, 0.0)
        t0 = time.perf_counter()
        pyr = self._preprocess(rgb, depth)
        depth = np.asarray(depth)
        timings["preprocess"] = (time.perf_counter() - t0) * 1e3
        self.frame_index += 1
        idx = self.frame_index

        if self._ref_pyr is None:
            n = self._initialise(pyr, depth, self._pose, timings)
            self.history.push(idx, self._pose)
            self._ref_pyr = pyr
            self._reinit = False
            return FrameResult(idx, timestamp, self._pose, n, FrameStatus.TRACKED, timings, n_keypoints=n)

        rng = np.random.default_rng([self.cfg.seed, idx])
        result = FrameResult(idx, timestamp, self._pose, 0, FrameStatus.TRACKED, timings)
        try:
            self._track(pyr, depth, rng, result)
        except (InsufficientMatches, InsufficientData, Diverged) as exc:
            # hold the last good pose and restart from the current frame
            result.status = FrameStatus.FAILED
            result.failure = type(exc).__name__
            result.pose = self._pose
            self.history.reset(keep_last=True)
            self._initialise(pyr, depth, self._pose, timings)
        self._ref_pyr = pyr
        result.n_keypoints = len(self.tracks)
        return result

    def _track(self, pyr, depth, rng, result: FrameResult) -> None:
        cfg, k, tr, timings = self.cfg, self.k, self.tracks, result.timings
        if len(tr) < 8:
            raise InsufficientMatches(f"{len(tr)} live keypoints")

        t0 = time.perf_counter()
        predicted = predict_pose(self.history)
        _, result.tier = predict_relative(self.history)
        guesses = predict_correspondences(tr.xy, tr.landmarks, predicted, k)
        timings["predict"] = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        batch = track_all(self._ref_pyr, pyr, tr.xy, guesses, cfg.tracker)
        timings["track"] = (time.perf_counter() - t0) * 1e3
        ok = batch.ok
        result.tracked_count = int(ok.sum())
        result.mean_iterations = float(batch.iterations[ok].mean()) if ok.any() else 0.0
        cur_xy = tr.xy + batch.movement

        t0 = time.perf_counter()
        matches = MatchSet(tr.xy[ok], cur_xy[ok])
        refined, _ = refine(matches, (k.width, k.height), cfg.refine, rng)
        inl = np.zeros(len(tr), dtype=bool)
        inl[np.flatnonzero(ok)[refined.inlier_mask]] = True
        timings["refine"] = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        has_lm = inl & np.isfinite(tr.landmarks[:, 0])
        sel = np.flatnonzero(has_lm)
        est = solve_pose(PnPProblem(tr.landmarks[sel], cur_xy[sel], k, predicted), cfg.solver)
        timings["solve"] = (time.perf_counter() - t0) * 1e3

        pose = est.pose
        keep = inl.copy()
        keep[sel[~est.inlier_mask]] = False
        inlier_count = int(inl.sum())
        tr.xy = cur_xy
        tr.age += 1
        tr.keep(keep)
        missing = ~np.isfinite(tr.landmarks[:, 0])
        if missing.any():
            tr.landmarks[missing] = back_project_points(tr.xy[missing], depth, pose, k)

        self._pose = pose
        self.history.push(result.frame_index, pose)
        result.pose = pose
        result.inlier_count = inlier_count
        result.reprojection_error = est.mean_error

        if inlier_count < cfg.redetect_threshold:
            t0 = time.perf_counter()
            self._detect(pyr, depth, pose, masked=True)
            timings["detect"] = (time.perf_counter() - t0) * 1e3


@dataclass
class SequenceRun:
    trajectory: Trajectory
    frames: list

    def timing_summary(self) -> dict:
        """``{stage: (mean_ms, median_ms)}`` including ``total``."""
        out = {}
        if not self.frames:
            return {s: (0.0, 0.0) for s in (*STAGES, "total")}
        for s in STAGES:
            v = np.array([f.timings[s] for f in self.frames])
            out[s] = (float(v.mean()), float(np.median(v)))
        v = np.array([f.total_ms for f in self.frames])
        out["total"] = (float(v.mean()), float(np.median(v)))
        return out

    def report_lines(self) -> list:
        lines = ["# frame_index timestamp status inlier_count t_total_ms"]
        for f in self.frames:
            lines.append(f"{f.frame_index} {f.timestamp:.6f} {f.status.value} {f.inlier_count} {f.total_ms:.3f}")
        return lines

    def write_report(self, path) -> None:
        Path(path).write_text("\n".join(self.report_lines()) + "\n", encoding="utf-8")


def run_frames(frames, intrinsics: CameraIntrinsics, cfg: PipelineConfig = PipelineConfig(), on_frame=None) -> SequenceRun:
    """Run over an iterable of ``(rgb, depth, timestamp)``."""
    vo = VisualOdometry(intrinsics, cfg)
    traj = Trajectory()
    results = []
    for rgb, depth, ts in frames:
        res = vo.process_frame(rgb, depth, ts)
        traj.append(ts, res.pose.inverse())
        results.append(res)
        if on_frame is not None:
            on_frame(res)
    return SequenceRun(traj, results)


def iter_sequence(seq: SequenceHandle, max_frames: int | None = None):
    pairs = associate(seq)
    if max_frames is not None:
        pairs = pairs[:max_frames]
    for (ts, rgb_name), (_, depth_name) in pairs:
        yield read_image(seq.root / rgb_name), read_depth(seq.root / depth_name), ts


def run_sequence(seq: SequenceHandle, cfg: PipelineConfig = PipelineConfig(), max_frames: int | None = None,
                 on_frame=None) -> SequenceRun:
    """Process every associated frame; the trajectory holds camera-to-world poses."""
    return run_frames(iter_sequence(seq, max_frames), seq.intrinsics, cfg, on_frame)
