"""TUM-format RGB-D sequence loading and trajectory files.

Trajectory files hold camera-to-world poses, one per line:
``timestamp tx ty tz qx qy qz qw``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, load_intrinsics
from .errors import MalformedLine, MissingFile, NonUnitQuaternion
from .se3 import SE3Pose, nearest_rotation

MAX_DT = 0.02
QUAT_TOLERANCE = 1e-3
# absorbs decimal round-off so a gap printed as exactly max_dt still pairs
_DT_SLACK = 1e-9

# keyed by a substring of the sequence directory name
DEFAULT_INTRINSICS = {
    "freiburg1": CameraIntrinsics(517.3, 516.5, 318.6, 255.3),
    "freiburg2": CameraIntrinsics(520.9, 521.0, 325.1, 249.7),
    "freiburg3": CameraIntrinsics(535.4, 539.2, 320.1, 247.6),
    "living_room": CameraIntrinsics(481.2, 480.0, 319.5, 239.5),
    "office": CameraIntrinsics(481.2, 480.0, 319.5, 239.5),
    "icl": CameraIntrinsics(481.2, 480.0, 319.5, 239.5),
}
FALLBACK_INTRINSICS = CameraIntrinsics(525.0, 525.0, 319.5, 239.5)


@dataclass
class Trajectory:
    timestamps: list = field(default_factory=list)
    poses: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamp and pose counts differ")
        if any(b < a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    def append(self, timestamp: float, pose: SE3Pose) -> None:
        if self.timestamps and timestamp < self.timestamps[-1]:
            raise ValueError("timestamps must be non-decreasing")
        self.timestamps.append(float(timestamp))
        self.poses.append(pose)

    def translations(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.array([p.translation for p in self.poses])


@dataclass(frozen=True)
class SequenceHandle:
    root: Path
    rgb: list
    depth: list
    groundtruth: Trajectory | None
    intrinsics: CameraIntrinsics


def _data_lines(path: Path):
    """Yield ``(line_number, raw_line, fields)`` for non-comment lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            yield number, line.rstrip("\n"), text.split()


def _read_file_list(path: Path):
    if not path.is_file():
        raise MissingFile(path.name)
    entries = []
    for number, line, parts in _data_lines(path):
        if len(parts) < 2:
            raise MalformedLine(path, number, line)
        try:
            ts = float(parts[0])
        except ValueError as exc:
            raise MalformedLine(path, number, line) from exc
        if not math.isfinite(ts) or (entries and ts <= entries[-1][0]):
            raise MalformedLine(path, number, line)
        entries.append((ts, parts[1]))
    return entries


def default_intrinsics(name: str) -> CameraIntrinsics:
    lowered = name.lower()
    for key, k in DEFAULT_INTRINSICS.items():
        if key in lowered:
            return k
    return FALLBACK_INTRINSICS


def load_sequence(directory) -> SequenceHandle:
    """Parse ``rgb.txt`` and ``depth.txt`` plus optional ground truth and calibration.

    Raises:
        MissingFile: the directory or a required list file is absent.
        MalformedLine: unparsable or non-increasing entry.
    """
    root = Path(directory)
    if not root.is_dir():
        raise MissingFile(str(root))
    rgb = _read_file_list(root / "rgb.txt")
    depth = _read_file_list(root / "depth.txt")
    gt_path = root / "groundtruth.txt"
    gt = read_trajectory(gt_path) if gt_path.is_file() else None
    calib = root / "calibration.txt"
    k = load_intrinsics(calib) if calib.is_file() else default_intrinsics(root.resolve().name)
    return SequenceHandle(root, rgb, depth, gt, k)


def associate_timestamps(first, second, max_dt: float = MAX_DT):
    """Greedy one-to-one nearest-timestamp matching.

    Candidate pairs are taken in order of increasing ``|dt|``; exact ties go
    to the earlier ``second`` entry, then the earlier ``first`` entry.

    Returns:
        List of ``(i, j)`` index pairs sorted by ``i``.
    """
    a = np.asarray(first, dtype=float)
    b = np.asarray(second, dtype=float)
    if len(a) == 0 or len(b) == 0:
        return []
    limit = max_dt + _DT_SLACK
    lo = np.searchsorted(b, a - limit, side="left")
    hi = np.searchsorted(b, a + limit, side="right")
    counts = hi - lo
    ii = np.repeat(np.arange(len(a)), counts)
    jj = np.concatenate([np.arange(l, h) for l, h in zip(lo, hi)]) if counts.sum() else np.zeros(0, int)
    if len(ii) == 0:
        return []
    dt = np.abs(a[ii] - b[jj])
    keep = dt <= limit
    ii, jj, dt = ii[keep], jj[keep], dt[keep]
    order = np.lexsort((ii, jj, dt))
    used_a = np.zeros(len(a), dtype=bool)
    used_b = np.zeros(len(b), dtype=bool)
    pairs = []
    for o in order:
        i, j = ii[o], jj[o]
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        pairs.append((int(i), int(j)))
    pairs.sort()
    return pairs


def associate(handle: SequenceHandle, max_dt: float = MAX_DT):
    """Pair rgb and depth entries; returns ``[(rgb_entry, depth_entry), ...]``."""
    pairs = associate_timestamps([t for t, _ in handle.rgb], [t for t, _ in handle.depth], max_dt)
    return [(handle.rgb[i], handle.depth[j]) for i, j in pairs]


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    diag = (tr, r[0, 0], r[1, 1], r[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = (
            (r[2, 1] - r[1, 2]) / s,
            (r[0, 2] - r[2, 0]) / s,
            (r[1, 0] - r[0, 1]) / s,
            0.25 * s,
        )
    elif k == 1:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = (0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s, (r[2, 1] - r[1, 2]) / s)
    elif k == 2:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = ((r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s, (r[0, 2] - r[2, 0]) / s)
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = ((r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s, (r[1, 0] - r[0, 1]) / s)
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[3] < 0 else q


def quaternion_to_rotation(q) -> np.ndarray:
    x, y, z, w = (float(v) for v in q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def format_pose_line(timestamp: float, pose: SE3Pose) -> str:
    q = rotation_to_quaternion(pose.rotation)
    values = [timestamp, *pose.translation, *q]
    # avoid printing -0.000000
    return " ".join(f"{v:.6f}" if abs(v) >= 5e-7 else "0.000000" for v in values)


def write_trajectory(traj: Trajectory, path) -> None:
    lines = [format_pose_line(t, p) for t, p in traj]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_trajectory(path) -> Trajectory:
    """Parse a TUM trajectory file.

    Raises:
        MissingFile, MalformedLine, NonUnitQuaternion.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    traj = Trajectory()
    for number, line, parts in _data_lines(path):
        if len(parts) != 8:
            raise MalformedLine(path, number, line)
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise MalformedLine(path, number, line) from exc
        if not all(math.isfinite(v) for v in values):
            raise MalformedLine(path, number, line)
        q = np.array(values[4:])
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) >= QUAT_TOLERANCE:
            raise NonUnitQuaternion(path, number, line)
        rot = nearest_rotation(quaternion_to_rotation(q / norm))
        if traj.timestamps and values[0] < traj.timestamps[-1]:
            raise MalformedLine(path, number, line)
        traj.append(values[0], SE3Pose(rot, np.array(values[1:4])))
    return traj
