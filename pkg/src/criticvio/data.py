"""Dataset ingestion, synthetic sequence generation, and sample windowing.

On-disk layout per sequence (KITTI-compatible poses plus preprocessed
sensor streams)::

    <root>/<seq>/poses.txt   12 floats per line, row-major 3x4 camera-to-world
    <root>/<seq>/imu.csv     header frame,k,ax,ay,az,wx,wy,wz; K rows/interval
    <root>/<seq>/flow.bin    little-endian float32, frames x [2, H, W]
    <root>/<seq>/flow.json   sidecar {"h": H, "w": W, "frames": N}
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadRotation, MissingInterval, ParseError, ShapeMismatch
from .geometry import (
    SE3,
    Pose6,
    Trajectory,
    compose,
    euler_to_matrix,
    inverse,
    orthonormalize,
    rotation_vector,
)

IMU_COLUMNS = ("ax", "ay", "az", "wx", "wy", "wz")
IMU_CSV_HEADER = ("frame", "k") + IMU_COLUMNS

# Rows map body axes (x forward, y left, z up) onto camera axes
# (x right, y down, z forward).
BODY_TO_CAMERA = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


@dataclass
class ImuWindow:
    """IMU samples for one frame interval: [K, 6] accel (m/s^2) then gyro (rad/s)."""

    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 6:
            raise ShapeMismatch(f"ImuWindow expects [K, 6], got {self.samples.shape}")


@dataclass
class FlowField:
    """Pixel displacement between consecutive frames: [2, H, W]."""

    flow: np.ndarray

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float32)
        if self.flow.ndim != 3 or self.flow.shape[0] != 2:
            raise ShapeMismatch(f"FlowField expects [2, H, W], got {self.flow.shape}")


@dataclass
class SampleWindow:
    """One training/inference window of S-1 transitions."""

    flows: list[FlowField]
    imu: list[ImuWindow]
    gt_rel: list[Pose6]
    sequence_id: str
    frame_index: int


@dataclass
class DatasetSplit:
    train: list[str]
    eval: list[str]

    def __post_init__(self):
        overlap = set(self.train) & set(self.eval)
        if overlap:
            raise ValueError(f"train/eval sequences overlap: {sorted(overlap)}")


def kitti_default_split() -> DatasetSplit:
    # Sequence 04 is deliberately absent from training: straight-line-only
    # motion with an unrepresentative pose distribution.
    return DatasetSplit(
        train=["00", "01", "02", "06", "08", "09"], eval=["05", "07", "10"]
    )


@dataclass
class SequenceData:
    """One full sequence: trajectory plus per-transition flow and IMU arrays."""

    sequence_id: str
    trajectory: Trajectory
    flows: np.ndarray  # [N-1, 2, H, W] float32
    imu: np.ndarray  # [N-1, K, 6] float64

    def __post_init__(self):
        n = len(self.trajectory)
        if self.flows.shape[0] != n - 1 or self.imu.shape[0] != n - 1:
            raise ShapeMismatch(
                f"sequence {self.sequence_id}: {n} poses but "
                f"{self.flows.shape[0]} flows / {self.imu.shape[0]} imu intervals"
            )

    @property
    def num_frames(self) -> int:
        return len(self.trajectory)


@dataclass
class NormStats:
    """Per-channel normalization, computed on the training split only."""

    flow_mean: np.ndarray
    flow_std: np.ndarray
    imu_mean: np.ndarray
    imu_std: np.ndarray


# ---------------------------------------------------------------------------
# KITTI pose files


def load_kitti_poses(path) -> Trajectory:
    """Read a KITTI odometry pose file (12 floats per line, row-major 3x4)."""
    path = Path(path)
    poses: list[SE3] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 12:
                raise ParseError(
                    f"{path}:{lineno}: expected 12 values, got {len(parts)}"
                )
            try:
                vals = np.array([float(p) for p in parts], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            m = vals.reshape(3, 4)
            R, t = m[:, :3], m[:, 3]
            det = np.linalg.det(R)
            if abs(det - 1.0) > 1e-2:
                raise BadRotation(f"{path}:{lineno}: det(R) = {det:.4f}")
            drift = np.abs(R.T @ R - np.eye(3)).max()
            if drift > 1e-6:
                warnings.warn(
                    f"{path}:{lineno}: rotation drift {drift:.2e}, re-orthonormalizing"
                )
                R = orthonormalize(R)
            poses.append(SE3(R, t))
    if not poses:
        raise ParseError(f"{path}: empty pose file")
    return Trajectory(poses)


def save_kitti_poses(path, traj: Trajectory) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for pose in traj.poses:
            m = np.hstack([pose.R, pose.t.reshape(3, 1)])
            fh.write(" ".join(f"{v:.17g}" for v in m.reshape(-1)) + "\n")


def relative_from_trajectory(traj: Trajectory) -> list[Pose6]:
    """Frame-to-frame relative poses; inverse of integrate_relative."""
    if len(traj) < 2:
        raise ShapeMismatch("need at least two poses")
    return [
        compose(inverse(traj[k]), traj[k + 1]).to_pose6() for k in range(len(traj) - 1)
    ]


# ---------------------------------------------------------------------------
# IMU CSV


def load_imu_csv(path, k: int = 11) -> list[ImuWindow]:
    """Read preprocessed IMU windows; exactly k rows per frame interval."""
    path = Path(path)
    rows_by_frame: dict[int, list[tuple[int, np.ndarray]]] = {}
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != IMU_CSV_HEADER:
            raise ParseError(f"{path}: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 8:
                raise ParseError(f"{path}:{lineno}: expected 8 fields")
            try:
                frame, sub = int(row[0]), int(row[1])
                vals = np.array([float(v) for v in row[2:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            rows_by_frame.setdefault(frame, []).append((sub, vals))
    if not rows_by_frame:
        raise ParseError(f"{path}: no data rows")
    n_frames = max(rows_by_frame) + 1
    windows = []
    for frame in range(n_frames):
        if frame not in rows_by_frame:
            raise MissingInterval(f"{path}: no rows for frame interval {frame}")
        rows = sorted(rows_by_frame[frame], key=lambda r: r[0])
        if [r[0] for r in rows] != list(range(k)):
            raise MissingInterval(
                f"{path}: frame {frame} has sub-indices {[r[0] for r in rows]}, "
                f"expected 0..{k - 1}"
            )
        windows.append(ImuWindow(np.stack([r[1] for r in rows])))
    return windows


def save_imu_csv(path, imu: np.ndarray) -> None:
    """Write an [N-1, K, 6] IMU array in the CSV schema above."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(IMU_CSV_HEADER)
        for frame in range(imu.shape[0]):
            for sub in range(imu.shape[1]):
                writer.writerow(
                    [frame, sub] + [f"{v:.17g}" for v in imu[frame, sub]]
                )


# ---------------------------------------------------------------------------
# Flow files


def save_flow(directory, flows: np.ndarray) -> None:
    directory = Path(directory)
    arr = np.ascontiguousarray(flows, dtype="<f4")
    (directory / "flow.bin").write_bytes(arr.tobytes())
    meta = {"h": int(arr.shape[2]), "w": int(arr.shape[3]), "frames": int(arr.shape[0])}
    (directory / "flow.json").write_text(json.dumps(meta))


def load_flow(directory) -> np.ndarray:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "flow.json").read_text())
        h, w, frames = int(meta["h"]), int(meta["w"]), int(meta["frames"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ParseError(f"{directory}/flow.json: {exc}") from exc
    raw = (directory / "flow.bin").read_bytes()
    expected = frames * 2 * h * w * 4
    if len(raw) != expected:
        raise ParseError(
            f"{directory}/flow.bin: {len(raw)} bytes, expected {expected}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(frames, 2, h, w).copy()


# ---------------------------------------------------------------------------
# Synthetic sequences


@dataclass
class SynthConfig:
    height: int = 32
    width: int = 64
    imu_per_interval: int = 11  # ~100 Hz IMU against 10 Hz frames, endpoints inclusive
    frame_dt: float = 0.1
    plane_depth: float = 10.0  # fronto-parallel scene depth in meters
    pixel_scale: float | None = None  # defaults to width / 4
    base_speed: float = 15.0  # m/s forward
    speed_walk_std: float = 0.8
    yaw_rate_walk_std: float = 0.015  # rad per frame
    smoothing: float = 0.9
    roll_pitch_std: float = 0.01
    accel_noise_std: float = 0.02
    gyro_noise_std: float = 0.002
    flow_noise_std: float = 0.05

    @property
    def scale_px(self) -> float:
        return self.width / 4.0 if self.pixel_scale is None else self.pixel_scale


def motion_field(t_cam: np.ndarray, w_cam: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    """Instantaneous motion field of a fronto-parallel plane at fixed depth.

    ``t_cam`` is the camera translation (m/frame) and ``w_cam`` the camera
    rotation (rad/frame), both in camera axes (x right, y down, z forward).
    Evaluated on a normalized grid u, v in [-1, 1] and scaled to pixels.
    """
    tx, ty, tz = t_cam
    wx, wy, wz = w_cam
    z = cfg.plane_depth
    u = np.linspace(-1.0, 1.0, cfg.width)[None, :]
    v = np.linspace(-1.0, 1.0, cfg.height)[:, None]
    flow_u = (-tx + u * tz) / z + u * v * wx - (1.0 + u**2) * wy + v * wz
    flow_v = (-ty + v * tz) / z + (1.0 + v**2) * wx - u * v * wy - u * wz
    return np.stack([flow_u, flow_v]).astype(np.float64) * cfg.scale_px


def _smoothed_walk(rng, n, increment_std, smoothing):
    """Random walk whose Gaussian increments are EMA-smoothed."""
    eps = rng.normal(0.0, increment_std, size=n)
    inc = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = smoothing * acc + (1.0 - smoothing) * eps[i]
        inc[i] = acc
    return np.cumsum(inc)


def _smoothed_noise(rng, n, std, smoothing):
    eps = rng.normal(0.0, std, size=n)
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = smoothing * acc + (1.0 - smoothing) * eps[i]
        out[i] = acc
    return out


def _synth_trajectory(rng, n_frames: int, cfg: SynthConfig) -> Trajectory:
    speed = cfg.base_speed + _smoothed_walk(
        rng, n_frames, cfg.speed_walk_std, cfg.smoothing
    )
    speed = np.clip(speed, 0.2 * cfg.base_speed, 2.0 * cfg.base_speed)
    yaw_rate = _smoothed_walk(rng, n_frames, cfg.yaw_rate_walk_std, cfg.smoothing)
    yaw = np.concatenate([[0.0], np.cumsum(yaw_rate[:-1])])
    roll = _smoothed_noise(rng, n_frames, cfg.roll_pitch_std, cfg.smoothing)
    pitch = _smoothed_noise(rng, n_frames, cfg.roll_pitch_std, cfg.smoothing)

    poses = []
    position = np.zeros(3)
    for k in range(n_frames):
        rot = euler_to_matrix([roll[k], pitch[k], yaw[k]])
        poses.append(SE3(rot, position.copy()))
        forward = rot[:, 0]  # body x axis in world coordinates
        position = position + speed[k] * cfg.frame_dt * forward
    return Trajectory(poses)


def _synth_imu(rng, traj: Trajectory, cfg: SynthConfig) -> np.ndarray:
    """Per-interval IMU windows from finite differences of the trajectory.

    Accelerations are second-order differences of position rotated into the
    body frame; angular velocities come from the relative rotation between
    consecutive frames.  Per-frame values are supersampled K-fold by linear
    interpolation across each interval.
    """
    n = len(traj)
    dt = cfg.frame_dt
    pos = traj.positions()
    accel_world = np.zeros((n, 3))
    if n >= 3:
        accel_world[1:-1] = (pos[2:] - 2.0 * pos[1:-1] + pos[:-2]) / dt**2
        accel_world[0] = accel_world[1]
        accel_world[-1] = accel_world[-2]
    accel_body = np.stack(
        [traj[k].R.T @ accel_world[k] for k in range(n)]
    )
    gyro = np.zeros((n, 3))
    for k in range(n - 1):
        gyro[k] = rotation_vector(traj[k].R.T @ traj[k + 1].R) / dt
    if n >= 2:
        gyro[-1] = gyro[-2]

    k_sub = cfg.imu_per_interval
    tau = np.linspace(0.0, 1.0, k_sub)[None, :, None]
    per_frame = np.concatenate([accel_body, gyro], axis=1)  # [N, 6]
    start = per_frame[:-1, None, :]
    end = per_frame[1:, None, :]
    windows = (1.0 - tau) * start + tau * end  # [N-1, K, 6]
    windows = windows + np.concatenate(
        [
            rng.normal(0.0, cfg.accel_noise_std, size=(n - 1, k_sub, 3)),
            rng.normal(0.0, cfg.gyro_noise_std, size=(n - 1, k_sub, 3)),
        ],
        axis=2,
    )
    return windows


def _synth_flow(rng, traj: Trajectory, cfg: SynthConfig) -> np.ndarray:
    rels = relative_from_trajectory(traj)
    fields = np.empty((len(rels), 2, cfg.height, cfg.width), dtype=np.float32)
    for k, rel in enumerate(rels):
        t_cam = BODY_TO_CAMERA @ rel.t
        w_body = rotation_vector(euler_to_matrix(rel.r))
        w_cam = BODY_TO_CAMERA @ w_body
        field = motion_field(t_cam, w_cam, cfg)
        field = field + rng.normal(0.0, cfg.flow_noise_std, size=field.shape)
        fields[k] = field.astype(np.float32)
    return fields


def synth_dataset(
    seed: int, n_sequences: int, frames_per_seq: int, cfg: SynthConfig | None = None
) -> list[SequenceData]:
    """Deterministic car-like synthetic sequences with coupled flow/IMU/poses."""
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    cfg = cfg or SynthConfig()
    if frames_per_seq < 2:
        raise ValueError("frames_per_seq must be >= 2")
    rng = np.random.default_rng(seed)
    sequences = []
    for idx in range(n_sequences):
        traj = _synth_trajectory(rng, frames_per_seq, cfg)
        imu = _synth_imu(rng, traj, cfg)
        flows = _synth_flow(rng, traj, cfg)
        sequences.append(
            SequenceData(
                sequence_id=f"{idx:03d}", trajectory=traj, flows=flows, imu=imu
            )
        )
    return sequences


# ---------------------------------------------------------------------------
# Disk round-trip for full sequences


def save_sequence(root, seq: SequenceData) -> Path:
    directory = Path(root) / seq.sequence_id
    directory.mkdir(parents=True, exist_ok=True)
    save_kitti_poses(directory / "poses.txt", seq.trajectory)
    save_imu_csv(directory / "imu.csv", seq.imu)
    save_flow(directory, seq.flows)
    return directory


def load_sequence(root, sequence_id: str) -> SequenceData:
    directory = Path(root) / sequence_id
    traj = load_kitti_poses(directory / "poses.txt")
    flows = load_flow(directory)
    with (directory / "imu.csv").open() as fh:
        reader = csv.reader(fh)
        next(reader)
        first_frame_rows = sum(1 for row in reader if row and row[0] == "0")
    windows = load_imu_csv(directory / "imu.csv", k=first_frame_rows)
    imu = np.stack([w.samples for w in windows])
    return SequenceData(
        sequence_id=sequence_id, trajectory=traj, flows=flows, imu=imu
    )


def list_sequences(root) -> list[str]:
    root = Path(root)
    return sorted(p.name for p in root.iterdir() if (p / "poses.txt").exists())


# ---------------------------------------------------------------------------
# Windowing


def make_windows(seq: SequenceData, s: int = 4, stride: int = 1) -> list[SampleWindow]:
    """Sliding windows of S frames (S-1 transitions); never crosses sequences."""
    if seq.num_frames < s:
        raise ShapeMismatch(
            f"sequence {seq.sequence_id} has {seq.num_frames} frames, need >= {s}"
        )
    rels = relative_from_trajectory(seq.trajectory)
    windows = []
    for start in range(0, seq.num_frames - s + 1, stride):
        span = slice(start, start + s - 1)
        windows.append(
            SampleWindow(
                flows=[FlowField(f) for f in seq.flows[span]],
                imu=[ImuWindow(w) for w in seq.imu[span]],
                gt_rel=rels[span],
                sequence_id=seq.sequence_id,
                frame_index=start,
            )
        )
    return windows


def windows_to_arrays(windows: list[SampleWindow]) -> dict[str, np.ndarray]:
    """Stack windows into dense float32 arrays for batching."""
    flows = np.stack(
        [np.stack([f.flow for f in w.flows]) for w in windows]
    ).astype(np.float32)
    imu = np.stack(
        [np.stack([m.samples for m in w.imu]) for w in windows]
    ).astype(np.float32)
    targets = np.stack(
        [np.stack([p.as_vector() for p in w.gt_rel]) for w in windows]
    ).astype(np.float32)
    return {"flows": flows, "imu": imu, "targets": targets}


def compute_norm_stats(sequences: list[SequenceData]) -> NormStats:
    """Mean/std per flow channel and IMU column over the given sequences."""
    flow_parts = [s.flows.reshape(-1, 2, s.flows.shape[2] * s.flows.shape[3]) for s in sequences]
    flow_all = np.concatenate([p.transpose(1, 0, 2).reshape(2, -1) for p in flow_parts], axis=1)
    imu_all = np.concatenate([s.imu.reshape(-1, 6) for s in sequences], axis=0)
    return NormStats(
        flow_mean=flow_all.mean(axis=1),
        flow_std=np.maximum(flow_all.std(axis=1), 1e-6),
        imu_mean=imu_all.mean(axis=0),
        imu_std=np.maximum(imu_all.std(axis=0), 1e-6),
    )
