"""SE(3) pose algebra, trajectory integration, and KITTI-style error metrics.

Conventions used throughout the package:

* Euler angles are (roll, pitch, yaw) in radians, composed intrinsically as
  ``R = R_z(yaw) @ R_y(pitch) @ R_x(roll)``.
* Angles are wrapped to the half-open interval (-pi, pi].
* Absolute poses are camera-to-world; relative poses map frame k+1 into
  frame k, i.e. ``T_rel = inv(T_k) @ T_{k+1}``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import GimbalLockWarning, ShapeMismatch, TooShort

KITTI_SEGMENT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)
KITTI_SEGMENT_STEP = 10


def wrap_angle(x):
    """Wrap angles (scalar or array) to (-pi, pi]."""
    wrapped = np.asarray(x, dtype=np.float64) - 2.0 * np.pi * np.round(
        np.asarray(x, dtype=np.float64) / (2.0 * np.pi)
    )
    # round() maps the boundary to -pi; the convention here is +pi.
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)
    if np.isscalar(x):
        return float(wrapped)
    return wrapped


@dataclass
class Pose6:
    """One 6-DoF relative pose: translation (m) and roll/pitch/yaw (rad)."""

    t: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.r = np.asarray(self.r, dtype=np.float64).reshape(3)

    @classmethod
    def zero(cls) -> "Pose6":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, v) -> "Pose6":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.r])

    def is_valid(self) -> bool:
        finite = bool(np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.r)))
        in_range = bool(np.all(self.r > -np.pi) and np.all(self.r <= np.pi))
        return finite and in_range


@dataclass
class SE3:
    """Rigid transform: 3x3 rotation matrix plus translation vector."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls) -> "SE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_pose6(cls, pose: Pose6) -> "SE3":
        return cls(euler_to_matrix(pose.r), pose.t.copy())

    def to_pose6(self) -> Pose6:
        return Pose6(self.t.copy(), matrix_to_euler(self.R))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def is_valid(self, tol: float = 1e-9) -> bool:
        orth = np.abs(self.R.T @ self.R - np.eye(3)).max() <= tol
        det = abs(np.linalg.det(self.R) - 1.0) <= tol
        return bool(orth and det and np.all(np.isfinite(self.t)))


@dataclass
class Trajectory:
    """Ordered camera-to-world poses, optionally timestamped."""

    poses: list[SE3]
    timestamps: list[float] | None = field(default=None)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i) -> SE3:
        return self.poses[i]

    def positions(self) -> np.ndarray:
        return np.stack([p.t for p in self.poses])


def euler_to_matrix(r) -> np.ndarray:
    """Rotation matrix R_z(yaw) @ R_y(pitch) @ R_x(roll) from Euler angles."""
    roll, pitch, yaw = np.asarray(r, dtype=np.float64).reshape(3)
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def matrix_to_euler(R) -> np.ndarray:
    """Euler angles (roll, pitch, yaw) on the principal branch.

    Near gimbal lock (|R[2,0]| > 1 - 1e-8) roll is forced to zero and a
    GimbalLockWarning is emitted; the returned pose still reproduces R.
    """
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if abs(R[2, 0]) > 1.0 - 1e-8:
        warnings.warn("pitch at +/-90 deg; resolving with roll=0", GimbalLockWarning)
        pitch = np.pi / 2.0 if R[2, 0] < 0 else -np.pi / 2.0
        roll = 0.0
        # With roll=0 and |pitch|=pi/2 the top row reduces to functions of yaw.
        if R[2, 0] < 0:  # pitch = +pi/2: R[0,1] = -sin(yaw), R[1,1] = cos(yaw)
            yaw = np.arctan2(-R[0, 1], R[1, 1])
        else:  # pitch = -pi/2: R[0,1] = -sin(yaw), R[1,1] = cos(yaw) as well
            yaw = np.arctan2(-R[0, 1], R[1, 1])
        return np.array([roll, wrap_angle(pitch), wrap_angle(yaw)])
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw)])


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix: arccos((trace - 1) / 2)."""
    R = np.asarray(R, dtype=np.float64)
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def rotation_vector(R) -> np.ndarray:
    """Axis-angle (rotation vector) of a rotation matrix, stable near zero."""
    R = np.asarray(R, dtype=np.float64)
    angle = rotation_angle(R)
    skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-8:
        return 0.5 * skew
    if angle > np.pi - 1e-6:
        # Near pi the skew part vanishes; recover the axis from the symmetric part.
        axis_sq = np.clip((np.diag(R) + 1.0) / 2.0, 0.0, None)
        axis = np.sqrt(axis_sq)
        axis[0] = np.copysign(axis[0], skew[0]) if skew[0] != 0 else axis[0]
        axis[1] = np.copysign(axis[1], skew[1]) if skew[1] != 0 else axis[1]
        axis[2] = np.copysign(axis[2], skew[2]) if skew[2] != 0 else axis[2]
        norm = np.linalg.norm(axis)
        if norm > 0:
            axis = axis / norm
        return angle * axis
    return angle * skew / (2.0 * np.sin(angle))


def orthonormalize(R) -> np.ndarray:
    """Project a near-rotation onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


def compose(a: SE3, b: SE3) -> SE3:
    return SE3(a.R @ b.R, a.R @ b.t + a.t)


def inverse(a: SE3) -> SE3:
    rt = a.R.T
    return SE3(rt, -rt @ a.t)


def integrate_relative(start: SE3, rels: Sequence[Pose6]) -> Trajectory:
    """Chain relative frame-to-frame poses into absolute poses.

    Returns a trajectory of length len(rels) + 1 with pose[0] == start.
    """
    poses = [SE3(start.R.copy(), start.t.copy())]
    for rel in rels:
        poses.append(compose(poses[-1], SE3.from_pose6(rel)))
    return Trajectory(poses)


def _check_pair(gt: Trajectory, pred: Trajectory) -> None:
    if len(gt) != len(pred):
        raise ShapeMismatch(f"trajectory lengths differ: {len(gt)} vs {len(pred)}")
    if len(gt) < 2:
        raise ShapeMismatch("need at least two poses")


def path_distances(traj: Trajectory) -> np.ndarray:
    """Cumulative path length along a trajectory, starting at zero."""
    pos = traj.positions()
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _segment_end(dist: np.ndarray, first: int, length: float) -> int | None:
    target = dist[first] + length
    idx = int(np.searchsorted(dist, target, side="right"))
    if idx >= len(dist):
        return None
    return idx


def kitti_rel_errors(
    gt: Trajectory,
    pred: Trajectory,
    lengths: Iterable[float] = KITTI_SEGMENT_LENGTHS,
    step: int = KITTI_SEGMENT_STEP,
) -> tuple[float, float]:
    """Average relative errors over fixed-length subsequences.

    For every start frame (every ``step`` frames) and every segment length
    with a reachable endpoint, the endpoint is the first frame whose
    cumulative ground-truth path length exceeds start + length.  The error
    pose ``inv(rel_gt) @ rel_pred`` is normalized by the actual ground-truth
    segment length.  Returns (translation error in percent, rotation error
    in deg per 100 m).
    """
    _check_pair(gt, pred)
    dist = path_distances(gt)
    t_errs: list[float] = []
    r_errs: list[float] = []
    for first in range(0, len(gt), step):
        for length in lengths:
            last = _segment_end(dist, first, float(length))
            if last is None:
                continue
            seg_len = dist[last] - dist[first]
            rel_gt = compose(inverse(gt[first]), gt[last])
            rel_pred = compose(inverse(pred[first]), pred[last])
            err = compose(inverse(rel_gt), rel_pred)
            t_errs.append(float(np.linalg.norm(err.t)) / seg_len)
            r_errs.append(rotation_angle(err.R) / seg_len)
    if not t_errs:
        raise TooShort(
            f"no {min(lengths)} m subsequence in a {dist[-1]:.1f} m trajectory"
        )
    t_rel = 100.0 * float(np.mean(t_errs))
    r_rel = float(np.mean(r_errs)) * (180.0 / np.pi) * 100.0
    return t_rel, r_rel


def rmse_errors(
    gt: Sequence[Pose6], pred: Sequence[Pose6]
) -> tuple[float, float]:
    """Per-frame RMSE of translation norm (m) and rotation angle (deg)."""
    if len(gt) != len(pred) or len(gt) == 0:
        raise ShapeMismatch("pose lists must be nonempty and equal length")
    t_sq = 0.0
    r_sq = 0.0
    for a, b in zip(gt, pred):
        t_sq += float(np.sum((a.t - b.t) ** 2))
        err = euler_to_matrix(a.r).T @ euler_to_matrix(b.r)
        r_sq += rotation_angle(err) ** 2
    t_rmse = float(np.sqrt(t_sq / len(gt)))
    r_rmse = float(np.sqrt(r_sq / len(gt))) * 180.0 / np.pi
    return t_rmse, r_rmse
