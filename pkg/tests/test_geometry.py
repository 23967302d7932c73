import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from criticvio.errors import ShapeMismatch, TooShort
from criticvio.geometry import (
    SE3,
    Pose6,
    Trajectory,
    compose,
    euler_to_matrix,
    integrate_relative,
    inverse,
    kitti_rel_errors,
    matrix_to_euler,
    path_distances,
    rmse_errors,
    rotation_angle,
    rotation_vector,
    wrap_angle,
)

RNG = np.random.default_rng(7)

angles = st.floats(-10.0, 10.0, allow_nan=False)


def random_rotation(rng):
    return Rotation.random(random_state=int(rng.integers(0, 2**31))).as_matrix()


def random_se3(rng):
    return SE3(random_rotation(rng), rng.normal(size=3))


@given(angles)
def test_wrap_angle_range(x):
    w = wrap_angle(x)
    assert -np.pi < w <= np.pi
    assert np.isclose(np.sin(w), np.sin(x), atol=1e-12)
    assert np.isclose(np.cos(w), np.cos(x), atol=1e-12)


def test_wrap_angle_boundary():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)


def test_euler_to_matrix_identity():
    assert np.allclose(euler_to_matrix([0, 0, 0]), np.eye(3))


def test_euler_to_matrix_pure_yaw():
    expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    assert np.allclose(euler_to_matrix([0, 0, np.pi / 2]), expected, atol=1e-15)


def test_euler_to_matrix_orthonormal():
    for _ in range(100):
        r = RNG.uniform(-np.pi, np.pi, size=3)
        m = euler_to_matrix(r)
        assert np.abs(m.T @ m - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(m) - 1.0) < 1e-12


def test_euler_matches_scipy_intrinsic_zyx():
    # Independent oracle: R_z(yaw) R_y(pitch) R_x(roll) is intrinsic Z-Y-X.
    for _ in range(50):
        roll, pitch, yaw = RNG.uniform(-np.pi, np.pi, size=3)
        ours = euler_to_matrix([roll, pitch, yaw])
        ref = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
        assert np.allclose(ours, ref, atol=1e-12)


def test_euler_roundtrip_gimbal_safe():
    lim = np.pi / 2 - 0.1
    for _ in range(1000):
        r = np.array(
            [
                RNG.uniform(-np.pi, np.pi),
                RNG.uniform(-lim, lim),
                RNG.uniform(-np.pi, np.pi),
            ]
        )
        r_wrapped = wrap_angle(r)
        back = matrix_to_euler(euler_to_matrix(r))
        assert np.allclose(back, r_wrapped, atol=1e-9)


def test_matrix_to_euler_identity():
    assert np.allclose(matrix_to_euler(np.eye(3)), [0, 0, 0])


def test_matrix_to_euler_exact_case():
    back = matrix_to_euler(euler_to_matrix([0.1, 0.2, 0.3]))
    assert np.allclose(back, [0.1, 0.2, 0.3], atol=1e-10)


def test_gimbal_lock_resolution():
    m = euler_to_matrix([0.3, np.pi / 2, 0.7])
    assert m[2, 0] == pytest.approx(-1.0)
    with pytest.warns(UserWarning):
        r = matrix_to_euler(m)
    assert r[0] == 0.0
    assert r[1] == pytest.approx(np.pi / 2)
    # yaw absorbs the roll/yaw ambiguity: only yaw - roll is observable.
    assert r[2] == pytest.approx(0.7 - 0.3, abs=1e-10)
    assert np.allclose(euler_to_matrix(r), m, atol=1e-10)


def test_rotation_angle_and_vector():
    for _ in range(50):
        axis = RNG.normal(size=3)
        axis /= np.linalg.norm(axis)
        ang = RNG.uniform(1e-4, np.pi - 1e-3)
        m = Rotation.from_rotvec(ang * axis).as_matrix()
        assert rotation_angle(m) == pytest.approx(ang, abs=1e-9)
        assert np.allclose(rotation_vector(m), ang * axis, atol=1e-8)


def test_rotation_vector_small_angle():
    vec = np.array([1e-10, -2e-10, 5e-11])
    m = Rotation.from_rotvec(vec).as_matrix()
    assert np.allclose(rotation_vector(m), vec, atol=1e-15)


def test_compose_identity_and_inverse():
    x = random_se3(RNG)
    assert np.allclose(compose(SE3.identity(), x).as_matrix(), x.as_matrix())
    assert np.allclose(compose(x, inverse(x)).as_matrix(), np.eye(4), atol=1e-10)


def test_compose_matches_homogeneous_product():
    for _ in range(50):
        a, b = random_se3(RNG), random_se3(RNG)
        assert np.allclose(
            compose(a, b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12
        )


def test_pose6_se3_roundtrip():
    for _ in range(100):
        p = Pose6(RNG.normal(size=3), wrap_angle(RNG.uniform(-np.pi, np.pi, size=3)))
        if abs(p.r[1]) > np.pi / 2 - 0.1:
            continue
        q = SE3.from_pose6(p).to_pose6()
        assert np.allclose(q.as_vector(), p.as_vector(), atol=1e-9)


def test_integrate_relative_zeros():
    start = random_se3(RNG)
    traj = integrate_relative(start, [Pose6.zero()] * 5)
    assert len(traj) == 6
    for pose in traj.poses:
        assert np.allclose(pose.as_matrix(), start.as_matrix(), atol=1e-12)


def test_integrate_relative_single_step():
    traj = integrate_relative(SE3.identity(), [Pose6([1, 0, 0], [0, 0, 0])])
    assert np.allclose(traj[1].t, [1, 0, 0])


def test_integrate_relative_matches_fold():
    rels = [
        Pose6(RNG.normal(size=3), RNG.uniform(-0.5, 0.5, size=3)) for _ in range(20)
    ]
    start = random_se3(RNG)
    traj = integrate_relative(start, rels)
    acc = start
    for k, rel in enumerate(rels):
        acc = compose(acc, SE3.from_pose6(rel))
        assert np.allclose(traj[k + 1].as_matrix(), acc.as_matrix(), atol=1e-12)


def straight_line(n, spacing=1.0, scale=1.0):
    poses = [SE3(np.eye(3), np.array([scale * spacing * k, 0.0, 0.0])) for k in range(n)]
    return Trajectory(poses)


def test_kitti_errors_zero_for_identical():
    traj = straight_line(201)
    t_rel, r_rel = kitti_rel_errors(traj, traj)
    assert t_rel == 0.0
    assert r_rel == 0.0


def test_kitti_scaled_straight_line():
    gt = straight_line(801)
    pred = straight_line(801, scale=1.01)
    t_rel, r_rel = kitti_rel_errors(gt, pred)
    assert t_rel == pytest.approx(1.0, abs=1e-6)
    assert r_rel == pytest.approx(0.0, abs=1e-9)


def test_kitti_global_transform_invariance():
    rng = np.random.default_rng(3)
    rels = [
        Pose6(
            np.array([2.0 + 0.1 * rng.normal(), 0.05 * rng.normal(), 0.02 * rng.normal()]),
            np.array([0.002 * rng.normal(), 0.002 * rng.normal(), 0.02 * rng.normal()]),
        )
        for _ in range(120)
    ]
    gt = integrate_relative(SE3.identity(), rels)
    noisy = [
        Pose6(r.t + 0.01 * rng.normal(size=3), wrap_angle(r.r + 0.001 * rng.normal(size=3)))
        for r in rels
    ]
    pred = integrate_relative(SE3.identity(), noisy)
    base = kitti_rel_errors(gt, pred)
    g = random_se3(rng)
    gt2 = Trajectory([compose(g, p) for p in gt.poses])
    pred2 = Trajectory([compose(g, p) for p in pred.poses])
    moved = kitti_rel_errors(gt2, pred2)
    assert moved[0] == pytest.approx(base[0], abs=1e-9)
    assert moved[1] == pytest.approx(base[1], abs=1e-9)


def test_kitti_too_short():
    with pytest.raises(TooShort):
        kitti_rel_errors(straight_line(50), straight_line(50))


def test_kitti_length_mismatch():
    with pytest.raises(ShapeMismatch):
        kitti_rel_errors(straight_line(10), straight_line(11))


def test_path_distances():
    d = path_distances(straight_line(5, spacing=2.0))
    assert np.allclose(d, [0, 2, 4, 6, 8])


def test_rmse_zero():
    poses = [Pose6(RNG.normal(size=3), RNG.uniform(-1, 1, size=3)) for _ in range(10)]
    assert rmse_errors(poses, poses) == (0.0, 0.0)


def test_rmse_constant_offset():
    gt = [Pose6(RNG.normal(size=3), np.zeros(3)) for _ in range(10)]
    pred = [Pose6(p.t + np.array([0.1, 0.0, 0.0]), p.r) for p in gt]
    t_rmse, r_rmse = rmse_errors(gt, pred)
    assert t_rmse == pytest.approx(0.1, abs=1e-12)
    assert r_rmse == pytest.approx(0.0, abs=1e-9)


def test_rmse_matches_loop_oracle():
    gt = [Pose6(RNG.normal(size=3), RNG.uniform(-1, 1, size=3)) for _ in range(25)]
    pred = [Pose6(RNG.normal(size=3), RNG.uniform(-1, 1, size=3)) for _ in range(25)]
    t_rmse, r_rmse = rmse_errors(gt, pred)
    t_acc, r_acc = [], []
    for a, b in zip(gt, pred):
        t_acc.append(np.sum((a.t - b.t) ** 2))
        err = euler_to_matrix(a.r).T @ euler_to_matrix(b.r)
        ang = np.arccos(np.clip((np.trace(err) - 1) / 2, -1, 1))
        r_acc.append(ang**2)
    assert t_rmse == pytest.approx(np.sqrt(np.mean(t_acc)), rel=1e-12)
    assert r_rmse == pytest.approx(np.degrees(np.sqrt(np.mean(r_acc))), rel=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_se3_validity_closed_under_compose(seed):
    rng = np.random.default_rng(seed)
    a, b = random_se3(rng), random_se3(rng)
    assert compose(a, b).is_valid(tol=1e-9)
