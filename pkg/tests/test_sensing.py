import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isacsim.geometry import Bvh, Pose, TriangleMesh, Twist, quat_from_rpy, quat_rotate
from isacsim.sensing import (
    GRAVITY, CameraIntrinsics, LidarPattern, SensorSuite, Trajectory, TrajectoryError,
    load_trajectory, raycast_depth, raycast_lidar, raycast_semantic, sample_gnss, sample_imu,
    sample_nav, save_trajectory, sensor_rng, state_at,
)

S = 1_000_000_000


def wall_bvh(x=5.0, half=1e4, oid=3):
    """Square wall in the plane x = const, large enough to act as infinite."""
    v = [[x, -half, -half], [x, half, -half], [x, half, half], [x, -half, half]]
    return Bvh(TriangleMesh(v, [[0, 1, 2], [0, 2, 3]], [oid, oid]))


def test_single_waypoint_trajectory():
    p = Pose([1, 2, 3], quat_from_rpy(0, 0, 0.4))
    traj = Trajectory((5 * S,), (p,))
    pose, tw = state_at(traj, 5 * S)
    assert pose == p
    np.testing.assert_array_equal(tw.linear, 0)
    with pytest.raises(TrajectoryError):
        state_at(traj, 5 * S + 1)


def test_linear_segment():
    traj = Trajectory((0, S), (Pose([0, 0, 0]), Pose([10, 0, 0])))
    pose, tw = state_at(traj, S // 2)
    np.testing.assert_allclose(pose.translation, [5, 0, 0])
    np.testing.assert_allclose(tw.linear, [10, 0, 0])
    with pytest.raises(TrajectoryError):
        state_at(traj, -1)
    with pytest.raises(TrajectoryError):
        Trajectory((0, 0), (Pose(), Pose()))


def test_integrated_velocity_matches_displacement():
    rng = np.random.default_rng(4)
    stamps = tuple(int(x) for x in np.cumsum(rng.integers(S // 10, 2 * S, 10)))
    poses = tuple(Pose(rng.normal(size=3) * 20, quat_from_rpy(*rng.uniform(-1, 1, 3))) for _ in stamps)
    traj = Trajectory(stamps, poses)
    # midpoint rule per segment: exact for a piecewise-constant velocity
    total = np.zeros(3)
    for t0, t1 in zip(stamps, stamps[1:]):
        _, tw = state_at(traj, (t0 + t1) // 2)
        total += tw.linear * (t1 - t0) / S
    np.testing.assert_allclose(total, poses[-1].translation - poses[0].translation, atol=1e-9)


def test_angular_velocity_integrates_to_rotation():
    q0, q1 = quat_from_rpy(0, 0, 0.2), quat_from_rpy(0, 0, 0.9)
    traj = Trajectory((0, 2 * S), (Pose([0, 0, 0], q0), Pose([0, 0, 0], q1)))
    _, tw = state_at(traj, S)
    np.testing.assert_allclose(tw.angular, [0, 0, 0.35], atol=1e-12)


def test_trajectory_file_round_trip(tmp_path):
    traj = Trajectory((0, 250_000_000, S), (Pose([0, 0, 1]), Pose([1, 0, 1]), Pose([1, 1, 1], quat_from_rpy(0, 0, 1))))
    save_trajectory(traj, tmp_path / "t.txt")
    back = load_trajectory(tmp_path / "t.txt")
    assert back.stamps == traj.stamps
    for a, b in zip(back.poses, traj.poses):
        np.testing.assert_allclose(a.translation, b.translation)
        np.testing.assert_allclose(a.rotation, b.rotation)
    (tmp_path / "bad.txt").write_text("0 1 2 3\n")
    with pytest.raises(TrajectoryError, match=":1:"):
        load_trajectory(tmp_path / "bad.txt")


def test_depth_center_and_corners():
    cam = CameraIntrinsics(41, 31, 30.0, 25.0)
    depth = raycast_depth(wall_bvh(5.0), Pose(), cam)
    assert depth[15, 20] == pytest.approx(5.0, abs=1e-6)
    cx, cy = cam.center
    for v, u in [(0, 0), (0, 40), (30, 0), (30, 40), (7, 33)]:
        tan_h = (u - cx) / cam.fx
        tan_v = (v - cy) / cam.fy
        cos_theta = 1.0 / np.sqrt(1 + tan_h ** 2 + tan_v ** 2)
        assert depth[v, u] == pytest.approx(5.0 / cos_theta, rel=1e-6)


def test_depth_under_rotated_pose():
    # camera rotated 90 degrees yaw looks along +y at a wall y = 7
    v = [[-1e4, 7, -1e4], [1e4, 7, -1e4], [1e4, 7, 1e4], [-1e4, 7, 1e4]]
    bvh = Bvh(TriangleMesh(v, [[0, 1, 2], [0, 2, 3]]))
    cam = CameraIntrinsics(5, 5, 10.0, 10.0)
    depth = raycast_depth(bvh, Pose([0, 2, 0], quat_from_rpy(0, 0, np.pi / 2)), cam)
    assert depth[2, 2] == pytest.approx(5.0, abs=1e-6)


def test_empty_scene_sensors():
    bvh = Bvh(TriangleMesh.empty())
    cam = CameraIntrinsics(8, 6, 10.0, 10.0)
    assert np.all(raycast_depth(bvh, Pose(), cam) == 0)
    assert np.all(raycast_semantic(bvh, Pose(), cam) == -1)
    assert raycast_lidar(bvh, Pose(), LidarPattern()).shape == (0, 3)


def test_depth_semantic_aligned():
    rng = np.random.default_rng(2)
    verts = rng.uniform(-5, 5, (60, 3)) + [12, 0, 0]
    tris = rng.integers(0, 60, (40, 3))
    tris = tris[(tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])]
    mesh = TriangleMesh(verts, tris, np.arange(len(tris)) % 5)
    bvh = Bvh(mesh)
    cam = CameraIntrinsics(32, 24, 15.0, 15.0)
    depth = raycast_depth(bvh, Pose(), cam)
    sem = raycast_semantic(bvh, Pose(), cam)
    assert np.array_equal(depth > 0, sem >= 0)
    assert (sem >= 0).sum() > 10


def test_lidar_points_on_wall_and_range_limit():
    pts = raycast_lidar(wall_bvh(5.0), Pose(), LidarPattern(36, (0.0, 0.2), 20.0))
    assert len(pts) > 0
    np.testing.assert_allclose(pts[:, 0], 5.0, atol=1e-5)
    assert np.all(np.linalg.norm(pts, axis=1) <= 20.0 + 1e-5)
    assert len(raycast_lidar(wall_bvh(5.0), Pose(), LidarPattern(36, (0.0,), 4.0))) == 0


def test_gnss_zero_sigma_exact():
    p = Pose([1.25, -3.5, 40.0])
    fix = sample_gnss(p, 0.0, sensor_rng(1, "gnss"))
    assert np.array_equal(fix.position, p.translation)


def test_imu_static_reads_plus_g():
    imu = sample_imu(Pose(), Twist(), np.zeros(3), 0.0, 0.0, sensor_rng(1, "imu"))
    np.testing.assert_allclose(imu.specific_force, [0, 0, GRAVITY])
    np.testing.assert_array_equal(imu.angular_rate, 0)
    # tilted 90 degrees in roll, gravity reaction appears on the body y axis
    imu = sample_imu(Pose([0, 0, 0], quat_from_rpy(np.pi / 2, 0, 0)), Twist(), np.zeros(3), 0, 0,
                     sensor_rng(1, "imu"))
    np.testing.assert_allclose(imu.specific_force, [0, GRAVITY, 0], atol=1e-12)


def test_seeded_noise_regenerates():
    suite = SensorSuite(gnss_sigma=(0.5, 0.5, 1.0), accel_sigma=0.1, gyro_sigma=0.01)
    traj = Trajectory((0, 10 * S), (Pose([0, 0, 10]), Pose([50, 0, 10])))

    def run(seed):
        rngs = {k: sensor_rng(seed, k) for k in ("gnss", "imu")}
        out = []
        for k in range(50):
            fix, imu = sample_nav(traj, k * 10_000_000, 10_000_000, suite, rngs)
            out.append(fix.encode() + imu.encode())
        return out

    assert run(42) == run(42)
    assert run(42) != run(43)
    # streams are independent: a third sensor's draws do not shift gnss
    a = sensor_rng(42, "gnss").normal(size=5)
    sensor_rng(42, "imu").normal(size=100)
    assert np.array_equal(a, sensor_rng(42, "gnss").normal(size=5))


def test_finite_difference_accel_at_corner():
    traj = Trajectory((0, S, 2 * S), (Pose([0, 0, 0]), Pose([1, 0, 0]), Pose([1, 1, 0])))
    suite = SensorSuite()
    rngs = {k: sensor_rng(0, k) for k in ("gnss", "imu")}
    _, imu = sample_nav(traj, S, S // 10, suite, rngs)
    # velocity jumps from +x to +y over one 0.1 s tick
    np.testing.assert_allclose(imu.specific_force, [-10, 10, GRAVITY], atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-1.4, 1.4), st.floats(-3, 3))
def test_static_imu_magnitude_is_g(roll, pitch, yaw):
    imu = sample_imu(Pose([0, 0, 0], quat_from_rpy(roll, pitch, yaw)), Twist(), np.zeros(3), 0, 0,
                     sensor_rng(0, "imu"))
    assert np.linalg.norm(imu.specific_force) == pytest.approx(GRAVITY, rel=1e-12)
    # body z axis expressed in world dotted with the reading gives the up component
    z_body = quat_rotate(quat_from_rpy(roll, pitch, yaw), [0, 0, 1])
    assert imu.specific_force[2] == pytest.approx(GRAVITY * z_body[2], abs=1e-9)


def test_camera_projection_inverts_rays():
    cam = CameraIntrinsics(40, 30, 20.0, 22.0, 19.0, 14.0)
    rays = cam.rays()
    for v, u in [(0, 0), (29, 39), (10, 5)]:
        pu, pv = cam.project(rays[v, u] * 3.0)
        assert (pu, pv) == pytest.approx((u, v), abs=1e-9)
    assert cam.project([-1, 0, 0]) is None
