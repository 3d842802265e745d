import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from fishmap.errors import EmptyStream, OutOfRange
from fishmap.georef import (
    LaserProfile,
    Pose,
    RigidTransform,
    SensorRig,
    Trajectory,
    geolocate_image,
    interpolate_pose,
    nearest_by_time,
    nearest_index,
    profile_to_world,
)
from fishmap.scene_sim import RunSpec, default_street, simulate_run

ID_QUAT = [0, 0, 0, 1]


def test_nearest_example():
    items = [0.0, 0.0333, 0.0667]
    item, dt = nearest_by_time(items, 0.040)
    assert item == 0.0333
    assert dt == pytest.approx(-0.0067, abs=1e-12)


def test_tie_goes_to_earlier():
    assert nearest_index([0.0, 0.0333], 0.0333 / 2) == 0
    assert nearest_index([0.0, 1.0, 2.0], 1.5) == 1


def test_empty_stream():
    with pytest.raises(EmptyStream):
        nearest_index([], 0.0)


def test_30hz_sync_error_statistics():
    times = np.arange(0, 40, 1 / 30)
    q = np.random.default_rng(0).uniform(1, 39, 100_000)
    err = np.abs(times[nearest_index(times, q)] - q)
    assert np.mean(err) == pytest.approx(1 / 120, rel=0.05)
    assert np.max(err) <= 1 / 60 + 1e-12


@settings(max_examples=200)
@given(st.lists(st.integers(-100_000, 100_000), min_size=1, max_size=30, unique=True), st.integers(-200_000, 200_000))
def test_nearest_is_a_minimiser(stamps_ms, q_ms):
    times = np.sort(stamps_ms) / 1000.0
    q = q_ms / 1000.0
    i = nearest_index(times, q)
    d = np.abs(times - q)
    assert d[i] == d.min()
    assert i == np.flatnonzero(d == d.min())[0]


def _two_pose_traj(angle_deg=10.0):
    return Trajectory([0.0, 1.0], [[0, 0, 0], [1, 0, 0]],
                      [ID_QUAT, Rotation.from_euler("z", angle_deg, degrees=True).as_quat()])


def test_interpolation_endpoints_exact():
    traj = _two_pose_traj()
    for i in (0, 1):
        p = interpolate_pose(traj, float(i))
        assert np.array_equal(p.position, traj.positions[i])
        assert np.array_equal(p.orientation, traj.quats[i])


def test_interpolation_midpoints():
    traj = _two_pose_traj()
    assert np.allclose(interpolate_pose(traj, 0.25).position, [0.25, 0, 0], atol=1e-15)
    r = interpolate_pose(traj, 0.5).rotation
    expect = Rotation.from_euler("z", 5, degrees=True)
    assert (r.inv() * expect).magnitude() < 1e-12


def test_outside_span():
    traj = _two_pose_traj()
    with pytest.raises(OutOfRange):
        interpolate_pose(traj, 1.5)
    assert np.array_equal(interpolate_pose(traj, 1.5, clamp=True).position, [1, 0, 0])


@settings(max_examples=100)
@given(st.floats(0, 1), st.floats(-170, 170))
def test_interpolated_rotation_on_geodesic(s, angle):
    traj = _two_pose_traj(angle)
    r = interpolate_pose(traj, s).rotation
    assert abs(r.as_euler("zyx", degrees=True)[0] - s * angle) < 1e-9


def test_trajectory_rejects_unsorted():
    with pytest.raises(ValueError):
        Trajectory([1.0, 0.0], [[0, 0, 0]] * 2, [ID_QUAT] * 2)


def test_beam_examples():
    prof = LaserProfile(0.0, [0.0], [5.0], [True])
    ident = SensorRig.identity()
    p0 = Pose(0.0, [0, 0, 0], ID_QUAT)
    assert np.allclose(profile_to_world(prof, p0, ident).points, [[5, 0, 0]])
    p1 = Pose(0.0, [10, 0, 0], ID_QUAT)
    assert np.allclose(profile_to_world(prof, p1, ident).points, [[15, 0, 0]])


def test_invalid_beams_are_nan():
    prof = LaserProfile(0.0, [0.0, 0.1], [5.0, 0.0], [True, False])
    w = profile_to_world(prof, Pose(0.0, [0, 0, 0], ID_QUAT), SensorRig.identity())
    assert np.isnan(w.points[1]).all()
    assert list(w.beam_index) == [0]


def test_image_pose_identity_rig():
    traj = _two_pose_traj()
    p = geolocate_image(0.3, traj, SensorRig.identity())
    q = interpolate_pose(traj, 0.3)
    assert np.allclose(p.position, q.position) and np.allclose(p.orientation, q.orientation)


def test_image_pose_with_offset():
    traj = Trajectory([0.0, 1.0], [[3, 4, 0], [3, 4, 0]],
                      [Rotation.from_euler("z", 30, degrees=True).as_quat()] * 2)
    rig = SensorRig(RigidTransform(), RigidTransform(np.eye(3), [1.0, 0, 2.0]))
    p = geolocate_image(0.5, traj, rig)
    expect = np.array([3, 4, 0]) + Rotation.from_euler("z", 30, degrees=True).apply([1.0, 0, 2.0])
    assert np.allclose(p.position, expect, atol=1e-12)


def test_rigid_transform_algebra():
    rng = np.random.default_rng(1)
    a = RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    b = RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    p = rng.normal(size=(10, 3))
    assert np.allclose((a @ b).apply(p), a.apply(b.apply(p)))
    assert np.allclose(a.inverse().apply(a.apply(p)), p)
    assert np.allclose(RigidTransform.from_matrix(a.as_matrix()).apply(p), a.apply(p))


def test_default_rig_camera_looks_forward_left_and_down():
    rig = SensorRig.default()
    axis = rig.camera_to_vehicle.rotation[:, 2]
    assert axis[0] > 0.5 and axis[1] > 0.5 and axis[2] < -0.3
    assert np.isclose(np.degrees(np.arcsin(-axis[2])), 20.0)


def test_facade_pass_is_planar():
    spec = RunSpec(duration=2.0, render_images=False)
    run = simulate_run(default_street(), spec)
    scene = run.scene
    left = scene.index("facade_left")
    for i, prof in enumerate(run.profiles):
        pose = interpolate_pose(run.trajectory, prof.t)
        w = profile_to_world(prof, pose, spec.rig)
        on = run.oracle.surface[i] == left
        assert on.sum() > 50
        assert np.max(np.abs(w.points[on, 1] - 5.0)) < 1e-9
