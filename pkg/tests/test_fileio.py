import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fishmap.camera import FisheyeIntrinsics
from fishmap.errors import DecodeError
from fishmap.fileio import (
    read_board_observations,
    read_calibration,
    read_images,
    read_plane_observations,
    read_ply,
    read_poses,
    read_profiles,
    read_profiles_text,
    write_board_observations,
    write_calibration,
    write_images,
    write_plane_observations,
    write_ply,
    write_poses,
    write_profiles,
    write_profiles_text,
)
from fishmap.georef import LaserProfile, RigidTransform, StampedImage, Trajectory
from fishmap.scene_sim import make_calibration_session

INTR = FisheyeIntrinsics(order=9, k=(184.6, -0.9, 0.12, -0.01, 0.0004), mu=1, mv=1.013, u0=387.25, v0=289.5)


def random_profiles(n=5, beams=40, seed=0):
    rng = np.random.default_rng(seed)
    theta = np.linspace(-2.3, 2.3, beams).astype(np.float32).astype(np.float64)
    out = []
    for i in range(n):
        valid = rng.uniform(size=beams) > 0.2
        r = rng.uniform(0.5, 30, beams).astype(np.float32).astype(np.float64)
        out.append(LaserProfile(0.1 * i + 1e-4, theta, np.where(valid, r, 0.0), valid))
    return out


def assert_same_profiles(a, b):
    assert len(a) == len(b)
    for p, q in zip(a, b):
        assert p.t == q.t
        assert np.array_equal(p.theta, q.theta)
        assert np.array_equal(p.range, q.range)
        assert np.array_equal(p.valid, q.valid)


def test_calibration_round_trip_is_exact(tmp_path):
    T = RigidTransform.from_rotvec([0.01, -0.2, 0.3], [0.1, 1 / 3, -0.05])
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_calibration(a, INTR, T, (776, 580))
    doc = read_calibration(a)
    assert doc["intrinsics"] == INTR
    assert np.array_equal(doc["laser_to_camera"].rotation, T.rotation)
    assert np.array_equal(doc["laser_to_camera"].translation, T.translation)
    write_calibration(b, doc["intrinsics"], doc["laser_to_camera"], doc["image_size"])
    assert filecmp.cmp(a, b, shallow=False)


def test_observation_files_round_trip(tmp_path):
    s = make_calibration_session(INTR, (776, 580), n_poses=4, seed=1)
    write_board_observations(tmp_path / "b.json", s.boards, (776, 580))
    boards, size = read_board_observations(tmp_path / "b.json")
    assert size == (776, 580)
    for x, y in zip(boards, s.boards):
        assert np.array_equal(x.pixels, y.pixels) and np.array_equal(x.board_points, y.board_points)
    write_plane_observations(tmp_path / "p.json", s.planes)
    planes = read_plane_observations(tmp_path / "p.json")
    assert all(np.array_equal(x.laser_points, y.laser_points) for x, y in zip(planes, s.planes))


def test_poses_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    q = rng.normal(size=(6, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    traj = Trajectory(np.arange(6) * 0.1, rng.normal(size=(6, 3)), q)
    write_poses(tmp_path / "a.txt", traj)
    back = read_poses(tmp_path / "a.txt")
    assert np.array_equal(back.times, traj.times) and np.array_equal(back.positions, traj.positions)
    write_poses(tmp_path / "b.txt", back)
    assert filecmp.cmp(tmp_path / "a.txt", tmp_path / "b.txt", shallow=False)


def test_pose_decode_error_reports_offset(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 oops 1\n")
    with pytest.raises(DecodeError) as err:
        read_poses(path)
    assert err.value.offset == len("0 0 0 0 0 0 0 1\n")
    path.write_text("0 0 0 0 0 0 1\n")
    with pytest.raises(DecodeError):
        read_poses(path)


def test_binary_profiles_round_trip(tmp_path):
    profs = random_profiles()
    write_profiles(tmp_path / "a.bin", profs)
    back = read_profiles(tmp_path / "a.bin")
    assert_same_profiles(back, profs)
    write_profiles(tmp_path / "b.bin", back)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_text_profiles_round_trip(tmp_path):
    profs = random_profiles(seed=3)
    write_profiles_text(tmp_path / "a.txt", profs)
    back = read_profiles_text(tmp_path / "a.txt")
    assert_same_profiles(back, profs)
    write_profiles_text(tmp_path / "b.txt", back)
    assert filecmp.cmp(tmp_path / "a.txt", tmp_path / "b.txt", shallow=False)


@pytest.mark.parametrize("damage,offset", [("magic", 0), ("truncate", 16 + 8 + 40 * 9)])
def test_profile_decode_errors(tmp_path, damage, offset):
    path = tmp_path / "p.bin"
    write_profiles(path, random_profiles(n=2))
    data = bytearray(path.read_bytes())
    if damage == "magic":
        data[:4] = b"XXXX"
    else:
        data = data[:-5]
    path.write_bytes(bytes(data))
    with pytest.raises(DecodeError) as err:
        read_profiles(path)
    assert err.value.offset == offset


def test_profile_text_decode_error(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("0.0 2 0.1 5.0 1 0.2 6.0 1\n0.1 2 0.1 5.0\n")
    with pytest.raises(DecodeError) as err:
        read_profiles_text(path)
    assert err.value.offset == len("0.0 2 0.1 5.0 1 0.2 6.0 1\n")


def test_json_decode_error_has_offset(tmp_path):
    path = tmp_path / "c.json"
    text = '{"intrinsics": [1, 2,, 3]}'
    path.write_text(text)
    with pytest.raises(DecodeError) as err:
        read_calibration(path)
    assert err.value.offset == text.index(",,") + 1


def test_images_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    ims = [StampedImage(0.1 * i, rng.integers(0, 256, (6, 8, 3), dtype=np.uint8), i) for i in range(3)]
    write_images(tmp_path / "img", ims)
    back = read_images(tmp_path / "img")
    assert [b.t for b in back] == [i.t for i in ims]
    assert all(np.array_equal(a.image, b.image) for a, b in zip(ims, back))


@pytest.mark.parametrize("ascii", [False, True])
@pytest.mark.parametrize("with_color,with_faces", [(True, False), (False, True), (True, True), (False, False)])
def test_ply_round_trip(tmp_path, ascii, with_color, with_faces):
    rng = np.random.default_rng(5)
    pos = rng.normal(size=(7, 3))
    col = rng.integers(0, 256, (7, 3), dtype=np.uint8) if with_color else None
    faces = np.array([[0, 1, 2], [2, 3, 4], [4, 5, 6]]) if with_faces else None
    a = tmp_path / "a.ply"
    write_ply(a, pos, col, faces, ascii=ascii)
    back = read_ply(a)
    assert np.array_equal(back["positions"], pos)
    assert (back["colors"] is None) == (col is None)
    if col is not None:
        assert np.array_equal(back["colors"], col)
    if faces is not None:
        assert np.array_equal(back["faces"], faces)
    b = tmp_path / "b.ply"
    write_ply(b, back["positions"], back["colors"], back["faces"], ascii=ascii)
    assert a.read_bytes() == b.read_bytes()


def test_ply_errors(tmp_path):
    path = tmp_path / "x.ply"
    path.write_bytes(b"not a ply")
    with pytest.raises(DecodeError):
        read_ply(path)
    write_ply(path, np.zeros((4, 3)))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(DecodeError):
        read_ply(path)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=3, max_size=30))
def test_ply_float_round_trip(tmp_path_factory, values):
    pos = np.array(values[: len(values) // 3 * 3]).reshape(-1, 3)
    path = tmp_path_factory.mktemp("ply") / "p.ply"
    for ascii in (False, True):
        write_ply(path, pos, ascii=ascii)
        assert np.array_equal(read_ply(path)["positions"], pos)
