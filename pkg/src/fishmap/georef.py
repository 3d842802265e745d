"""Time synchronisation, pose interpolation and frame transforms.

Frames: the vehicle frame has +x forward, +y left, +z up. A pose maps its
local frame into the world frame (``p_world = R @ p_local + t``).
Quaternions are stored scalar-last ``(x, y, z, w)`` like scipy.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import EmptyStream, OutOfRange


class RigidTransform:
    """Rotation + translation taking points from a source frame to a target frame."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None):
        if rotation is None:
            rotation = np.eye(3)
        elif isinstance(rotation, Rotation):
            rotation = rotation.as_matrix()
        rotation = np.array(rotation, dtype=np.float64)
        translation = np.zeros(3) if translation is None else np.array(translation, dtype=np.float64)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        rotation.flags.writeable = False
        translation.flags.writeable = False
        self.rotation = rotation
        self.translation = translation

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec, translation=None):
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @classmethod
    def from_quat(cls, quat, translation=None):
        return cls(Rotation.from_quat(quat).as_matrix(), translation)

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def as_rotvec(self):
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def as_quat(self):
        return Rotation.from_matrix(self.rotation).as_quat()

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other):
        """``(a @ b).apply(p) == a.apply(b.apply(p))``."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __repr__(self):
        angle = math.degrees(np.linalg.norm(self.as_rotvec()))
        return f"RigidTransform(angle={angle:.6g} deg, translation={self.translation.tolist()})"


def rotation_angle_between(a, b):
    """Angle (radians) of the relative rotation between two 3x3 matrices."""
    c = (np.trace(np.asarray(a).T @ np.asarray(b)) - 1.0) / 2.0
    return math.acos(max(-1.0, min(1.0, c)))


@dataclass(frozen=True)
class Pose:
    t: float
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion, local -> world

    def __post_init__(self):
        q = np.asarray(self.orientation, dtype=np.float64)
        object.__setattr__(self, "orientation", q / np.linalg.norm(q))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "t", float(self.t))

    @property
    def rotation(self):
        return Rotation.from_quat(self.orientation)

    @property
    def transform(self):
        return RigidTransform(self.rotation.as_matrix(), self.position)

    @classmethod
    def from_transform(cls, t, transform):
        return cls(t, transform.translation, transform.as_quat())


class Trajectory:
    """Time-sorted vehicle poses with binary-search lookups."""

    def __init__(self, times, positions, quats):
        self.times = np.array(times, dtype=np.float64)
        self.positions = np.array(positions, dtype=np.float64).reshape(-1, 3)
        q = np.array(quats, dtype=np.float64).reshape(-1, 4)
        self.quats = q / np.linalg.norm(q, axis=1, keepdims=True)
        if len(self.times) == 0:
            raise EmptyStream("trajectory has no poses")
        if not (len(self.times) == len(self.positions) == len(self.quats)):
            raise ValueError("times, positions and orientations differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        self._rot = Rotation.from_quat(self.quats)
        for a in (self.times, self.positions, self.quats):
            a.flags.writeable = False

    @classmethod
    def from_poses(cls, poses):
        poses = list(poses)
        return cls([p.t for p in poses], [p.position for p in poses], [p.orientation for p in poses])

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i):
        return Pose(self.times[i], self.positions[i], self.quats[i])

    @property
    def nominal_rate(self):
        if len(self.times) < 2:
            return float("nan")
        return 1.0 / float(np.median(np.diff(self.times)))

    @property
    def span(self):
        return float(self.times[0]), float(self.times[-1])

    def interpolate_many(self, ts, clamp=False):
        """Vectorised :func:`interpolate_pose`; returns ``(positions, Rotation)``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        lo, hi = self.times[0], self.times[-1]
        if clamp:
            ts = np.clip(ts, lo, hi)
        elif np.any((ts < lo) | (ts > hi)):
            raise OutOfRange(f"time outside trajectory span [{lo}, {hi}]")
        if len(self.times) == 1:
            return np.repeat(self.positions, len(ts), axis=0), Rotation.from_quat(np.repeat(self.quats, len(ts), axis=0))
        i1 = np.clip(np.searchsorted(self.times, ts, side="left"), 1, len(self.times) - 1)
        i0 = i1 - 1
        exact0 = self.times[i0] == ts
        exact1 = self.times[i1] == ts
        t0 = self.times[i0]
        t1 = self.times[i1]
        s = (ts - t0) / (t1 - t0)
        pos = (1.0 - s)[:, None] * self.positions[i0] + s[:, None] * self.positions[i1]
        r0 = self._rot[i0]
        delta = (r0.inv() * self._rot[i1]).as_rotvec()
        quats = (r0 * Rotation.from_rotvec(s[:, None] * delta)).as_quat()
        # sample times reproduce the samples bit-for-bit
        pos[exact0] = self.positions[i0[exact0]]
        quats[exact0] = self.quats[i0[exact0]]
        pos[exact1] = self.positions[i1[exact1]]
        quats[exact1] = self.quats[i1[exact1]]
        return pos, Rotation.from_quat(quats)


def nearest_index(times, t_query):
    """Index of the stamp nearest ``t_query``; exact ties go to the earlier one."""
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        raise EmptyStream("stream is empty")
    q = np.asarray(t_query, dtype=np.float64)
    hi = np.clip(np.searchsorted(times, q, side="left"), 0, len(times) - 1)
    lo = np.maximum(hi - 1, 0)
    take_lo = np.abs(q - times[lo]) <= np.abs(times[hi] - q)
    idx = np.where(take_lo, lo, hi)
    return int(idx) if idx.ndim == 0 else idx


def _stamp(item):
    return float(getattr(item, "t", item))


def nearest_by_time(stream, t_query):
    """Return ``(item, delta_t)`` with ``delta_t = t_item - t_query``."""
    items = list(stream) if not isinstance(stream, np.ndarray) else stream
    if len(items) == 0:
        raise EmptyStream("stream is empty")
    times = np.array([_stamp(it) for it in items])
    i = nearest_index(times, t_query)
    return items[i], float(times[i] - t_query)


def interpolate_pose(traj, t, clamp=False):
    """Pose at time ``t``: linear in position, shortest-arc in orientation."""
    pos, rot = traj.interpolate_many([t], clamp=clamp)
    return Pose(t, pos[0], rot[0].as_quat())


@dataclass
class LaserProfile:
    """One scanner revolution. Angles are in the laser x-y plane."""

    t: float
    theta: np.ndarray
    range: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.t = float(self.t)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.range = np.asarray(self.range, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.theta.shape == self.range.shape == self.valid.shape):
            raise ValueError("theta, range and valid must have equal length")

    def __len__(self):
        return len(self.theta)

    def points_laser(self):
        """Laser-frame points; NaN rows for invalid beams."""
        pts = np.stack(
            [self.range * np.cos(self.theta), self.range * np.sin(self.theta), np.zeros_like(self.theta)], axis=-1
        )
        pts[~self.valid] = np.nan
        return pts


def default_beam_angles(n_beams=1080, sector=math.radians(270.0)):
    return np.linspace(-sector / 2.0, sector / 2.0, n_beams)


class SensorRig:
    """Mounting of the laser and the camera on the vehicle."""

    def __init__(self, laser_to_vehicle, camera_to_vehicle):
        self.laser_to_vehicle = laser_to_vehicle
        self.camera_to_vehicle = camera_to_vehicle

    @property
    def laser_to_camera(self):
        return self.camera_to_vehicle.inverse() @ self.laser_to_vehicle

    @classmethod
    def identity(cls):
        return cls(RigidTransform(), RigidTransform())

    @classmethod
    def default(cls):
        """Scanner 2 m high, scan plane vertical and transverse with its blind
        sector pointing at the ground; camera looking forward-left, 45 degrees
        off the travel direction and 20 degrees down."""
        # laser x -> up, laser y -> left, laser z -> backward
        laser = RigidTransform([[0, 0, -1], [0, 1, 0], [1, 0, 0]], [0.0, 0.0, 2.0])
        # level camera looking left: x -> forward, y -> down, z -> left
        level = np.array([[1.0, 0, 0], [0, 0, 1], [0, -1, 0]])
        turn = Rotation.from_euler("z", -45.0, degrees=True).as_matrix()
        tilt = Rotation.from_euler("x", -20.0, degrees=True).as_matrix()
        camera = RigidTransform(turn @ level @ tilt, [0.0, 0.25, 2.3])
        return cls(laser, camera)


@dataclass
class WorldProfile:
    """A profile resolved to world coordinates; invalid beams are NaN rows."""

    t: float
    points: np.ndarray
    valid: np.ndarray

    @property
    def beam_index(self):
        return np.flatnonzero(self.valid)


def profile_to_world(profile, pose, rig):
    """Map a profile into the world frame through the rig and the vehicle pose."""
    laser_to_world = pose.transform @ rig.laser_to_vehicle
    pts = laser_to_world.apply(profile.points_laser())
    pts[~profile.valid] = np.nan
    return WorldProfile(profile.t, pts, profile.valid.copy())


def geolocate_image(t_image, traj, rig, clamp=False):
    """World pose of the camera at ``t_image`` (orientation camera -> world)."""
    vehicle = interpolate_pose(traj, t_image, clamp=clamp)
    return Pose.from_transform(t_image, vehicle.transform @ rig.camera_to_vehicle)


@dataclass
class StampedImage:
    t: float
    image: np.ndarray
    id: int = 0
