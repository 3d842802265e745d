"""Synthetic street scenes and sensor simulation with exact ground truth.

Surfaces are textured planar rectangles with analytic colour functions, so
the true colour at any hit point is known exactly. Laser profiles come from
exact ray/plane intersection, images from per-pixel back-projection through
the fish-eye model followed by the same ray cast.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy.spatial.transform import Rotation

from .calibration import BoardObservation, PlaneLaserObservation, board_plane, estimate_board_pose
from .camera import FisheyeIntrinsics, project_points, unproject_points
from .errors import EmptyScene
from .georef import (
    LaserProfile,
    RigidTransform,
    SensorRig,
    StampedImage,
    Trajectory,
    default_beam_angles,
)

SKY = (150.0, 190.0, 230.0)


# -- textures --

@dataclass(frozen=True)
class WaveTexture:
    """Smooth colour field: per channel ``base + amp * sin(2 pi f . p + phase)``
    over world position ``p``. Smooth enough that bilinear sampling of a
    rendered image reproduces it to within quantisation."""

    base: tuple = (128.0, 128.0, 128.0)
    amplitude: tuple = (90.0, 90.0, 90.0)
    frequencies: tuple = ((0.27, 0.0, 0.05), (0.04, 0.0, 0.31), (0.13, 0.11, 0.17))
    phases: tuple = (0.0, 1.3, 2.1)

    def color(self, points, local):
        f = np.asarray(self.frequencies)
        arg = 2 * np.pi * points @ f.T + np.asarray(self.phases)
        return np.asarray(self.base) + np.asarray(self.amplitude) * np.sin(arg)


@dataclass(frozen=True)
class CheckerTexture:
    """Checkerboard over the surface's local (u, v) metres."""

    square: float = 0.5
    color_a: tuple = (20.0, 20.0, 20.0)
    color_b: tuple = (235.0, 235.0, 235.0)

    def color(self, points, local):
        cells = np.floor(local / self.square).astype(np.int64)
        odd = ((cells[..., 0] + cells[..., 1]) % 2).astype(bool)
        return np.where(odd[..., None], np.asarray(self.color_b), np.asarray(self.color_a))


@dataclass(frozen=True)
class GradientTexture:
    """Linear ramp along the surface's local u axis."""

    start: tuple = (40.0, 80.0, 160.0)
    end: tuple = (220.0, 170.0, 60.0)
    length: float = 20.0

    def color(self, points, local):
        s = np.clip(local[..., 0] / self.length, 0.0, 1.0)[..., None]
        return np.asarray(self.start) * (1 - s) + np.asarray(self.end) * s


@dataclass(frozen=True)
class Surface:
    """Rectangle ``origin + a*edge_u + b*edge_v`` for ``a, b`` in [0, 1]."""

    name: str
    origin: tuple
    edge_u: tuple
    edge_v: tuple
    texture: object
    kind: str = "facade"

    def __post_init__(self):
        if np.linalg.norm(np.cross(self.edge_u, self.edge_v)) <= 0:
            raise ValueError(f"surface {self.name!r} has zero area")

    @property
    def normal(self):
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)


@dataclass
class Scene:
    surfaces: list
    sky: tuple = SKY

    def index(self, name):
        return [s.name for s in self.surfaces].index(name)


def box_surfaces(name, lo, hi, texture):
    """Four sides and the top of an axis-aligned box standing on the ground."""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
    return [
        Surface(f"{name}_xmin", (x0, y0, z0), (0, dy, 0), (0, 0, dz), texture, "obstacle"),
        Surface(f"{name}_xmax", (x1, y0, z0), (0, dy, 0), (0, 0, dz), texture, "obstacle"),
        Surface(f"{name}_ymin", (x0, y0, z0), (dx, 0, 0), (0, 0, dz), texture, "obstacle"),
        Surface(f"{name}_ymax", (x0, y1, z0), (dx, 0, 0), (0, 0, dz), texture, "obstacle"),
        Surface(f"{name}_top", (x0, y0, z1), (dx, 0, 0), (0, dy, 0), texture, "obstacle"),
    ]


def default_street():
    """Two 20 m facades 10 m apart, the road between them and a car parked
    along the left facade."""
    left = WaveTexture()
    right = WaveTexture(base=(150.0, 110.0, 100.0), phases=(0.7, 0.2, 1.9))
    ground = WaveTexture(base=(110.0, 110.0, 105.0), amplitude=(40.0, 40.0, 40.0))
    surfaces = [
        Surface("facade_left", (-10.0, 5.0, 0.0), (20.0, 0.0, 0.0), (0.0, 0.0, 10.0), left, "facade"),
        Surface("facade_right", (-10.0, -5.0, 0.0), (20.0, 0.0, 0.0), (0.0, 0.0, 10.0), right, "facade"),
        Surface("ground", (-12.0, -5.0, 0.0), (24.0, 0.0, 0.0), (0.0, 10.0, 0.0), ground, "ground"),
    ]
    surfaces += box_surfaces("car", (1.0, 2.9, 0.0), (5.5, 4.6, 1.5), CheckerTexture(square=0.3))
    return Scene(surfaces)


def raycast(scene, origins, directions):
    """Nearest hit of each ray. Returns ``(t, surface_index)``; misses have
    ``t = inf`` and index -1. Directions need not be normalised."""
    if not scene.surfaces:
        raise EmptyScene("scene has no surfaces")
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    o, d = np.broadcast_arrays(o, d)
    shape = d.shape[:-1]
    o = o.reshape(-1, 3)
    d = d.reshape(-1, 3)
    best = np.full(len(d), np.inf)
    which = np.full(len(d), -1, dtype=np.int64)
    for k, s in enumerate(scene.surfaces):
        n = s.normal
        origin = np.asarray(s.origin, dtype=np.float64)
        eu = np.asarray(s.edge_u, dtype=np.float64)
        ev = np.asarray(s.edge_v, dtype=np.float64)
        denom = d @ n
        num = (origin - o) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        idx = np.flatnonzero((np.abs(denom) > 1e-12) & (t > 1e-9) & (t < best))
        if idx.size == 0:
            continue
        ti = t[idx]
        rel = o[idx] + ti[:, None] * d[idx] - origin
        a = rel @ (eu / (eu @ eu))
        b = rel @ (ev / (ev @ ev))
        inside = (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
        idx = idx[inside]
        best[idx] = ti[inside]
        which[idx] = k
    best = best.reshape(shape)
    which = which.reshape(shape)
    return best, which


def surface_colors(scene, points, which):
    """True colour (float RGB) of hit points; sky colour where ``which == -1``."""
    points = np.asarray(points, dtype=np.float64)
    out = np.empty(points.shape, dtype=np.float64)
    out[...] = np.asarray(scene.sky)
    for k in np.unique(which):
        if k < 0:
            continue
        s = scene.surfaces[k]
        mask = which == k
        p = points[mask]
        rel = p - np.asarray(s.origin)
        eu = np.asarray(s.edge_u, dtype=np.float64)
        ev = np.asarray(s.edge_v, dtype=np.float64)
        local = np.stack([rel @ eu / np.linalg.norm(eu), rel @ ev / np.linalg.norm(ev)], axis=-1)
        out[mask] = s.texture.color(p, local)
    return np.clip(out, 0.0, 255.0)


# -- camera rendering --

@lru_cache(maxsize=8)
def pixel_rays(intr, width, height, supersample=1):
    """Camera-frame unit rays through pixel (sub-)centres; NaN outside the FOV."""
    s = supersample
    offsets = (np.arange(s) + 0.5) / s - 0.5
    ys = (np.arange(height)[:, None] + offsets[None, :]).ravel()
    xs = (np.arange(width)[:, None] + offsets[None, :]).ravel()
    uv = np.stack(np.meshgrid(xs, ys), axis=-1)
    rays, ok = unproject_points(uv, intr)
    rays.flags.writeable = False
    return rays, ok


@dataclass
class Render:
    image: np.ndarray
    surface: np.ndarray
    points: np.ndarray


def render(scene, camera_to_world, intr, size, supersample=1):
    """Render the scene through the fish-eye model.

    Returns a :class:`Render` with the uint8 image plus per-pixel surface
    index and world hit point (meaningful when ``supersample == 1``).
    Pixels outside the image circle are black; rays that miss are sky.
    """
    w, h = size
    rays, ok = pixel_rays(intr, w, h, supersample)
    dirs = rays[ok] @ camera_to_world.rotation.T
    t, which = raycast(scene, camera_to_world.translation, dirs)
    pts = camera_to_world.translation + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs
    colors = surface_colors(scene, pts, which)
    full = np.zeros(ok.shape + (3,))
    full[ok] = colors
    surf = np.full(ok.shape, -2, dtype=np.int64)
    surf[ok] = which
    hit = np.full(ok.shape + (3,), np.nan)
    hit[ok] = np.where((which >= 0)[:, None], pts, np.nan)
    s = supersample
    if s > 1:
        full = full.reshape(h, s, w, s, 3).mean(axis=(1, 3))
        surf = surf.reshape(h, s, w, s)[:, s // 2, :, s // 2]
        hit = hit.reshape(h, s, w, s, 3)[:, s // 2, :, s // 2]
    image = np.clip(np.floor(full + 0.5), 0, 255).astype(np.uint8)
    return Render(image, surf, hit)


# -- runs --

def marlin_intrinsics():
    """776 x 580 fish-eye whose 180 degree image circle nearly fills the 580 px height."""
    k1 = 580.0 / math.pi
    return FisheyeIntrinsics(order=9, k=(k1, -0.9, 0.12, -0.01, 0.0004), mu=1.0, mv=1.0, u0=387.5, v0=289.5)


@dataclass
class RunSpec:
    shape: str = "straight"  # or "arc"
    speed: float = 5.0 / 3.6
    duration: float = 10.0
    start: tuple = (-7.0, 0.0, 0.0)
    arc_radius: float = 40.0
    pose_rate: float = 10.0
    profile_rate: float = 10.0
    image_rate: float = 30.0
    image_offset: float = 0.0
    render_images: bool = True
    rig: SensorRig = field(default_factory=SensorRig.default)
    intrinsics: FisheyeIntrinsics = field(default_factory=marlin_intrinsics)
    image_size: tuple = (776, 580)
    n_beams: int = 1080
    sector_deg: float = 270.0
    range_min: float = 0.5
    range_max: float = 80.0
    pixel_sigma: float = 0.0
    range_sigma: float = 0.0
    pose_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.pose_rate, self.profile_rate, self.image_rate) <= 0:
            raise ValueError("rates must be positive")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.shape not in ("straight", "arc"):
            raise ValueError(f"unknown trajectory shape {self.shape!r}")


def vehicle_motion(spec, t):
    """Analytic vehicle pose at times ``t``: ``(positions, Rotation)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    s = spec.speed * t
    start = np.asarray(spec.start, dtype=np.float64)
    if spec.shape == "straight":
        pos = start + s[:, None] * np.array([1.0, 0.0, 0.0])
        yaw = np.zeros_like(t)
    else:
        radius = spec.arc_radius
        yaw = s / radius
        pos = start + np.stack([radius * np.sin(yaw), radius * (1 - np.cos(yaw)), np.zeros_like(t)], axis=-1)
    return pos, Rotation.from_euler("z", yaw)


def _times(rate, duration, offset=0.0):
    n = int(math.floor((duration - offset) * rate + 1e-9)) + 1
    return offset + np.arange(max(n, 0)) / rate


@dataclass
class RunOracle:
    hits: np.ndarray  # (P, N, 3) world hit points, NaN for misses
    colors: np.ndarray  # (P, N, 3) true float colours
    surface: np.ndarray  # (P, N) surface index, -1 for misses
    vehicle_at_profile: list  # RigidTransform per profile
    camera_poses: list  # RigidTransform camera -> world per image
    image_renders: list = field(repr=False, default_factory=list)


@dataclass
class SimRun:
    scene: Scene
    spec: RunSpec
    trajectory: Trajectory
    profiles: list
    images: list
    oracle: RunOracle

    def true_camera_pose(self, t):
        pos, rot = vehicle_motion(self.spec, [t])
        return RigidTransform(rot[0].as_matrix(), pos[0]) @ self.spec.rig.camera_to_vehicle


def simulate_run(scene, spec):
    """Sample poses, cast laser profiles and render images along a run."""
    if not scene.surfaces:
        raise EmptyScene("scene has no surfaces")
    rng = np.random.default_rng(spec.seed)
    rig = spec.rig

    pose_t = _times(spec.pose_rate, spec.duration)
    pos, rot = vehicle_motion(spec, pose_t)
    quats = rot.as_quat()
    if spec.pose_sigma > 0:
        pos = pos + rng.normal(0.0, spec.pose_sigma, pos.shape)
    trajectory = Trajectory(pose_t, pos, quats)

    prof_t = _times(spec.profile_rate, spec.duration)
    theta = default_beam_angles(spec.n_beams, math.radians(spec.sector_deg))
    beam_dirs = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=-1)
    vpos, vrot = vehicle_motion(spec, prof_t)
    vehicles = [RigidTransform(vrot[i].as_matrix(), vpos[i]) for i in range(len(prof_t))]
    lasers = [v @ rig.laser_to_vehicle for v in vehicles]
    origins = np.array([L.translation for L in lasers])[:, None, :]
    dirs = np.einsum("pij,nj->pni", np.array([L.rotation for L in lasers]), beam_dirs)
    rng_t, which = raycast(scene, origins, dirs)
    valid = np.isfinite(rng_t) & (rng_t > spec.range_min) & (rng_t < spec.range_max)
    which = np.where(valid, which, -1)
    hits = origins + np.where(valid, rng_t, np.nan)[..., None] * dirs
    colors = surface_colors(scene, np.nan_to_num(hits), which)
    ranges = np.where(valid, rng_t, 0.0)
    if spec.range_sigma > 0:
        ranges = np.where(valid, ranges + rng.normal(0.0, spec.range_sigma, ranges.shape), 0.0)
    profiles = [LaserProfile(prof_t[i], theta, ranges[i], valid[i]) for i in range(len(prof_t))]

    img_t = _times(spec.image_rate, spec.duration, spec.image_offset)
    cpos, crot = vehicle_motion(spec, img_t)
    cams = [RigidTransform(crot[i].as_matrix(), cpos[i]) @ rig.camera_to_vehicle for i in range(len(img_t))]
    images, renders = [], []
    if spec.render_images:
        for i, (t, cam) in enumerate(zip(img_t, cams)):
            r = render(scene, cam, spec.intrinsics, spec.image_size)
            images.append(StampedImage(float(t), r.image, i))
            renders.append(r)
    oracle = RunOracle(hits, colors, which, vehicles, cams, renders)
    return SimRun(scene, spec, trajectory, profiles, images, oracle)


# -- calibration sessions --

@dataclass(frozen=True)
class BoardSpec:
    cols: int = 10
    rows: int = 7
    square: float = 0.08

    def points(self):
        xs, ys = np.meshgrid(np.arange(self.cols) * self.square, np.arange(self.rows) * self.square)
        return np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])

    @property
    def extent(self):
        return (self.cols - 1) * self.square, (self.rows - 1) * self.square


@dataclass
class CalibrationSession:
    boards: list
    planes: list
    truth: dict


def _random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _frame_with_normal(normal, spin):
    n = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, n)
    x /= np.linalg.norm(x)
    y = np.cross(n, x)
    c, s = math.cos(spin), math.sin(spin)
    return np.column_stack([c * x + s * y, -s * x + c * y, n])


def _board_pose(center, normal, spin, board):
    R = _frame_with_normal(normal, spin)
    ex, ey = board.extent
    return RigidTransform(R, center - R @ np.array([ex / 2, ey / 2, 0.0]))


def _visible(pc, intr, size, margin=2.0):
    uv, ok = project_points(pc, intr)
    w, h = size
    ok &= (uv[:, 0] >= margin) & (uv[:, 1] >= margin) & (uv[:, 0] <= w - 1 - margin) & (uv[:, 1] <= h - 1 - margin)
    return uv, ok


def make_calibration_session(
    intr,
    image_size,
    laser_to_camera=None,
    n_poses=15,
    board=BoardSpec(),
    pixel_sigma=0.0,
    range_sigma=0.0,
    parallel=False,
    plane_source="truth",
    max_theta_deg=80.0,
    seed=0,
):
    """Random board placements with exact correspondences and laser hits.

    Intrinsic boards span the FOV; extrinsic boards straddle the laser scan
    plane. Planes are either the true board planes (``plane_source="truth"``)
    or re-estimated from the noisy corners through the camera model
    (``"pnp"``), which needs the board to be visible.
    """
    rng = np.random.default_rng(seed)
    laser_to_camera = laser_to_camera or RigidTransform()
    X = board.points()
    boards, board_poses = [], []
    fixed_normal = None
    while len(boards) < n_poses:
        theta = math.radians(max_theta_deg) * math.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * math.pi)
        direction = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
        center = rng.uniform(0.6, 1.4) * direction
        if parallel:
            normal = np.array([0.0, 0.0, 1.0])
            spin = 0.0
        else:
            tilt = _random_unit(rng)
            tilt -= (tilt @ direction) * direction
            tilt /= np.linalg.norm(tilt)
            angle = math.radians(rng.uniform(0.0, 50.0))
            normal = math.cos(angle) * direction + math.sin(angle) * tilt
            spin = rng.uniform(0, 2 * math.pi)
        T = _board_pose(center, normal, spin, board)
        pc = T.apply(X)
        facing = np.abs((pc / np.linalg.norm(pc, axis=1, keepdims=True)) @ T.rotation[:, 2])
        uv, ok = _visible(pc, intr, image_size)
        if not ok.all() or facing.min() < 0.2:
            continue
        if pixel_sigma > 0:
            uv = uv + rng.normal(0.0, pixel_sigma, uv.shape)
        boards.append(BoardObservation(len(boards), X, uv))
        board_poses.append(T)

    theta_beams = default_beam_angles()
    planes, laser_poses, laser_boards = [], [], []
    while len(planes) < n_poses:
        alpha = rng.uniform(-math.radians(120), math.radians(120))
        center_l = rng.uniform(1.0, 2.5) * np.array([math.cos(alpha), math.sin(alpha), 0.0])
        normal_l = _random_unit(rng)
        if abs(normal_l[2]) > 0.85 or abs(normal_l @ center_l) / np.linalg.norm(center_l) < 0.3:
            continue
        T_l = _board_pose(center_l, normal_l, rng.uniform(0, 2 * math.pi), board)
        # laser beams hitting the board rectangle
        n = T_l.rotation[:, 2]
        d = n @ T_l.translation
        dirs = np.stack([np.cos(theta_beams), np.sin(theta_beams), np.zeros_like(theta_beams)], axis=-1)
        with np.errstate(divide="ignore"):
            t = d / (dirs @ n)
        local = (t[:, None] * dirs - T_l.translation) @ T_l.rotation
        ex, ey = board.extent
        hit = (t > 0) & np.isfinite(t) & (local[:, 0] >= 0) & (local[:, 0] <= ex) & (local[:, 1] >= 0) & (local[:, 1] <= ey)
        if hit.sum() < 3:
            continue
        r = t[hit]
        if range_sigma > 0:
            r = r + rng.normal(0.0, range_sigma, r.shape)
        pts = r[:, None] * dirs[hit]
        T_c = laser_to_camera @ T_l
        if plane_source == "pnp":
            uv, ok = _visible(T_c.apply(X), intr, image_size)
            if ok.sum() < 6:
                continue
            if pixel_sigma > 0:
                uv = uv + rng.normal(0.0, pixel_sigma, uv.shape)
            obs = BoardObservation(f"laser{len(planes)}", X[ok], uv[ok])
            n_c, d_c = board_plane(estimate_board_pose(obs, intr))
            laser_boards.append(obs)
        elif plane_source == "truth":
            n_c, d_c = board_plane(T_c)
        else:
            raise ValueError(f"unknown plane_source {plane_source!r}")
        planes.append(PlaneLaserObservation(n_c, d_c, pts))
        laser_poses.append(T_c)
    truth = {
        "intrinsics": intr,
        "board_poses": board_poses,
        "laser_to_camera": laser_to_camera,
        "laser_board_poses": laser_poses,
        "laser_boards": laser_boards,
    }
    return CalibrationSession(boards, planes, truth)
