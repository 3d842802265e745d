"""Fish-eye intrinsic calibration from planar boards, model-order comparison
and laser-to-camera extrinsic calibration from plane constraints."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import FisheyeIntrinsics, parameter_names
from .errors import DegenerateGeometry, DegenerateNormals, InsufficientData
from .georef import RigidTransform
from .optim import levenberg_marquardt

MIN_CORRESPONDENCES = 6
DEFAULT_IMPROVEMENT_THRESHOLD = 0.05


@dataclass
class BoardObservation:
    """Board points (board frame, z = 0) and their detected pixels."""

    pose_id: object
    board_points: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        self.board_points = np.asarray(self.board_points, dtype=np.float64).reshape(-1, 3)
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        if len(self.board_points) != len(self.pixels):
            raise ValueError("board points and pixels differ in length")
        if len(self.pixels) < MIN_CORRESPONDENCES:
            raise InsufficientData(f"pose {self.pose_id}: need >= {MIN_CORRESPONDENCES} correspondences")
        if np.any(np.abs(self.board_points[:, 2]) > 1e-12):
            raise ValueError("board points must lie in the board plane z = 0")


@dataclass
class PlaneLaserObservation:
    """Board plane ``n . x = d`` in the camera frame and laser-frame hits on it."""

    normal: np.ndarray
    offset: float
    laser_points: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if not np.isclose(norm, 1.0, atol=1e-9):
            raise ValueError("plane normal must be a unit vector")
        n = n / norm
        d = float(self.offset)
        if d < 0:
            n, d = -n, -d
        self.normal, self.offset = n, d
        self.laser_points = np.asarray(self.laser_points, dtype=np.float64).reshape(-1, 3)
        if len(self.laser_points) < 3:
            raise InsufficientData("need >= 3 laser points on each plane")


@dataclass
class CalibrationReport:
    intrinsics: FisheyeIntrinsics
    per_pose_extrinsics: list
    rms_residual_px: float
    iterations: int
    residuals: np.ndarray = field(repr=False, default=None)


# -- intrinsic parameter vector (mu is held fixed: it is redundant with k) --

def _free_names(order):
    return [n for n in parameter_names(order) if n != "mu"]


def pack_intrinsics(intr):
    values = {"mv": intr.mv, "u0": intr.u0, "v0": intr.v0}
    values.update({f"k{i + 1}": c for i, c in enumerate(intr.k)})
    vec = [values[n] for n in _free_names(intr.order) if n in values]
    return np.array(vec + list(intr.asym))


def unpack_intrinsics(vec, order, mu=1.0, theta_max=math.pi / 2, checked=True):
    nk = 2 if order == 6 else 5
    k = tuple(vec[:nk]) + (0.0,) * (5 - nk)
    mv, u0, v0 = vec[nk : nk + 3]
    asym = tuple(vec[nk + 3 :]) if order == 23 else ()
    build = FisheyeIntrinsics if checked else FisheyeIntrinsics.unchecked
    return build(order=order, k=k, mu=mu, mv=mv, u0=u0, v0=v0, asym=asym, theta_max=theta_max)


def promote(intr, order):
    """Lift intrinsics to a richer model with the extra terms at their neutral start."""
    if order < intr.order:
        raise ValueError("can only promote to a higher order")
    asym = intr.asym
    if order == 23 and not asym:
        # the asymmetric terms are products amplitude * Fourier; seeding the
        # Fourier weights keeps the amplitude gradient non-zero at the start
        asym = (0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5)
    return FisheyeIntrinsics(order=order, k=intr.k, mu=intr.mu, mv=intr.mv, u0=intr.u0, v0=intr.v0,
                             asym=asym, theta_max=intr.theta_max)


# -- board pose from correspondences --

def _skew(v):
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    o = np.zeros_like(x)
    return np.stack([np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)], -2)


def pose_from_rays(board_points, rays):
    """Closed-form board pose from ray directions (DLT on ``d x H[x y 1] = 0``).

    Works for rays beyond 90 degrees from the optical axis, unlike a
    homography on normalised image coordinates.
    """
    xy1 = np.column_stack([board_points[:, :2], np.ones(len(board_points))])
    rows = np.einsum("nab,nbc->nac", _skew(rays), _kron_rows(xy1))
    _, _, vt = np.linalg.svd(rows.reshape(-1, 9))
    H = vt[-1].reshape(3, 3)
    scale = 2.0 / (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    if np.sum(np.einsum("ni,ni->n", rays, xy1 @ H.T)) < 0:
        scale = -scale
    H = H * scale
    r1, r2 = H[:, 0], H[:, 1]
    R = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(R)
    R = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return RigidTransform(R, H[:, 2])


def _kron_rows(xy1):
    # (n, 3, 9): row a holds xy1 in columns 3a..3a+2, so M @ vec(H) == H @ xy1
    m = np.zeros((len(xy1), 3, 9))
    for a in range(3):
        m[:, a, 3 * a : 3 * a + 3] = xy1
    return m


def _pose_params(transforms):
    return np.concatenate([np.concatenate([T.as_rotvec(), T.translation]) for T in transforms])


def _poses_from_params(p):
    p = p.reshape(-1, 6)
    return Rotation.from_rotvec(p[:, :3]).as_matrix(), p[:, 3:]


def estimate_board_pose(observation, camera, initial=None):
    """Board -> camera transform minimising reprojection error for a fixed camera.

    ``camera`` is anything with ``project_points``/``unproject_points``
    (fish-eye intrinsics or a :class:`~fishmap.camera.PinholeCamera`).
    """
    X = observation.board_points
    if initial is None:
        rays, ok = camera.unproject_points(observation.pixels)
        if ok.sum() < MIN_CORRESPONDENCES:
            raise DegenerateGeometry("too few detections inside the camera model")
        initial = pose_from_rays(X[ok], rays[ok])
    if isinstance(camera, FisheyeIntrinsics):
        # a rough start may push corners past the FOV limit; let the model extend
        camera = FisheyeIntrinsics.unchecked(camera.order, camera.k, camera.mu, camera.mv, camera.u0, camera.v0,
                                             camera.asym, math.pi)

    def fun(p):
        R, t = _poses_from_params(p)
        uv, _ = camera.project_points(X @ R[0].T + t[0])
        return (uv - observation.pixels).ravel()

    def jac(p):
        return _central_jacobian(fun, p)

    res = levenberg_marquardt(fun, jac, _pose_params([initial]), max_iter=200)
    R, t = _poses_from_params(res.x)
    return RigidTransform(R[0], t[0])


def board_plane(board_to_camera):
    """Board plane (unit normal, offset >= 0) in the camera frame."""
    n = board_to_camera.rotation[:, 2]
    d = float(n @ board_to_camera.translation)
    return (n, d) if d >= 0 else (-n, -d)


def _central_jacobian(fun, x, rel_step=1e-6):
    cols = []
    for j in range(len(x)):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((fun(xp) - fun(xm)) / (2 * h))
    return np.column_stack(cols)


# -- intrinsic fit --

class _BoardProblem:
    """Joint residual over intrinsics + per-board poses, with a block-sparse
    finite-difference Jacobian (each pose parameter only touches its board)."""

    def __init__(self, observations, order, mu, theta_max):
        self.order = order
        self.mu = mu
        self.theta_max = theta_max
        self.X = np.concatenate([o.board_points for o in observations])
        self.px = np.concatenate([o.pixels for o in observations])
        self.idx = np.concatenate([np.full(len(o.pixels), i) for i, o in enumerate(observations)])
        self.n_poses = len(observations)
        self.n_intr = len(_free_names(order))
        rows = np.repeat(self.idx, 2)
        self.rows_of = [np.flatnonzero(rows == p) for p in range(self.n_poses)]

    def split(self, x):
        return x[: self.n_intr], x[self.n_intr :]

    def residual(self, x):
        xi, xp = self.split(x)
        intr = unpack_intrinsics(xi, self.order, self.mu, math.pi, checked=False)
        R, t = _poses_from_params(xp)
        pc = np.einsum("nij,nj->ni", R[self.idx], self.X) + t[self.idx]
        uv, _ = intr.project_points(pc)
        return (uv - self.px).ravel()

    def jacobian(self, x, rel_step=1e-6):
        J = np.zeros((2 * len(self.px), len(x)))
        for j in range(self.n_intr):
            h = rel_step * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            J[:, j] = (self.residual(xp) - self.residual(xm)) / (2 * h)
        base = self.n_intr
        for q in range(6):
            cols = base + 6 * np.arange(self.n_poses) + q
            h = rel_step * np.maximum(1.0, np.abs(x[cols]))
            xp, xm = x.copy(), x.copy()
            xp[cols] += h
            xm[cols] -= h
            diff = self.residual(xp) - self.residual(xm)
            for p in range(self.n_poses):
                rows = self.rows_of[p]
                J[rows, cols[p]] = diff[rows] / (2 * h[p])
        return J


def initial_intrinsics(image_size, order=9, theta_max=math.pi / 2):
    """Equidistant guess: principal point at the image centre and the FOV
    cone filling the shorter image side."""
    w, h = image_size
    k1 = 0.5 * min(w, h) / theta_max
    base = FisheyeIntrinsics(order=6, k=(k1,), mu=1.0, mv=1.0, u0=(w - 1) / 2.0, v0=(h - 1) / 2.0,
                             theta_max=theta_max)
    return promote(base, order)


def _check_geometry(transforms):
    if len(transforms) < 2:
        raise DegenerateGeometry("need boards in several orientations; got a single pose")


def fit_intrinsics(observations, order, image_size=None, initial=None, max_iter=500):
    """Jointly fit intrinsics and board poses by damped least squares.

    Either ``image_size`` (for the equidistant initial guess) or ``initial``
    intrinsics must be supplied. ``initial`` may be of a lower order; it is
    promoted. The reported residual is the root mean square over all pixel
    coordinates (u and v counted separately).
    """
    observations = list(observations)
    if len(observations) < 2:
        raise DegenerateGeometry("need boards in several orientations; got a single pose")
    if initial is None:
        if image_size is None:
            raise ValueError("give image_size or initial intrinsics")
        initial = initial_intrinsics(image_size, order)
    initial = promote(initial, order)
    if initial.mu != 1.0:
        initial = initial.canonical()
    n_corr = sum(len(o.pixels) for o in observations)
    if n_corr < 10 * initial.n_params:
        raise InsufficientData(f"{n_corr} correspondences < 10 x {initial.n_params} parameters")

    poses = []
    for o in observations:
        rays, ok = initial.unproject_points(o.pixels)
        if ok.sum() < MIN_CORRESPONDENCES:
            raise DegenerateGeometry(f"pose {o.pose_id}: detections fall outside the initial model")
        poses.append(pose_from_rays(o.board_points[ok], rays[ok]))
    _check_geometry(poses)

    problem = _BoardProblem(observations, order, initial.mu, initial.theta_max)
    x0 = np.concatenate([pack_intrinsics(initial), _pose_params(poses)])
    res = levenberg_marquardt(problem.residual, problem.jacobian, x0, max_iter=max_iter)
    xi, xp = problem.split(res.x)
    intr = unpack_intrinsics(xi, order, initial.mu, initial.theta_max)
    R, t = _poses_from_params(xp)
    r = problem.residual(res.x)
    return CalibrationReport(
        intrinsics=intr,
        per_pose_extrinsics=[RigidTransform(R[i], t[i]) for i in range(len(R))],
        rms_residual_px=float(np.sqrt(np.mean(r**2))),
        iterations=res.iterations,
        residuals=r,
    )


# -- model comparison --

def relative_improvement(before, after):
    """Fractional residual drop; a perfect fit has nothing left to improve."""
    if before <= 0.0:
        return 0.0
    return (before - after) / before


def recommend_order(residuals, threshold=DEFAULT_IMPROVEMENT_THRESHOLD):
    """Walk up the orders while each step improves the residual by >= threshold."""
    orders = sorted(residuals)
    best = orders[0]
    for lo, hi in zip(orders, orders[1:]):
        if relative_improvement(residuals[lo], residuals[hi]) < threshold:
            break
        best = hi
    return best


@dataclass
class ModelComparison:
    residuals: dict
    improvements: dict
    recommended: int
    reports: dict = field(repr=False)

    def table(self):
        lines = ["order  rms_px      improvement"]
        prev = None
        for order in sorted(self.residuals):
            imp = "" if prev is None else f"{100 * self.improvements[(prev, order)]:.2f}% vs {prev}"
            lines.append(f"{order:>5}  {self.residuals[order]:.6f}  {imp}")
            prev = order
        lines.append(f"recommended order: {self.recommended}")
        return "\n".join(lines)


def compare_models(observations, image_size=None, initial=None, threshold=DEFAULT_IMPROVEMENT_THRESHOLD):
    """Fit orders 6, 9 and 23, each warm-started from the previous fit.

    Warm starting makes the nested fits monotone: a richer model starts at
    the simpler optimum and only accepts cost decreases.
    """
    reports = {}
    start = initial
    for order in (6, 9, 23):
        if start is not None and start.order > order:
            start = None
        reports[order] = fit_intrinsics(observations, order, image_size=image_size, initial=start)
        start = reports[order].intrinsics
    residuals = {o: r.rms_residual_px for o, r in reports.items()}
    improvements = {(6, 9): relative_improvement(residuals[6], residuals[9]),
                    (9, 23): relative_improvement(residuals[9], residuals[23])}
    return ModelComparison(residuals, improvements, recommend_order(residuals, threshold), reports)


# -- extrinsic fit --

def _plane_arrays(observations):
    n = np.concatenate([np.repeat(o.normal[None], len(o.laser_points), 0) for o in observations])
    d = np.concatenate([np.full(len(o.laser_points), o.offset) for o in observations])
    p = np.concatenate([o.laser_points for o in observations])
    return n, d, p


def plane_residuals(transform, observations):
    n, d, p = _plane_arrays(observations)
    return np.einsum("ni,ni->n", n, transform.apply(p)) - d


def plane_jacobian(x, n, p):
    """Analytic Jacobian w.r.t. a left rotation increment and the translation."""
    q = p @ Rotation.from_rotvec(x[:3]).as_matrix().T
    return np.column_stack([np.cross(q, n), n])


def _retract_rigid(x, step):
    R = Rotation.from_rotvec(step[:3]) * Rotation.from_rotvec(x[:3])
    return np.concatenate([R.as_rotvec(), x[3:] + step[3:]])


def fit_extrinsics(observations, initial=None, max_iter=500):
    """Laser -> camera transform minimising point-to-plane distances.

    Returns ``(transform, rms_plane_distance_m)``. Starts from identity
    unless ``initial`` is given.
    """
    observations = list(observations)
    if len(observations) < 3:
        raise DegenerateNormals("need at least three planes")
    normals = np.array([o.normal for o in observations])
    s = np.linalg.svd(normals, compute_uv=False)
    if s[2] < 1e-3 * s[0]:
        raise DegenerateNormals("plane normals do not span 3D; translation is unobservable")
    n, d, p = _plane_arrays(observations)
    initial = initial or RigidTransform()

    def fun(x):
        return np.einsum("ni,ni->n", n, p @ Rotation.from_rotvec(x[:3]).as_matrix().T + x[3:]) - d

    x0 = np.concatenate([initial.as_rotvec(), initial.translation])
    res = levenberg_marquardt(fun, lambda x: plane_jacobian(x, n, p), x0, retract=_retract_rigid, max_iter=max_iter)
    T = RigidTransform.from_rotvec(res.x[:3], res.x[3:])
    return T, float(np.sqrt(np.mean(fun(res.x) ** 2)))
