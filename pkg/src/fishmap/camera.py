"""Generic radial fish-eye camera model (equidistant family).

The image radius of a ray at incidence angle ``theta`` is the odd polynomial

    r(theta) = k1*theta + k2*theta**3 + k3*theta**5 + k4*theta**7 + k5*theta**9

Order 6 keeps {k1, k2}, order 9 all five terms, and order 23 adds
asymmetric radial and tangential terms, each an odd cubic in theta times a
two-harmonic Fourier series in the azimuth phi:

    dr(theta, phi) = (l1*theta + l2*theta**3 + l3*theta**5)
                     * (i1*cos(phi) + i2*sin(phi) + i3*cos(2phi) + i4*sin(2phi))
    dt(theta, phi) = (m1*theta + m2*theta**3 + m3*theta**5)
                     * (j1*cos(phi) + j2*sin(phi) + j3*cos(2phi) + j4*sin(2phi))

The distorted image-plane point is ``(r + dr) * e_r(phi) + dt * e_phi(phi)``
which is mapped to pixels by ``u = u0 + mu*x``, ``v = v0 + mv*y``.

Camera frame: +z is the optical axis, +x points to image right, +y down.
"""

from dataclasses import dataclass, replace
from functools import cached_property
import math

import numpy as np

from .errors import EmptyOverlap, InvalidIntrinsics, NoConvergence, OutOfFov, ZeroVector
from .imaging import bilinear, round_half_up

ORDERS = (6, 9, 23)
N_ASYM = 14

_NEWTON_MAX_ITER = 50
_NEWTON_TOL = 1e-12
_FIXED_POINT_TOL = 1e-13


def parameter_names(order):
    names = ["k1", "k2"]
    if order >= 9:
        names += ["k3", "k4", "k5"]
    names += ["mu", "mv", "u0", "v0"]
    if order == 23:
        names += [f"l{i}" for i in (1, 2, 3)] + [f"i{i}" for i in (1, 2, 3, 4)]
        names += [f"m{i}" for i in (1, 2, 3)] + [f"j{i}" for i in (1, 2, 3, 4)]
    return names


@dataclass(frozen=True)
class FisheyeIntrinsics:
    """Parameters of the generic radial model.

    ``k`` always holds five coefficients; for order 6 the last three must be
    zero. ``asym`` holds the 14 asymmetric coefficients (order 23 only) laid
    out as ``l1..l3, i1..i4, m1..m3, j1..j4``.
    """

    order: int
    k: tuple
    mu: float
    mv: float
    u0: float
    v0: float
    asym: tuple = ()
    theta_max: float = math.pi / 2

    def __post_init__(self):
        if self.order not in ORDERS:
            raise InvalidIntrinsics(f"order must be one of {ORDERS}, got {self.order}")
        k = tuple(float(c) for c in self.k)
        if len(k) > 5:
            raise InvalidIntrinsics("at most five radial coefficients")
        k = k + (0.0,) * (5 - len(k))
        if self.order == 6 and any(k[2:]):
            raise InvalidIntrinsics("order 6 fixes k3..k5 to zero")
        asym = tuple(float(c) for c in self.asym)
        if self.order == 23:
            if not asym:
                asym = (0.0,) * N_ASYM
            if len(asym) != N_ASYM:
                raise InvalidIntrinsics(f"order 23 needs {N_ASYM} asymmetric terms")
        elif asym:
            raise InvalidIntrinsics("asymmetric terms only exist at order 23")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "asym", asym)
        for name in ("mu", "mv", "u0", "v0", "theta_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.mu > 0 and self.mv > 0):
            raise InvalidIntrinsics("mu and mv must be positive")
        if not (0.0 < self.theta_max <= math.pi):
            raise InvalidIntrinsics("theta_max must lie in (0, pi]")
        theta = np.linspace(0.0, self.theta_max, 4097)
        if not (np.all(np.diff(self.radius(theta)) > 0) and np.all(self.radius_derivative(theta) > 0)):
            raise InvalidIntrinsics("r(theta) is not strictly increasing on [0, theta_max]")

    @classmethod
    def equidistant(cls, focal, u0, v0, theta_max=math.pi / 2, order=9):
        return cls(order=order, k=(focal,), mu=1.0, mv=1.0, u0=u0, v0=v0, theta_max=theta_max)

    @classmethod
    def unchecked(cls, order, k, mu, mv, u0, v0, asym=(), theta_max=math.pi):
        """Build without validation; for optimiser inner loops only."""
        obj = object.__new__(cls)
        for name, value in (("order", order), ("k", tuple(k)), ("mu", mu), ("mv", mv), ("u0", u0),
                            ("v0", v0), ("asym", tuple(asym)), ("theta_max", theta_max)):
            object.__setattr__(obj, name, value)
        return obj

    @property
    def n_params(self):
        return len(parameter_names(self.order))

    def radius(self, theta):
        k1, k2, k3, k4, k5 = self.k
        t2 = np.square(theta)
        return theta * (k1 + t2 * (k2 + t2 * (k3 + t2 * (k4 + t2 * k5))))

    def radius_derivative(self, theta):
        k1, k2, k3, k4, k5 = self.k
        t2 = np.square(theta)
        return k1 + t2 * (3 * k2 + t2 * (5 * k3 + t2 * (7 * k4 + t2 * 9 * k5)))

    @cached_property
    def max_radius(self):
        return float(self.radius(self.theta_max))

    def asymmetric_offsets(self, theta, phi):
        """Radial and tangential offsets (dr, dt); zero below order 23."""
        if self.order != 23:
            zero = np.zeros(np.broadcast(theta, phi).shape)
            return zero, zero
        a = self.asym
        t2 = np.square(theta)
        c1, s1 = np.cos(phi), np.sin(phi)
        c2, s2 = np.cos(2 * phi), np.sin(2 * phi)
        radial = theta * (a[0] + t2 * (a[1] + t2 * a[2]))
        radial = radial * (a[3] * c1 + a[4] * s1 + a[5] * c2 + a[6] * s2)
        tangential = theta * (a[7] + t2 * (a[8] + t2 * a[9]))
        tangential = tangential * (a[10] * c1 + a[11] * s1 + a[12] * c2 + a[13] * s2)
        return radial, tangential

    def canonical(self):
        """Equivalent parameters in the gauge ``mu == 1``.

        ``(k, l, m, mu, mv)`` and ``(s*k, s*l, s*m, mu/s, mv/s)`` describe the
        same projection, so fitted models are only comparable in one gauge.
        """
        s = self.mu
        asym = list(self.asym)
        if asym:
            for i in (0, 1, 2, 7, 8, 9):
                asym[i] *= s
        return replace(self, k=tuple(c * s for c in self.k), mu=1.0, mv=self.mv / s, asym=tuple(asym))

    def project_points(self, points):
        return project_points(points, self)

    def unproject_points(self, uv):
        return unproject_points(uv, self)


def _angles(points):
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    rho = np.hypot(x, y)
    return np.arctan2(rho, z), np.arctan2(y, x), (rho == 0) & (z == 0)


def project_points(points, intr):
    """Vectorised projection of camera-frame points.

    Returns ``(uv, in_fov)``; ``uv`` is NaN where ``in_fov`` is False (zero
    vectors and rays beyond ``theta_max``).
    """
    p = np.asarray(points, dtype=np.float64)
    theta, phi, zero = _angles(p)
    radius = intr.radius(theta)
    dr, dt = intr.asymmetric_offsets(theta, phi)
    radius = radius + dr
    c, s = np.cos(phi), np.sin(phi)
    x = radius * c - dt * s
    y = radius * s + dt * c
    uv = np.stack([intr.u0 + intr.mu * x, intr.v0 + intr.mv * y], axis=-1)
    in_fov = ~zero & (theta <= intr.theta_max)
    uv[~in_fov] = np.nan
    return uv, in_fov


def project(point, intr):
    """Project one camera-frame point to pixel coordinates ``(u, v)``."""
    p = np.asarray(point, dtype=np.float64)
    if not np.any(p):
        raise ZeroVector("cannot project the zero vector")
    uv, ok = project_points(p[None], intr)
    if not ok[0]:
        raise OutOfFov(f"incidence angle exceeds theta_max={intr.theta_max:.6g}")
    return uv[0]


def _invert_radius(rho, intr):
    """Newton solve of r(theta) = rho for monotone r; returns (theta, converged)."""
    theta = rho / intr.k[0]
    active = np.ones(theta.shape, dtype=bool)
    for _ in range(_NEWTON_MAX_ITER):
        if not active.any():
            break
        th = theta[active]
        step = (intr.radius(th) - rho[active]) / intr.radius_derivative(th)
        theta[active] = th - step
        active[active] = ~(np.abs(step) < _NEWTON_TOL)
    return theta, ~active


def _unproject(uv, intr):
    uv = np.asarray(uv, dtype=np.float64)
    shape = uv.shape[:-1]
    uv = uv.reshape(-1, 2)
    mx = (uv[:, 0] - intr.u0) / intr.mu
    my = (uv[:, 1] - intr.v0) / intr.mv
    rho = np.hypot(mx, my)
    phi = np.arctan2(my, mx)
    inside = rho <= intr.max_radius
    theta, converged = _invert_radius(np.minimum(rho, intr.max_radius), intr)
    if intr.order == 23:
        done = np.zeros_like(converged)
        for _ in range(_NEWTON_MAX_ITER):
            dr, dt = intr.asymmetric_offsets(theta, phi)
            c, s = np.cos(phi), np.sin(phi)
            sx = mx - dr * c + dt * s
            sy = my - dr * s - dt * c
            sym = np.hypot(sx, sy)
            inside = sym <= intr.max_radius
            new_phi = np.arctan2(sy, sx)
            new_theta, conv = _invert_radius(np.minimum(sym, intr.max_radius), intr)
            dphi = np.abs(np.angle(np.exp(1j * (new_phi - phi))))
            done = (np.abs(new_theta - theta) < _FIXED_POINT_TOL) & (dphi < _FIXED_POINT_TOL)
            converged = converged & conv
            theta, phi = new_theta, new_phi
            if done.all():
                break
        converged = converged & done
    ok = inside & converged
    st = np.sin(theta)
    rays = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
    rays[~ok] = np.nan
    return rays.reshape(shape + (3,)), ok.reshape(shape), inside.reshape(shape)


def unproject_points(uv, intr):
    """Vectorised back-projection of pixels to unit rays.

    Returns ``(rays, ok)``. ``ok`` is False outside the FOV disc or where
    the iteration did not converge; such rays are NaN.
    """
    rays, ok, _ = _unproject(uv, intr)
    return rays, ok


def unproject(px, intr):
    """Back-project one pixel to a unit ray in the camera frame."""
    rays, ok, inside = _unproject(np.asarray(px, dtype=np.float64)[None], intr)
    if not inside[0]:
        raise OutOfFov("pixel lies outside the image circle")
    if not ok[0]:
        raise NoConvergence("radial polynomial inversion did not converge")
    return rays[0]


@dataclass(frozen=True)
class PinholeCamera:
    """Ideal perspective camera, used as a rectification target and for the
    pinhole variant of the board-pose solve."""

    focal: float
    width: int
    height: int
    cx: float = None
    cy: float = None

    def __post_init__(self):
        if self.cx is None:
            object.__setattr__(self, "cx", (self.width - 1) / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", (self.height - 1) / 2.0)

    def project_points(self, points):
        p = np.asarray(points, dtype=np.float64)
        ok = p[..., 2] > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack(
                [self.cx + self.focal * p[..., 0] / p[..., 2], self.cy + self.focal * p[..., 1] / p[..., 2]],
                axis=-1,
            )
        uv[~ok] = np.nan
        return uv, ok

    def unproject_points(self, uv):
        uv = np.asarray(uv, dtype=np.float64)
        d = np.stack(
            [(uv[..., 0] - self.cx) / self.focal, (uv[..., 1] - self.cy) / self.focal, np.ones(uv.shape[:-1])],
            axis=-1,
        )
        return d / np.linalg.norm(d, axis=-1, keepdims=True), np.ones(uv.shape[:-1], dtype=bool)

    def pixel_rays(self):
        ys, xs = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return self.unproject_points(np.stack([xs, ys], axis=-1))[0]


def rectify_perspective(image, intr, virt, orientation=None):
    """Resample a fish-eye image into a virtual perspective view.

    ``virt`` is a :class:`PinholeCamera`; ``orientation`` (3x3) rotates
    virtual-camera rays into the fish-eye camera frame. Pixels whose ray is
    outside the fish-eye FOV or image are black.
    """
    img = np.asarray(image)
    h, w = img.shape[:2]
    rays = virt.pixel_rays()
    if orientation is not None:
        rays = rays @ np.asarray(orientation, dtype=np.float64).T
    uv, ok = project_points(rays, intr)
    ok &= (uv[..., 0] >= 0) & (uv[..., 1] >= 0) & (uv[..., 0] <= w - 1) & (uv[..., 1] <= h - 1)
    if not ok.any():
        raise EmptyOverlap("no virtual ray lands inside the fish-eye image")
    channels = img.shape[2:] if img.ndim == 3 else ()
    out = np.zeros((virt.height, virt.width) + channels, dtype=img.dtype)
    values = bilinear(img, uv[ok])
    if img.ndim == 2:
        values = values[..., 0]
    out[ok] = round_half_up(values) if img.dtype == np.uint8 else values
    return out
