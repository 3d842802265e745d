import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fishmap.camera import (
    FisheyeIntrinsics,
    PinholeCamera,
    parameter_names,
    project,
    project_points,
    rectify_perspective,
    unproject,
    unproject_points,
)
from fishmap.errors import EmptyOverlap, InvalidIntrinsics, OutOfFov, ZeroVector
from fishmap.scene_sim import marlin_intrinsics


def order23():
    return FisheyeIntrinsics(
        order=23, k=(180.0, -12.0, 1.5, -0.08, 0.002), mu=1.0, mv=1.01, u0=400.3, v0=298.7,
        asym=(0.4, -0.1, 0.01, 0.3, -0.2, 0.1, 0.05, 0.3, -0.05, 0.004, 0.2, 0.1, -0.1, 0.05),
    )


MODELS = {
    6: FisheyeIntrinsics(order=6, k=(190.0, -8.0), mu=1.0, mv=0.98, u0=380.0, v0=290.0),
    9: marlin_intrinsics(),
    23: order23(),
}


def reference_projection(p, intr):
    """Straight-line transcription of the model for a single point."""
    x, y, z = p
    theta = math.atan2(math.hypot(x, y), z)
    phi = math.atan2(y, x)
    r = sum(c * theta ** (2 * i + 1) for i, c in enumerate(intr.k))
    dr = dt = 0.0
    if intr.order == 23:
        l1, l2, l3, i1, i2, i3, i4, m1, m2, m3, j1, j2, j3, j4 = intr.asym
        dr = (l1 * theta + l2 * theta**3 + l3 * theta**5) * (
            i1 * math.cos(phi) + i2 * math.sin(phi) + i3 * math.cos(2 * phi) + i4 * math.sin(2 * phi))
        dt = (m1 * theta + m2 * theta**3 + m3 * theta**5) * (
            j1 * math.cos(phi) + j2 * math.sin(phi) + j3 * math.cos(2 * phi) + j4 * math.sin(2 * phi))
    ur = (r + dr) * math.cos(phi) - dt * math.sin(phi)
    vr = (r + dr) * math.sin(phi) + dt * math.cos(phi)
    return intr.u0 + intr.mu * ur, intr.v0 + intr.mv * vr


def random_rays(rng, n, theta_max):
    theta = np.arccos(rng.uniform(math.cos(theta_max), 1.0, n))
    phi = rng.uniform(-math.pi, math.pi, n)
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], -1)


def test_parameter_counts_match_order():
    assert len(parameter_names(6)) == 6
    assert len(parameter_names(9)) == 9
    assert len(parameter_names(23)) == 23


@pytest.mark.parametrize("order", [6, 9, 23])
def test_axis_ray_hits_principal_point(order):
    intr = MODELS[order]
    assert np.allclose(project([0, 0, 1], intr), (intr.u0, intr.v0), atol=1e-12)
    assert np.allclose(unproject((intr.u0, intr.v0), intr), (0, 0, 1), atol=1e-12)


def test_pure_equidistant_example():
    intr = FisheyeIntrinsics(order=9, k=(200.0,), mu=1, mv=1, u0=512, v0=512)
    uv = project([math.sin(0.5), 0.0, math.cos(0.5)], intr)
    assert uv == pytest.approx((612.0, 512.0), abs=1e-12)


@pytest.mark.parametrize("order", [6, 9, 23])
def test_matches_reference_transcription(order):
    intr = MODELS[order]
    rays = random_rays(np.random.default_rng(order), 200, intr.theta_max)
    uv, ok = project_points(rays, intr)
    assert ok.all()
    ref = np.array([reference_projection(r, intr) for r in rays])
    assert np.max(np.abs(uv - ref)) < 1e-9


@pytest.mark.parametrize("order", [6, 9, 23])
def test_round_trip_10k_rays(order):
    intr = MODELS[order]
    rays = random_rays(np.random.default_rng(10 + order), 10_000, intr.theta_max * 0.999)
    uv, ok = project_points(rays, intr)
    back, ok2 = unproject_points(uv, intr)
    assert ok.all() and ok2.all()
    assert np.max(np.linalg.norm(back - rays, axis=1)) < 1e-7


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, math.pi / 2 * 0.999), st.floats(-math.pi, math.pi), st.sampled_from([6, 9, 23]),
       st.floats(0.1, 100.0))
def test_round_trip_property(theta, phi, order, scale):
    intr = MODELS[order]
    p = scale * np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    back = unproject(project(p, intr), intr)
    assert np.linalg.norm(back - p / np.linalg.norm(p)) < 1e-7


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.5), st.floats(0.0, 1.5), st.floats(-math.pi, math.pi), st.sampled_from([6, 9]))
def test_radius_monotone_in_incidence(t1, t2, phi, order):
    intr = MODELS[order]
    a, b = sorted((t1, t2))
    ray = lambda t: [math.sin(t) * math.cos(phi), math.sin(t) * math.sin(phi), math.cos(t)]  # noqa: E731
    ra = np.hypot(*(project(ray(a), intr) - [intr.u0, intr.v0]) / [intr.mu, intr.mv])
    rb = np.hypot(*(project(ray(b), intr) - [intr.u0, intr.v0]) / [intr.mu, intr.mv])
    assert ra <= rb + 1e-9


def test_zero_vector_and_out_of_fov():
    intr = marlin_intrinsics()
    with pytest.raises(ZeroVector):
        project([0, 0, 0], intr)
    with pytest.raises(OutOfFov):
        project([1.0, 0.0, -0.2], intr)
    with pytest.raises(OutOfFov):
        unproject((intr.u0 + intr.max_radius + 1.0, intr.v0), intr)


def test_invalid_intrinsics_rejected():
    with pytest.raises(InvalidIntrinsics):
        FisheyeIntrinsics(order=7, k=(100.0,), mu=1, mv=1, u0=0, v0=0)
    with pytest.raises(InvalidIntrinsics):
        FisheyeIntrinsics(order=6, k=(100.0, 0, 1.0), mu=1, mv=1, u0=0, v0=0)
    with pytest.raises(InvalidIntrinsics):
        FisheyeIntrinsics(order=9, k=(100.0, -200.0), mu=1, mv=1, u0=0, v0=0)  # radius folds back
    with pytest.raises(InvalidIntrinsics):
        FisheyeIntrinsics(order=9, k=(100.0,), mu=0, mv=1, u0=0, v0=0)


@pytest.mark.parametrize("order", [9, 23])
def test_canonical_gauge_preserves_projection(order):
    intr = MODELS[order]
    from dataclasses import replace

    s = 1.7
    asym = list(intr.asym)
    for i in (0, 1, 2, 7, 8, 9):
        if asym:
            asym[i] /= s
    scaled = replace(intr, k=tuple(c / s for c in intr.k), mu=intr.mu * s, mv=intr.mv * s, asym=tuple(asym))
    rays = random_rays(np.random.default_rng(3), 50, 1.5)
    a, _ = project_points(rays, intr)
    b, _ = project_points(rays, scaled)
    c, _ = project_points(rays, scaled.canonical())
    assert np.allclose(a, b, atol=1e-9) and np.allclose(a, c, atol=1e-9)
    assert scaled.canonical().mu == 1.0


def _star_image(intr, size=401, spokes=12):
    """Fish-eye render of radial spokes: a pixel is dark when its azimuth is near a spoke."""
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    ang = np.arctan2(ys - intr.v0, xs - intr.u0)
    d = np.abs(np.angle(np.exp(1j * spokes * ang))) / spokes
    return np.where(d < 0.02, 0, 255).astype(np.uint8)


def test_rectified_spokes_stay_radial():
    intr = FisheyeIntrinsics(order=9, k=(127.0,), mu=1, mv=1, u0=200, v0=200)
    img = _star_image(intr)
    virt = PinholeCamera(focal=100.0, width=201, height=201)
    out = rectify_perspective(img, intr, virt)
    ys, xs = np.nonzero(out < 128)
    r = np.hypot(xs - virt.cx, ys - virt.cy)
    sel = r > 15
    ang = np.arctan2(ys[sel] - virt.cy, xs[sel] - virt.cx)
    d = np.abs(np.angle(np.exp(1j * 12 * ang))) / 12
    # dark pixels keep the spoke azimuths
    assert np.max(d) < 0.04


def test_rectified_checkerboard_edges_are_straight():
    intr = FisheyeIntrinsics(order=9, k=(180.0, -6.0), mu=1, mv=1, u0=300, v0=300)
    virt = PinholeCamera(focal=250.0, width=301, height=301)
    # fish-eye render of a plane z=1 with a checker pattern
    ys, xs = np.mgrid[0:601, 0:601].astype(float)
    rays, ok = unproject_points(np.stack([xs, ys], -1), intr)
    with np.errstate(invalid="ignore", divide="ignore"):
        px, py = rays[..., 0] / rays[..., 2], rays[..., 1] / rays[..., 2]
        board = (np.floor(px / 0.2) + np.floor(py / 0.2)) % 2
    img = np.where(ok & (rays[..., 2] > 0.2) & (board == 1), 255, 0).astype(np.uint8)
    out = rectify_perspective(img, intr, virt).astype(float)
    # column edges: horizontal gradient peaks should form vertical lines at x = cx + f * 0.2 k
    for k in (-2, -1, 1, 2):
        x_line = virt.cx + virt.focal * 0.2 * k
        rows = np.arange(20, 281)
        found = []
        for r in rows:
            lo = int(x_line) - 6
            seg = out[r, lo:lo + 13]
            g = np.abs(np.diff(seg))
            if g.max() > 100:
                found.append(lo + np.argmax(g) + 0.5)
        found = np.array(found)
        fit = np.polyfit(rows[: len(found)], found, 1) if len(found) > 10 else None
        assert fit is not None
        assert abs(fit[0]) < 1e-2
        assert np.max(np.abs(found - x_line)) < 1.0


def test_rectification_looking_sideways_is_mostly_black():
    intr = FisheyeIntrinsics(order=9, k=(127.0,), mu=1, mv=1, u0=200, v0=200)
    img = np.full((401, 401), 200, np.uint8)
    virt = PinholeCamera(focal=100.0, width=101, height=101)
    turn = np.array([[0, 0, 1.0], [0, 1, 0], [-1, 0, 0]])  # virtual axis onto the fish-eye x axis
    out = rectify_perspective(img, intr, virt, turn)
    assert np.mean(out == 0) > 0.45
    behind = np.array([[-1.0, 0, 0], [0, 1, 0], [0, 0, -1]])
    with pytest.raises(EmptyOverlap):
        rectify_perspective(img, intr, virt, behind)
