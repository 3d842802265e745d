"""Helpers shared by the test modules."""

import numpy as np

from fishmap.camera import project_points
from fishmap.georef import WorldProfile, interpolate_pose, profile_to_world

N_BEAMS = 1080

# criterion number -> (passed, detail), filled by the acceptance tests
ACCEPTANCE = {}
# fixture name -> seconds spent building it
TIMINGS = {}


def report(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    return bool(passed)


def plane_profiles(n_profiles, n_beams=N_BEAMS, spacing=0.139, valid=None):
    """Profiles sweeping the plane z = 0 along x; beams spread along y."""
    out = []
    y = np.linspace(-8.0, 8.0, n_beams)
    for i in range(n_profiles):
        pts = np.column_stack([np.full(n_beams, i * spacing), y, np.zeros(n_beams)])
        ok = np.ones(n_beams, bool) if valid is None else valid[i].copy()
        pts[~ok] = np.nan
        out.append(WorldProfile(i * 0.1, pts, ok))
    return out


def world_profiles(run):
    return [profile_to_world(p, interpolate_pose(run.trajectory, p.t), run.spec.rig) for p in run.profiles]


def pixel_shift(run, hits, image_id, pixels):
    """Distance between sampled pixels and the true projections of the
    oracle hit points into the same frames."""
    out = np.empty(len(hits))
    for m in np.unique(image_id):
        k = image_id == m
        uv, _ = project_points(run.oracle.camera_poses[m].inverse().apply(hits[k]), run.spec.intrinsics)
        out[k] = np.linalg.norm(uv - pixels[k], axis=1)
    return out


def flat_points(run):
    """Valid world points with their (profile, beam) indices."""
    pts, pi, bi = [], [], []
    for i, w in enumerate(world_profiles(run)):
        pts.append(w.points[w.valid])
        pi.append(np.full(w.valid.sum(), i))
        bi.append(np.flatnonzero(w.valid))
    return np.concatenate(pts), np.concatenate(pi), np.concatenate(bi)


def rasterize_facade(obj_path, scene, camera_to_world, intr, size, facade="facade_left"):
    """Render the textured model's facade triangles through a camera.

    The facade is the plane of the named scene surface. Each pixel whose
    oracle ray lands on that facade is intersected with the plane, located
    in a model triangle and coloured from the atlas page at the
    interpolated texture coordinate. Returns ``(model_rgb, oracle_rgb)``
    for the pixels that landed on a textured triangle.
    """
    import os

    from PIL import Image
    from scipy.spatial import cKDTree

    from fishmap.scene_sim import render
    from fishmap.texturer import read_mtl, read_obj

    obj = read_obj(obj_path)
    mtl = read_mtl(os.path.join(os.path.dirname(obj_path), obj.mtllib))
    surf = scene.surfaces[scene.index(facade)]
    n = surf.normal
    d0 = float(n @ np.asarray(surf.origin, dtype=np.float64))
    tri = obj.vertices[obj.faces]
    on_plane = np.all(np.abs(tri @ n - d0) < 1e-6, axis=1) & (obj.face_uvs[:, 0] >= 0)
    faces = np.flatnonzero(on_plane)
    # 2-D frame in the plane
    e1 = np.asarray(surf.edge_u, dtype=np.float64)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    t2 = np.stack([tri[faces] @ e1, tri[faces] @ e2], axis=-1)  # (F, 3, 2)
    tree = cKDTree(t2.mean(axis=1))

    oracle = render(scene, camera_to_world, intr, size)
    mask = oracle.surface == scene.index(facade)
    hits = oracle.points[mask]
    q = np.stack([hits @ e1, hits @ e2], axis=-1)
    k = min(12, len(faces))
    _, cand = tree.query(q, k=k)
    cand = cand.reshape(len(q), k)
    a, b, c = (t2[cand][..., i, :] for i in range(3))
    v0, v1, v2 = b - a, c - a, q[:, None, :] - a
    den = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        wb = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / den
        wc = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / den
    inside = (wb >= -1e-9) & (wc >= -1e-9) & (wb + wc <= 1 + 1e-9)
    found = inside.any(axis=1)
    first = np.argmax(inside, axis=1)
    rows = np.flatnonzero(found)
    f = faces[cand[rows, first[rows]]]
    wb, wc = wb[rows, first[rows]], wc[rows, first[rows]]
    uv = obj.uvs[obj.face_uvs[f]]  # (M, 3, 2)
    uvp = (1 - wb - wc)[:, None] * uv[:, 0] + wb[:, None] * uv[:, 1] + wc[:, None] * uv[:, 2]

    model = np.zeros((len(rows), 3))
    pages = {}
    materials = np.array(obj.face_material, dtype=object)[f]
    for name in np.unique(materials):
        if name not in pages:
            pages[name] = np.asarray(Image.open(os.path.join(os.path.dirname(obj_path), mtl[name]["map_Kd"])))
        img = pages[name]
        H, W = img.shape[:2]
        sel = materials == name
        x = np.clip(np.round(uvp[sel, 0] * W - 0.5).astype(int), 0, W - 1)
        y = np.clip(np.round((1 - uvp[sel, 1]) * H - 0.5).astype(int), 0, H - 1)
        model[sel] = img[y, x, :3]
    return model, oracle.image[mask][rows].astype(np.float64)
