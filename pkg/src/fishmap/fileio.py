"""Readers and writers for the on-disk formats.

* calibration and calibration observations: JSON, floats written with
  shortest round-trip repr so values reload bit-for-bit;
* pose trace: text lines ``t x y z qx qy qz qw``;
* profile stream: binary little-endian (16-byte header, then records of
  ``f8 t`` followed by ``N x {f4 theta, f4 range, u1 valid}``) or text;
* image stream: a directory of PNG frames indexed by ``images.txt``
  (lines ``t filename``);
* point clouds and meshes: PLY (binary little-endian or ASCII).
"""

import json
import os
import struct

import numpy as np
from PIL import Image

from .calibration import BoardObservation, PlaneLaserObservation
from .camera import FisheyeIntrinsics
from .errors import DecodeError
from .georef import LaserProfile, RigidTransform, StampedImage, Trajectory

PROFILE_MAGIC = b"LPRF"
PROFILE_VERSION = 1
PROFILE_HEADER = struct.Struct("<4sIII")
BEAM_DTYPE = np.dtype([("theta", "<f4"), ("range", "<f4"), ("valid", "u1")])


def _record_dtype(n_beams):
    return np.dtype([("t", "<f8"), ("beams", BEAM_DTYPE, (n_beams,))])


# -- calibration --

def intrinsics_to_dict(intr):
    return {"order": intr.order, "k": list(intr.k), "mu": intr.mu, "mv": intr.mv, "u0": intr.u0,
            "v0": intr.v0, "asym": list(intr.asym), "theta_max": intr.theta_max}


def intrinsics_from_dict(d):
    return FisheyeIntrinsics(order=int(d["order"]), k=tuple(d["k"]), mu=d["mu"], mv=d["mv"], u0=d["u0"],
                             v0=d["v0"], asym=tuple(d.get("asym", ())), theta_max=d.get("theta_max", np.pi / 2))


def transform_to_dict(T):
    return {"rotation": T.rotation.tolist(), "translation": T.translation.tolist()}


def transform_from_dict(d):
    return RigidTransform(np.array(d["rotation"], dtype=np.float64), np.array(d["translation"], dtype=np.float64))


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid JSON: {exc.msg}", path, exc.pos) from exc


def _dump_json(obj, path):
    with open(path, "w", newline="\n") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def write_calibration(path, intrinsics=None, laser_to_camera=None, image_size=None, extra=None):
    doc = {}
    if intrinsics is not None:
        doc["intrinsics"] = intrinsics_to_dict(intrinsics)
    if laser_to_camera is not None:
        doc["laser_to_camera"] = transform_to_dict(laser_to_camera)
    if image_size is not None:
        doc["image_size"] = list(image_size)
    if extra:
        doc.update(extra)
    _dump_json(doc, path)


def read_calibration(path):
    """Returns a dict with optional ``intrinsics``, ``laser_to_camera`` and ``image_size``."""
    doc = _load_json(path)
    out = dict(doc)
    try:
        if "intrinsics" in doc:
            out["intrinsics"] = intrinsics_from_dict(doc["intrinsics"])
        if "laser_to_camera" in doc:
            out["laser_to_camera"] = transform_from_dict(doc["laser_to_camera"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"malformed calibration: {exc}", path) from exc
    return out


def write_board_observations(path, observations, image_size=None):
    doc = {"boards": [{"pose_id": o.pose_id, "board_points": o.board_points.tolist(),
                       "pixels": o.pixels.tolist()} for o in observations]}
    if image_size is not None:
        doc["image_size"] = list(image_size)
    _dump_json(doc, path)


def read_board_observations(path):
    """Returns ``(observations, image_size or None)``."""
    doc = _load_json(path)
    try:
        obs = [BoardObservation(b["pose_id"], b["board_points"], b["pixels"]) for b in doc["boards"]]
    except (KeyError, TypeError) as exc:
        raise DecodeError(f"malformed board observations: {exc}", path) from exc
    size = doc.get("image_size")
    return obs, (tuple(size) if size else None)


def write_plane_observations(path, observations):
    _dump_json({"planes": [{"normal": o.normal.tolist(), "offset": o.offset,
                            "laser_points": o.laser_points.tolist()} for o in observations]}, path)


def read_plane_observations(path):
    doc = _load_json(path)
    try:
        return [PlaneLaserObservation(p["normal"], p["offset"], p["laser_points"]) for p in doc["planes"]]
    except (KeyError, TypeError) as exc:
        raise DecodeError(f"malformed plane observations: {exc}", path) from exc


# -- pose trace --

def write_poses(path, trajectory):
    with open(path, "w", newline="\n") as f:
        for t, p, q in zip(trajectory.times, trajectory.positions, trajectory.quats):
            f.write(" ".join(repr(float(v)) for v in (t, *p, *q)) + "\n")


def read_poses(path):
    rows = []
    with open(path, "rb") as f:
        offset = 0
        for line in f:
            text = line.decode("ascii", errors="replace").strip()
            if text and not text.startswith("#"):
                parts = text.split()
                if len(parts) != 8:
                    raise DecodeError(f"pose line needs 8 fields, got {len(parts)}", path, offset)
                try:
                    rows.append([float(v) for v in parts])
                except ValueError as exc:
                    raise DecodeError(f"bad number in pose line: {exc}", path, offset) from exc
            offset += len(line)
    if not rows:
        raise DecodeError("pose trace is empty", path)
    a = np.array(rows)
    return Trajectory(a[:, 0], a[:, 1:4], a[:, 4:8])


# -- profiles --

def write_profiles(path, profiles):
    """Binary profile stream. Invalid beams are stored with range 0."""
    profiles = list(profiles)
    n = len(profiles[0]) if profiles else 0
    rec = np.zeros(len(profiles), dtype=_record_dtype(n))
    for i, p in enumerate(profiles):
        if len(p) != n:
            raise ValueError("all profiles must have the same beam count")
        rec[i]["t"] = p.t
        rec[i]["beams"]["theta"] = p.theta
        rec[i]["beams"]["range"] = np.where(p.valid, p.range, 0.0)
        rec[i]["beams"]["valid"] = p.valid
    with open(path, "wb") as f:
        f.write(PROFILE_HEADER.pack(PROFILE_MAGIC, PROFILE_VERSION, n, 0))
        f.write(rec.tobytes())


def read_profiles(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < PROFILE_HEADER.size:
        raise DecodeError("truncated profile header", path, 0)
    magic, version, n, _ = PROFILE_HEADER.unpack_from(data)
    if magic != PROFILE_MAGIC:
        raise DecodeError(f"bad magic {magic!r}", path, 0)
    if version != PROFILE_VERSION:
        raise DecodeError(f"unsupported profile version {version}", path, 4)
    dt = _record_dtype(n)
    body = len(data) - PROFILE_HEADER.size
    if body % dt.itemsize:
        whole = body // dt.itemsize
        raise DecodeError("truncated profile record", path, PROFILE_HEADER.size + whole * dt.itemsize)
    rec = np.frombuffer(data, dtype=dt, offset=PROFILE_HEADER.size)
    out = []
    for r in rec:
        b = r["beams"]
        valid = b["valid"].astype(bool)
        out.append(LaserProfile(float(r["t"]), b["theta"].astype(np.float64),
                                np.where(valid, b["range"].astype(np.float64), 0.0), valid))
    return out


def write_profiles_text(path, profiles):
    """One line per profile: ``t n theta_0 range_0 valid_0 ...``."""
    with open(path, "w", newline="\n") as f:
        for p in profiles:
            fields = [repr(float(p.t)), str(len(p))]
            for th, r, v in zip(p.theta, p.range, p.valid):
                fields += [repr(float(th)), repr(float(r if v else 0.0)), "1" if v else "0"]
            f.write(" ".join(fields) + "\n")


def read_profiles_text(path):
    out = []
    with open(path, "rb") as f:
        offset = 0
        for line in f:
            parts = line.split()
            if parts:
                try:
                    t, n = float(parts[0]), int(parts[1])
                    vals = np.array(parts[2:], dtype=np.float64).reshape(n, 3)
                except (ValueError, IndexError) as exc:
                    raise DecodeError(f"malformed profile line: {exc}", path, offset) from exc
                valid = vals[:, 2] != 0
                out.append(LaserProfile(t, vals[:, 0], np.where(valid, vals[:, 1], 0.0), valid))
            offset += len(line)
    return out


# -- images --

IMAGE_INDEX = "images.txt"


def write_images(directory, images):
    os.makedirs(directory, exist_ok=True)
    lines = []
    for im in images:
        name = f"frame_{im.id:06d}.png"
        Image.fromarray(np.asarray(im.image, dtype=np.uint8)).save(os.path.join(directory, name))
        lines.append(f"{im.t!r} {name}")
    with open(os.path.join(directory, IMAGE_INDEX), "w", newline="\n") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def read_image_index(directory):
    """``[(t, path)]`` from an image directory's index."""
    path = os.path.join(directory, IMAGE_INDEX)
    out = []
    with open(path, "rb") as f:
        offset = 0
        for line in f:
            parts = line.decode("utf-8").split()
            if parts:
                if len(parts) != 2:
                    raise DecodeError("image index lines are 't filename'", path, offset)
                try:
                    out.append((float(parts[0]), os.path.join(directory, parts[1])))
                except ValueError as exc:
                    raise DecodeError(f"bad timestamp: {exc}", path, offset) from exc
            offset += len(line)
    return out


def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def read_images(directory):
    return [StampedImage(t, load_image(p), i) for i, (t, p) in enumerate(read_image_index(directory))]


# -- PLY --

_PLY_VERTEX = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
_PLY_TYPES = {"char": "i1", "uchar": "u1", "short": "<i2", "ushort": "<u2", "int": "<i4", "uint": "<u4",
              "float": "<f4", "double": "<f8", "int8": "i1", "uint8": "u1", "int32": "<i4", "uint32": "<u4",
              "float32": "<f4", "float64": "<f8"}


def write_ply(path, positions, colors=None, faces=None, ascii=False):
    """Write points (optionally coloured) and optional triangle faces."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    has_color = colors is not None
    header = ["ply", "format ascii 1.0" if ascii else "format binary_little_endian 1.0",
              f"element vertex {len(pos)}", "property double x", "property double y", "property double z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if ascii:
            col = np.asarray(colors, dtype=np.uint8).reshape(-1, 3) if has_color else None
            lines = []
            for i, p in enumerate(pos):
                row = [repr(float(v)) for v in p]
                if has_color:
                    row += [str(int(c)) for c in col[i]]
                lines.append(" ".join(row))
            if faces is not None:
                lines += [f"3 {a} {b} {c}" for a, b, c in faces]
            f.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))
            return
        if has_color:
            rec = np.zeros(len(pos), dtype=_PLY_VERTEX)
            rec["x"], rec["y"], rec["z"] = pos.T
            col = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
            rec["red"], rec["green"], rec["blue"] = col.T
            f.write(rec.tobytes())
        else:
            f.write(pos.astype("<f8").tobytes())
        if faces is not None:
            frec = np.zeros(len(faces), dtype=[("n", "u1"), ("v", "<i4", (3,))])
            frec["n"] = 3
            frec["v"] = faces
            f.write(frec.tobytes())


def read_ply(path):
    """Returns ``{"positions", "colors" or None, "faces" or None}``."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise DecodeError("not a PLY file", path, 0)
    header = data[:end].decode("ascii").splitlines()
    body = end + len(b"end_header\n")
    fmt = None
    elements = []
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append((parts[4], "list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise DecodeError(f"unsupported PLY format {fmt}", path, 0)
    out = {"positions": None, "colors": None, "faces": None}
    if fmt == "ascii":
        tokens = data[body:].split()
        pos = 0
        for name, count, props in elements:
            if name == "vertex":
                k = len(props)
                vals = np.array(tokens[pos : pos + count * k], dtype=np.float64).reshape(count, k)
                pos += count * k
                names = [p[0] for p in props]
                out["positions"] = vals[:, [names.index(c) for c in "xyz"]]
                if "red" in names:
                    out["colors"] = vals[:, [names.index(c) for c in ("red", "green", "blue")]].astype(np.uint8)
            elif name == "face":
                faces = []
                for _ in range(count):
                    n = int(tokens[pos])
                    faces.append([int(v) for v in tokens[pos + 1 : pos + 1 + n]])
                    pos += 1 + n
                out["faces"] = np.array(faces, dtype=np.int64).reshape(-1, 3)
        return out
    offset = body
    for name, count, props in elements:
        if any(p[1] == "list" for p in props):
            _, _, ctype, itype = props[0]
            dt = np.dtype([("n", ctype), ("v", itype, (3,))])
            need = offset + count * dt.itemsize
            if need > len(data):
                raise DecodeError("truncated face data", path, len(data))
            rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            if count and np.any(rec["n"] != 3):
                raise DecodeError("only triangle faces are supported", path, offset)
            out["faces"] = rec["v"].astype(np.int64)
        else:
            dt = np.dtype([(p[0], p[1]) for p in props])
            need = offset + count * dt.itemsize
            if need > len(data):
                raise DecodeError("truncated vertex data", path, len(data))
            rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            if name == "vertex":
                out["positions"] = np.column_stack([rec[c].astype(np.float64) for c in "xyz"])
                if "red" in dt.names:
                    out["colors"] = np.column_stack([rec[c] for c in ("red", "green", "blue")]).astype(np.uint8)
        offset += count * dt.itemsize
    return out


def write_cloud_ply(path, cloud, ascii=False, colored_only=False):
    """Write a :class:`~fishmap.colorizer.ColoredCloud`; uncoloured points are black
    unless ``colored_only`` drops them."""
    keep = cloud.colored if colored_only else np.ones(len(cloud), dtype=bool)
    write_ply(path, cloud.positions[keep], cloud.colors[keep], ascii=ascii)


def write_mesh_obj(path, mesh):
    """Untextured OBJ of a scan mesh."""
    with open(path, "w", newline="\n") as f:
        for x, y, z in mesh.vertices:
            f.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.triangles + 1:
            f.write(f"f {a} {b} {c}\n")


# -- reports --

def write_json(path, obj):
    _dump_json(obj, path)


def read_json(path):
    return _load_json(path)
