"""End-to-end processing of recorded streams.

Poses, laser profiles and images are read from files and replayed in
timestamp order. Profiles are georeferenced, coloured, meshed and textured
as soon as the images they depend on have arrived, holding at most
``buffer_s`` seconds of data. Outputs are written to one directory along
with a statistics report.
"""

import configparser
from dataclasses import dataclass, field
import heapq
import math
import os
import time

import numpy as np

from . import fileio
from .colorizer import DEFAULT_K_FALLBACK, ColoredCloud, DeferredColorizer
from .errors import BufferOverflow, ConfigError
from .georef import SensorRig, StampedImage, geolocate_image, interpolate_pose, profile_to_world
from .mesher import MeshStream, ScanMesh
from .texturer import (
    DEFAULT_GUTTER,
    DEFAULT_HEIGHT_CLASSES,
    DEFAULT_PAGE_SIZE,
    AtlasBuilder,
    TexturingResult,
    baseline_classes,
    emit_textured_mesh,
    project_mesh,
    textures_from_projection,
)

OUTPUT_KINDS = ("cloud", "colored_cloud", "mesh", "textured_mesh")
OUTPUT_DIR_ENV = "FISHMAP_OUTPUT_DIR"


def _parse_classes(text):
    text = text.strip()
    if text in ("", "default"):
        return DEFAULT_HEIGHT_CLASSES
    out = []
    for part in text.split(","):
        lo, hi = part.strip().split("-")
        out.append((int(lo), int(hi)))
    return tuple(out)


def _format_classes(classes):
    return ",".join(f"{lo}-{hi}" for lo, hi in classes)


@dataclass
class PipelineConfig:
    poses: str = None
    profiles: str = None
    images: str = None
    calibration: str = None
    method: str = "coupled"
    outputs: tuple = OUTPUT_KINDS
    buffer_s: float = 5.0
    georef_window_s: float = 1.5
    k_fallback: int = DEFAULT_K_FALLBACK
    max_edge: float = None
    route: str = "world"
    page_size: tuple = DEFAULT_PAGE_SIZE
    gutter: int = DEFAULT_GUTTER
    height_classes: tuple = DEFAULT_HEIGHT_CLASSES
    image_format: str = "png"
    ply_ascii: bool = False
    output_dir: str = "out"

    def validate(self):
        if self.method not in ("coupled", "georef"):
            raise ConfigError(f"method must be 'coupled' or 'georef', got {self.method!r}")
        if not self.buffer_s > 0:
            raise ConfigError("buffer_s must be positive")
        unknown = set(self.outputs) - set(OUTPUT_KINDS)
        if unknown or not self.outputs:
            raise ConfigError(f"outputs must be a non-empty subset of {OUTPUT_KINDS}")
        if self.route not in ("world", "laser"):
            raise ConfigError("route must be 'world' or 'laser'")
        if self.image_format not in ("png", "bmp"):
            raise ConfigError("image_format must be png or bmp")
        needed = {"poses": self.poses, "profiles": self.profiles, "calibration": self.calibration}
        if {"colored_cloud", "textured_mesh"} & set(self.outputs):
            needed["images"] = self.images
        missing = [k for k, v in needed.items() if not v]
        if missing:
            raise ConfigError(f"method {self.method!r} with outputs {list(self.outputs)} needs: {', '.join(missing)}")
        for k, v in needed.items():
            if not os.path.exists(v):
                raise ConfigError(f"{k} input not found: {v}")
        return self

    @classmethod
    def from_ini(cls, path):
        """Read a ``key = value`` configuration. Relative paths are taken
        from the file's directory; ``FISHMAP_OUTPUT_DIR`` overrides the
        output directory."""
        cp = configparser.ConfigParser()
        try:
            if not cp.read(path):
                raise ConfigError(f"cannot read configuration {path}")
        except configparser.Error as exc:
            raise ConfigError(f"malformed configuration {path}: {exc}") from exc
        base = os.path.dirname(os.path.abspath(path))

        def where(p):
            return p if not p or os.path.isabs(p) else os.path.join(base, p)

        get = lambda sec, key, fb=None: cp.get(sec, key, fallback=fb)  # noqa: E731
        try:
            cfg = cls(
                poses=where(get("inputs", "poses")),
                profiles=where(get("inputs", "profiles")),
                images=where(get("inputs", "images")),
                calibration=where(get("inputs", "calibration")),
                method=get("pipeline", "method", "coupled").strip(),
                outputs=tuple(s.strip() for s in get("pipeline", "outputs", ",".join(OUTPUT_KINDS)).split(",") if s.strip()),
                buffer_s=cp.getfloat("pipeline", "buffer_s", fallback=5.0),
                georef_window_s=cp.getfloat("pipeline", "georef_window_s", fallback=1.5),
                k_fallback=cp.getint("pipeline", "k_fallback", fallback=DEFAULT_K_FALLBACK),
                max_edge=float(get("mesher", "max_edge", "") or "nan"),
                route=get("texturer", "route", "world").strip(),
                page_size=tuple(int(v) for v in get("texturer", "page_size", "1024x1024").lower().split("x")),
                gutter=cp.getint("texturer", "gutter", fallback=DEFAULT_GUTTER),
                height_classes=_parse_classes(get("texturer", "height_classes", "default")),
                image_format=get("texturer", "image_format", "png").strip().lower(),
                ply_ascii=get("output", "ply_format", "binary").strip().lower() == "ascii",
                output_dir=os.environ.get(OUTPUT_DIR_ENV) or where(get("output", "directory", "out")),
            )
        except ValueError as exc:
            raise ConfigError(f"bad value in {path}: {exc}") from exc
        if cfg.max_edge is not None and math.isnan(cfg.max_edge):
            cfg.max_edge = None
        return cfg

    def to_ini(self, path):
        base = os.path.dirname(os.path.abspath(path))

        def rel(p):
            return os.path.relpath(p, base) if p else ""

        cp = configparser.ConfigParser()
        cp["inputs"] = {"poses": rel(self.poses), "profiles": rel(self.profiles), "images": rel(self.images),
                        "calibration": rel(self.calibration)}
        cp["pipeline"] = {"method": self.method, "outputs": ",".join(self.outputs), "buffer_s": repr(self.buffer_s),
                          "georef_window_s": repr(self.georef_window_s), "k_fallback": str(self.k_fallback)}
        cp["mesher"] = {"max_edge": "" if self.max_edge is None else repr(self.max_edge)}
        cp["texturer"] = {"route": self.route, "page_size": f"{self.page_size[0]}x{self.page_size[1]}",
                          "gutter": str(self.gutter), "height_classes": _format_classes(self.height_classes),
                          "image_format": self.image_format}
        cp["output"] = {"directory": rel(self.output_dir), "ply_format": "ascii" if self.ply_ascii else "binary"}
        with open(path, "w", newline="\n") as f:
            cp.write(f)


def rig_from_calibration(calib):
    """Sensor rig from a calibration document.

    Either both mountings are given, or the laser mounting plus the
    laser -> camera transform.
    """
    from .fileio import transform_from_dict

    lv = calib.get("laser_to_vehicle")
    cv = calib.get("camera_to_vehicle")
    lc = calib.get("laser_to_camera")
    if lv is None:
        raise ConfigError("calibration lacks laser_to_vehicle")
    lv = transform_from_dict(lv)
    if cv is not None:
        return SensorRig(lv, transform_from_dict(cv))
    if lc is None:
        raise ConfigError("calibration needs camera_to_vehicle or laser_to_camera")
    return SensorRig(lv, lv @ lc.inverse())


def write_rig_calibration(path, intr, rig, image_size=None):
    fileio.write_calibration(path, intr, rig.laser_to_camera, image_size, extra={
        "laser_to_vehicle": fileio.transform_to_dict(rig.laser_to_vehicle),
        "camera_to_vehicle": fileio.transform_to_dict(rig.camera_to_vehicle),
    })


@dataclass
class PipelineResult:
    stats: dict
    paths: dict
    cloud: ColoredCloud = field(repr=False, default=None)
    mesh: ScanMesh = field(repr=False, default=None)


class _ChunkTexturer:
    """Textures mesh chunks once the images nearest to their profiles are known."""

    def __init__(self, intr, rig, trajectory, route, builder):
        self.intr = intr
        self.rig = rig
        self.trajectory = trajectory
        self.route = route
        self.builder = builder
        self.images = []
        self.poses = []
        self.pending = []
        self.textures = []
        self.status = []
        self.image_index = []
        self.n_triangles = 0
        self.frontier = -math.inf
        self.last_t = -math.inf

    def add_image(self, image):
        self.images.append(image)
        self.poses.append(geolocate_image(image.t, self.trajectory, self.rig, clamp=True).transform)
        self.frontier = image.t

    def add_chunk(self, chunk, prev, offset_prev, profiles, times):
        """Queue the triangles of ``chunk``; ``prev`` is the chunk of the
        previous profile, whose first vertex has global id ``offset_prev``."""
        self.pending.append((chunk, prev, offset_prev, profiles, times))
        self.last_t = times[1]

    def oldest_wait(self):
        return self.pending[0][4][0] if self.pending else None

    def drain(self, final=False):
        while self.pending and (final or self.frontier >= self.pending[0][4][1]):
            self._texture(*self.pending.pop(0))
        self._trim()

    def _texture(self, chunk, prev, offset_prev, profiles, times):
        n = len(chunk.triangles)
        if n == 0:
            return
        first = chunk.pair[0]
        prov = np.concatenate([prev.provenance, chunk.provenance])
        prov[:, 0] -= first
        local = ScanMesh(
            vertices=np.concatenate([prev.vertices, chunk.vertices]),
            provenance=prov,
            triangles=chunk.triangles - offset_prev,
            major=chunk.major - first,
            profile_times=np.asarray(times, dtype=float),
        )
        chosen, coords, status = project_mesh(local, self.images, self.poses, self.intr, self.route,
                                              profiles, self.rig)
        texs = textures_from_projection(self.images, chosen, coords, status, first_id=self.n_triangles)
        for tex in texs:
            self.builder.add(tex.triangle_id, tex.width, tex.height, tex.pixels)
            tex.pixels = None  # the atlas holds the copy; release the source frame
        self.textures += texs
        self.status.append(status)
        self.image_index.append(np.array([self.images[c].id for c in chosen], dtype=np.int64))
        self.n_triangles += n

    def _trim(self):
        # keep the last image at or before the earliest time still to be textured
        horizon = self.pending[0][4][0] if self.pending else self.last_t
        keep = 0
        while keep + 1 < len(self.images) and self.images[keep + 1].t <= horizon:
            keep += 1
        del self.images[:keep]
        del self.poses[:keep]

    def result(self):
        status = np.concatenate(self.status) if self.status else np.zeros(0, np.int8)
        idx = np.concatenate(self.image_index) if self.image_index else np.zeros(0, np.int64)
        return TexturingResult(self.textures, status, idx)


def run_pipeline(config):
    """Run the configured chain and write its artifacts; returns a :class:`PipelineResult`."""
    config.validate()
    t_start = time.perf_counter()
    traj = fileio.read_poses(config.poses)
    if config.profiles.endswith(".txt"):
        profiles = fileio.read_profiles_text(config.profiles)
    else:
        profiles = fileio.read_profiles(config.profiles)
    calib = fileio.read_calibration(config.calibration)
    if "intrinsics" not in calib:
        raise ConfigError("calibration lacks intrinsics")
    intr = calib["intrinsics"]
    rig = rig_from_calibration(calib)
    outputs = set(config.outputs)
    want_color = "colored_cloud" in outputs
    want_mesh = bool({"mesh", "textured_mesh"} & outputs)
    want_texture = "textured_mesh" in outputs
    index = fileio.read_image_index(config.images) if (want_color or want_texture) else []

    colorizer = DeferredColorizer(config.method, rig, intr, traj, config.buffer_s, config.georef_window_s,
                                  config.k_fallback) if want_color else None
    mesher = MeshStream(config.max_edge) if want_mesh else None
    builder = AtlasBuilder(config.page_size, config.height_classes, config.gutter) if want_texture else None
    texturer = _ChunkTexturer(intr, rig, traj, config.route, builder) if want_texture else None

    clouds, chunks, world_points = [], [], []
    # images sort before profiles with the same stamp
    events = heapq.merge(((t, 0, i) for i, (t, _) in enumerate(index)),
                         ((p.t, 1, i) for i, p in enumerate(profiles)))
    prev_chunk = prev_profile = None
    prev_t = None
    vertex_offset_prev = 0
    n_vertices = 0
    clock = -math.inf
    for t, kind, i in events:
        clock = max(clock, t)
        if kind == 0:
            img = StampedImage(t, fileio.load_image(index[i][1]), i)
            if colorizer:
                clouds += colorizer.push_image(img)
            if texturer:
                texturer.add_image(img)
                texturer.drain()
        else:
            p = profiles[i]
            pose = interpolate_pose(traj, p.t, clamp=True)
            world = profile_to_world(p, pose, rig)
            world_points.append(world.points[p.valid])
            if colorizer:
                clouds += colorizer.push_profile(p)
            if mesher:
                chunk = mesher.push(world)
                chunks.append(chunk)
                if texturer and prev_chunk is not None:
                    texturer.add_chunk(chunk, prev_chunk, vertex_offset_prev, [prev_profile, p], (prev_t, p.t))
                    texturer.drain()
                vertex_offset_prev = n_vertices
                n_vertices += len(chunk.vertices)
                prev_chunk, prev_profile, prev_t = chunk, p, p.t
        wait = texturer.oldest_wait() if texturer else None
        if wait is not None and clock - wait > config.buffer_s:
            raise BufferOverflow(f"mesh chunk at t={wait:.3f} s waited longer than {config.buffer_s} s for an image")
    if colorizer:
        clouds += colorizer.finish()
    if texturer:
        texturer.drain(final=True)

    os.makedirs(config.output_dir, exist_ok=True)
    paths = {}
    stats = {"method": config.method, "profiles": len(profiles), "images": len(index),
             "points": int(sum(len(w) for w in world_points))}
    cloud = None
    if "cloud" in outputs:
        paths["cloud"] = os.path.join(config.output_dir, "cloud.ply")
        pts = np.concatenate(world_points) if world_points else np.zeros((0, 3))
        fileio.write_ply(paths["cloud"], pts, ascii=config.ply_ascii)
    if want_color:
        cloud = ColoredCloud.concatenate(clouds, config.method)
        paths["colored_cloud"] = os.path.join(config.output_dir, "colored_cloud.ply")
        fileio.write_cloud_ply(paths["colored_cloud"], cloud, ascii=config.ply_ascii, colored_only=True)
        stats["colorization"] = cloud.counts()
        stats["buffer_max_lag_s"] = colorizer.stats.max_lag_s
        stats["buffer_max_held_profiles"] = colorizer.stats.max_held
    mesh = ScanMesh.concatenate(chunks) if want_mesh else None
    if want_mesh:
        stats["triangles"] = mesh.n_triangles
        stats["degenerate_quads"] = mesh.degenerate_quads
        stats["long_edge_triangles"] = mesh.long_edge_triangles
    if "mesh" in outputs:
        paths["mesh"] = os.path.join(config.output_dir, "mesh.ply")
        fileio.write_ply(paths["mesh"], mesh.vertices, faces=mesh.triangles, ascii=config.ply_ascii)
    if want_texture:
        atlas = builder.build()
        texturing = texturer.result()
        written = emit_textured_mesh(mesh, texturing, atlas, config.output_dir, "model", config.image_format)
        paths.update({"obj": written["obj"], "mtl": written["mtl"], "atlas_manifest": written["manifest"],
                      "pages": written["pages"]})
        single = AtlasBuilder(config.page_size, baseline_classes(texturing.textures), config.gutter, render=False)
        for tex in texturing.textures:
            single.add(tex.triangle_id, tex.width, tex.height)
        single = single.build()
        stats["texturing"] = texturing.counts()
        stats["fallback_triangles"] = int(mesh.n_triangles - len(texturing.textures))
        stats["atlas_pages"] = atlas.n_pages
        stats["atlas_pages_single_class"] = single.n_pages
        stats["atlas_occupancy"] = atlas.occupancy()
        stats["atlas_occupancy_single_class"] = single.occupancy()

    elapsed = time.perf_counter() - t_start
    times = np.array([p.t for p in profiles])
    span = float(times[-1] - times[0]) if len(times) > 1 else 0.0
    acq_rate = (len(times) - 1) / span if span > 0 else float("nan")
    throughput = len(profiles) / elapsed if elapsed > 0 else float("inf")
    stats.update({
        "elapsed_s": elapsed,
        "acquisition_span_s": span,
        "acquisition_rate_hz": acq_rate,
        "throughput_profiles_per_s": throughput,
        "real_time_factor": throughput / acq_rate if acq_rate == acq_rate else float("nan"),
        "real_time": bool(throughput >= acq_rate) if acq_rate == acq_rate else True,
    })
    paths["stats"] = os.path.join(config.output_dir, "stats.json")
    fileio.write_json(paths["stats"], stats)
    return PipelineResult(stats, paths, cloud, mesh)


__all__ = ["PipelineConfig", "PipelineResult", "run_pipeline", "rig_from_calibration", "write_rig_calibration", "write_run",
           "OUTPUT_KINDS"]


def write_run(run, directory, method="coupled", **overrides):
    """Write a simulated run as pipeline inputs plus a ready-to-use config.

    Returns the config path. The calibration holds the true rig and
    intrinsics.
    """
    os.makedirs(directory, exist_ok=True)
    poses = os.path.join(directory, "poses.txt")
    profiles = os.path.join(directory, "profiles.bin")
    images = os.path.join(directory, "images")
    calib = os.path.join(directory, "calibration.json")
    fileio.write_poses(poses, run.trajectory)
    fileio.write_profiles(profiles, run.profiles)
    fileio.write_images(images, run.images)
    write_rig_calibration(calib, run.spec.intrinsics, run.spec.rig, run.spec.image_size)
    cfg = PipelineConfig(poses=poses, profiles=profiles, images=images, calibration=calib, method=method,
                         output_dir=os.path.join(directory, "out"))
    for key, value in overrides.items():
        setattr(cfg, key, value)
    path = os.path.join(directory, "pipeline.ini")
    cfg.to_ini(path)
    return path
