"""Command-line driver.

Each subcommand wraps one library operation. Exit status: 0 success,
1 usage or configuration error, 2 data error, 3 numerical failure.
"""

import argparse
import configparser
import dataclasses
import math
import os
import sys

import numpy as np

from . import fileio
from .calibration import compare_models, fit_extrinsics, fit_intrinsics
from .colorizer import (
    CameraScale,
    budget_table,
    colorize_coupled,
    colorize_georef,
    error_budget,
    format_budget_table,
    kmh,
)
from .errors import ConfigError, FishmapError
from .georef import StampedImage, geolocate_image, interpolate_pose, profile_to_world
from .mesher import triangulate_stream
from .pipeline import PipelineConfig, rig_from_calibration, run_pipeline, write_run
from .scene_sim import RunSpec, default_street, make_calibration_session, simulate_run
from .texturer import (
    DEFAULT_GUTTER,
    DEFAULT_HEIGHT_CLASSES,
    camera_poses,
    emit_textured_mesh,
    pack_atlas,
    texture_mesh,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _run_spec_from_ini(path):
    """RunSpec from the ``[run]`` section of a key = value file."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read {path}")
    if not cp.has_section("run"):
        raise ConfigError(f"{path} has no [run] section")
    if cp.get("scene", "name", fallback="default_street") != "default_street":
        raise ConfigError("only the default_street scene is available")
    types = {f.name: getattr(f.type, "__name__", f.type) for f in dataclasses.fields(RunSpec)}
    kwargs = {}
    for key, raw in cp.items("run"):
        if key not in types or key in ("rig", "intrinsics"):
            raise ConfigError(f"unknown run option {key!r}")
        kind = types[key]
        try:
            if kind == "tuple":
                kwargs[key] = tuple(float(v) for v in raw.replace("x", ",").split(","))
                if key == "image_size":
                    kwargs[key] = tuple(int(v) for v in kwargs[key])
            elif kind == "bool":
                kwargs[key] = cp.getboolean("run", key)
            elif kind == "int":
                kwargs[key] = int(raw)
            elif kind == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    try:
        return RunSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_inputs(args, need_images=True):
    traj = fileio.read_poses(args.poses)
    profiles = (fileio.read_profiles_text if args.profiles.endswith(".txt") else fileio.read_profiles)(args.profiles)
    calib = fileio.read_calibration(args.calibration)
    if "intrinsics" not in calib and need_images:
        raise ConfigError("calibration lacks intrinsics")
    rig = rig_from_calibration(calib)
    images = []
    if need_images:
        images = [StampedImage(t, fileio.load_image(p), i) for i, (t, p) in enumerate(fileio.read_image_index(args.images))]
    return traj, profiles, calib, rig, images


def _world_profiles(profiles, traj, rig):
    return [profile_to_world(p, interpolate_pose(traj, p.t, clamp=True), rig) for p in profiles]


# -- subcommands --

def cmd_simulate(args):
    spec = _run_spec_from_ini(args.config) if args.config else RunSpec()
    if args.duration is not None:
        spec = dataclasses.replace(spec, duration=args.duration)
    if args.image_rate is not None:
        spec = dataclasses.replace(spec, image_rate=args.image_rate)
    run = simulate_run(default_street(), spec)
    ini = write_run(run, args.out)
    print(f"{len(run.profiles)} profiles, {len(run.images)} images -> {args.out}")
    print(f"pipeline configuration: {ini}")
    if args.calibration_session:
        session = make_calibration_session(spec.intrinsics, spec.image_size, spec.rig.laser_to_camera,
                                           n_poses=args.boards, pixel_sigma=args.pixel_sigma, seed=spec.seed)
        fileio.write_board_observations(os.path.join(args.out, "boards.json"), session.boards, spec.image_size)
        fileio.write_plane_observations(os.path.join(args.out, "planes.json"), session.planes)
        print(f"{len(session.boards)} board views and {len(session.planes)} planes written")
    return EXIT_OK


def cmd_calibrate_intrinsics(args):
    obs, size = fileio.read_board_observations(args.boards)
    size = args.image_size or size
    report = fit_intrinsics(obs, args.order, image_size=size)
    fileio.write_calibration(args.out, report.intrinsics, image_size=size,
                             extra={"rms_residual_px": report.rms_residual_px})
    print(f"order {args.order}: rms {report.rms_residual_px:.6f} px after {report.iterations} iterations -> {args.out}")
    return EXIT_OK


def cmd_calibrate_extrinsics(args):
    planes = fileio.read_plane_observations(args.planes)
    T, rms = fit_extrinsics(planes)
    doc = fileio.read_json(args.calibration) if args.calibration and os.path.exists(args.calibration) else {}
    doc["laser_to_camera"] = fileio.transform_to_dict(T)
    doc["plane_rms_m"] = rms
    fileio.write_json(args.out, doc)
    print(f"laser->camera fitted on {len(planes)} planes: rms {rms:.3e} m -> {args.out}")
    return EXIT_OK


def cmd_compare_models(args):
    obs, size = fileio.read_board_observations(args.boards)
    cmp = compare_models(obs, image_size=args.image_size or size, threshold=args.threshold)
    print(cmp.table())
    if args.out:
        fileio.write_json(args.out, {"residuals_px": {str(k): v for k, v in cmp.residuals.items()},
                                     "improvement_6_9": cmp.improvements[(6, 9)],
                                     "improvement_9_23": cmp.improvements[(9, 23)],
                                     "recommended_order": cmp.recommended})
    return EXIT_OK


def cmd_colorize(args):
    traj, profiles, calib, rig, images = _load_inputs(args)
    intr = calib["intrinsics"]
    if args.method == "coupled":
        cloud = colorize_coupled(profiles, images, rig, intr, traj)
    else:
        pts = np.concatenate([w.points[w.valid] for w in _world_profiles(profiles, traj, rig)])
        geo = [(im, geolocate_image(im.t, traj, rig, clamp=True)) for im in images]
        cloud = colorize_georef(pts, geo, intr, args.k_fallback)
    fileio.write_cloud_ply(args.out, cloud, ascii=args.ascii, colored_only=not args.keep_uncolored)
    print(" ".join(f"{k}={v}" for k, v in cloud.counts().items()))
    return EXIT_OK


def cmd_mesh(args):
    traj, profiles, calib, rig, _ = _load_inputs(args, need_images=False)
    mesh = triangulate_stream(_world_profiles(profiles, traj, rig), args.max_edge)
    if args.out.lower().endswith(".ply"):
        fileio.write_ply(args.out, mesh.vertices, faces=mesh.triangles, ascii=args.ascii)
    else:
        fileio.write_mesh_obj(args.out, mesh)
    print(f"{mesh.n_triangles} triangles ({mesh.degenerate_quads} degenerate quads, "
          f"{mesh.long_edge_triangles} long-edge triangles dropped) -> {args.out}")
    return EXIT_OK


def cmd_texture(args):
    traj, profiles, calib, rig, images = _load_inputs(args)
    mesh = triangulate_stream(_world_profiles(profiles, traj, rig), args.max_edge)
    texturing = texture_mesh(mesh, images, camera_poses(images, traj, rig), calib["intrinsics"], args.route,
                             profiles, rig)
    atlas = pack_atlas(texturing.textures, args.page_size, DEFAULT_HEIGHT_CLASSES, args.gutter)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = emit_textured_mesh(mesh, texturing, atlas, args.out_dir, args.name, args.image_format)
    counts = texturing.counts()
    print(" ".join(f"{k}={v}" for k, v in counts.items()) + f" pages={atlas.n_pages} -> {paths['obj']}")
    return EXIT_OK


def cmd_error_budget(args):
    custom = [args.speed_kmh, args.dt_ms, args.range_m, args.pixels, args.fov_deg]
    if all(v is None for v in custom):
        print(format_budget_table(budget_table()))
        return EXIT_OK
    if args.dt_ms is None:
        raise ConfigError("--dt-ms is required with custom parameters")
    cam = CameraScale("custom", args.pixels if args.pixels is not None else 580,
                      math.radians(args.fov_deg if args.fov_deg is not None else 180.0))
    b = error_budget(kmh(args.speed_kmh if args.speed_kmh is not None else 5.0), args.dt_ms / 1e3,
                     args.range_m if args.range_m is not None else 5.0, cam)
    print(f"displacement {100 * b.displacement:.3f} cm, angular shift {math.degrees(b.angular_shift):.4f} deg, "
          f"pixel error {b.pixel_error:.4f} px")
    return EXIT_OK


def cmd_pipeline(args):
    cfg = PipelineConfig.from_ini(args.config)
    if args.method:
        cfg.method = args.method
    if args.output_dir:
        cfg.output_dir = args.output_dir
    result = run_pipeline(cfg)
    s = result.stats
    print(f"{s['profiles']} profiles in {s['elapsed_s']:.2f} s: {s['throughput_profiles_per_s']:.1f} profiles/s "
          f"vs acquisition {s['acquisition_rate_hz']:.1f} Hz (real time: {'yes' if s['real_time'] else 'no'})")
    for kind, path in sorted(result.paths.items()):
        print(f"  {kind}: {path if isinstance(path, str) else f'{len(path)} files'}")
    return EXIT_OK


def _add_inputs(p, images=True):
    p.add_argument("--poses", required=True, help="pose trace (text)")
    p.add_argument("--profiles", required=True, help="profile stream (.bin, or .txt for the text form)")
    if images:
        p.add_argument("--images", required=True, help="image directory with its index")
    p.add_argument("--calibration", required=True, help="calibration JSON with the rig")


def build_parser():
    parser = _Parser(prog="fishmap", description="Laser and fish-eye camera mapping toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a run along the synthetic street")
    p.add_argument("--config", help="key = value file with a [run] section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--duration", type=float)
    p.add_argument("--image-rate", type=float)
    p.add_argument("--calibration-session", action="store_true", help="also write board and plane observations")
    p.add_argument("--boards", type=int, default=20, help="board views in the calibration session")
    p.add_argument("--pixel-sigma", type=float, default=0.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate-intrinsics", help="fit fish-eye intrinsics to board observations")
    p.add_argument("--boards", required=True)
    p.add_argument("--order", type=int, choices=(6, 9, 23), default=9)
    p.add_argument("--image-size", type=_size)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate_intrinsics)

    p = sub.add_parser("calibrate-extrinsics", help="fit the laser -> camera transform to plane observations")
    p.add_argument("--planes", required=True)
    p.add_argument("--calibration", help="existing calibration to extend")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate_extrinsics)

    p = sub.add_parser("compare-models", help="fit orders 6, 9 and 23 and recommend one")
    p.add_argument("--boards", required=True)
    p.add_argument("--image-size", type=_size)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare_models)

    p = sub.add_parser("colorize", help="colour laser points from the images")
    _add_inputs(p)
    p.add_argument("--method", choices=("coupled", "georef"), default="coupled")
    p.add_argument("--k-fallback", type=int, default=3)
    p.add_argument("--keep-uncolored", action="store_true", help="write uncoloured points in black")
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser("mesh", help="triangulate consecutive profiles")
    _add_inputs(p, images=False)
    p.add_argument("--max-edge", type=float)
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--out", required=True, help=".obj or .ply")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("texture", help="mesh, texture and pack an atlas")
    _add_inputs(p)
    p.add_argument("--max-edge", type=float)
    p.add_argument("--route", choices=("world", "laser"), default="world")
    p.add_argument("--page-size", type=_size, default=(1024, 1024))
    p.add_argument("--gutter", type=int, default=DEFAULT_GUTTER)
    p.add_argument("--image-format", choices=("png", "bmp"), default="png")
    p.add_argument("--name", default="model")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_texture)

    p = sub.add_parser("error-budget", help="pixel error caused by a synchronisation delay")
    p.add_argument("--speed-kmh", type=float)
    p.add_argument("--dt-ms", type=float)
    p.add_argument("--range-m", type=float)
    p.add_argument("--pixels", type=int)
    p.add_argument("--fov-deg", type=float)
    p.set_defaults(func=cmd_error_budget)

    p = sub.add_parser("pipeline", help="run the full chain from a configuration file")
    p.add_argument("config")
    p.add_argument("--method", choices=("coupled", "georef"))
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FishmapError as exc:
        print(f"fishmap {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"fishmap {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"fishmap {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
