"""Per-triangle texture extraction and height-binned texture atlases.

Each mesh triangle is textured from one image: the one nearest in time to
the profile that contributes two of its vertices. Its three vertices are
projected into that image, the enclosing pixel rectangle is cropped, and
the crops are packed onto fixed-size pages. Rectangles are grouped into
height classes and each class gets its own pages, packed in shelves as
tall as the class's upper bound.
"""

from dataclasses import dataclass, field
import json
import os

import numpy as np
from PIL import Image

from .camera import project_points
from .errors import EmptyStream, OutOfBounds, RectTooLarge, Rejected
from .georef import geolocate_image, nearest_index
from .imaging import in_bounds

DEFAULT_PAGE_SIZE = (1024, 1024)
DEFAULT_GUTTER = 1
DEFAULT_HEIGHT_CLASSES = (
    (1, 1), (2, 5), (6, 8), (9, 13), (14, 21), (22, 34), (35, 55), (56, 89), (90, 144),
    (145, 233), (234, 377), (378, 610), (611, 987), (988, 1024),
)
FALLBACK_MATERIAL = "fallback_gray"
FALLBACK_GRAY = 0.5

TEXTURED = 0
BEHIND_CAMERA = 1
OUT_OF_FOV = 2
OUT_OF_BOUNDS = 3
REJECT_REASONS = {BEHIND_CAMERA: "behind_camera", OUT_OF_FOV: "out_of_fov", OUT_OF_BOUNDS: "out_of_bounds"}


def _as_transform(pose):
    return pose.transform if hasattr(pose, "transform") else pose


def assign_image(major_profile, profile_times, images):
    """Id of the image nearest in time to the triangle's two-vertex profile."""
    images = list(images)
    if not images:
        raise EmptyStream("image stream is empty")
    times = np.array([im.t for im in images])
    return images[nearest_index(times, profile_times[major_profile])].id


def _project_camera_points(pc, intr, image_size):
    """Per-point status and pixel coordinates for camera-frame points (..., 3)."""
    w, h = image_size
    status = np.full(pc.shape[:-1], TEXTURED, dtype=np.int8)
    with np.errstate(invalid="ignore"):
        behind = ~(pc[..., 2] > 0)
    uv, in_fov = project_points(pc, intr)
    status[~in_bounds(uv, w, h)] = OUT_OF_BOUNDS
    status[~in_fov] = OUT_OF_FOV
    status[behind] = BEHIND_CAMERA
    return uv, status


def _triangle_status(point_status):
    # the most severe reason among the three corners
    out = np.zeros(point_status.shape[:-1], dtype=np.int8)
    for code in (OUT_OF_BOUNDS, OUT_OF_FOV, BEHIND_CAMERA):
        out[np.any(point_status == code, axis=-1)] = code
    return out


def project_triangle(vertices, camera_pose, intr, image_size):
    """Pixel coordinates (3, 2) of a world triangle in one image.

    ``camera_pose`` maps camera to world (a :class:`~fishmap.georef.Pose`
    or a :class:`~fishmap.georef.RigidTransform`). Raises :class:`Rejected`
    when any corner is behind the camera, outside the FOV or off the image.
    """
    pc = _as_transform(camera_pose).inverse().apply(np.asarray(vertices, dtype=np.float64).reshape(3, 3))
    uv, status = _project_camera_points(pc, intr, image_size)
    code = int(_triangle_status(status[None])[0])
    if code != TEXTURED:
        raise Rejected(REJECT_REASONS[code])
    return uv


@dataclass
class TriangleTexture:
    """A triangle's crop: source rect ``(x, y, w, h)`` and corner positions."""

    triangle_id: int
    image_id: int
    coords: np.ndarray  # (3, 2) source pixel coordinates
    rect: tuple
    uv: np.ndarray  # (3, 2) corner positions normalised to the rect
    pixels: np.ndarray = field(repr=False, default=None)

    @property
    def width(self):
        return self.rect[2]

    @property
    def height(self):
        return self.rect[3]

    @property
    def local(self):
        """Corner positions in rect pixels (origin at the rect's first pixel centre)."""
        return self.coords - np.array(self.rect[:2], dtype=np.float64)


def texture_rects(coords, image_size):
    """Integer envelopes ``(x, y, w, h)`` of projected triangles (K, 3, 2),
    clamped to the image."""
    w, h = image_size
    coords = np.asarray(coords, dtype=np.float64)
    limit = np.array([w - 1, h - 1])
    lo = np.clip(np.floor(coords.min(axis=-2)).astype(np.int64), 0, limit)
    hi = np.clip(np.ceil(coords.max(axis=-2)).astype(np.int64), lo, limit)
    return np.concatenate([lo, hi - lo + 1], axis=-1)


def _rect_uvs(coords, rects):
    local = coords - rects[..., None, :2]
    extent = np.maximum(rects[..., 2:] - 1, 1)[..., None, :]
    return np.where(rects[..., None, 2:] > 1, local / extent, 0.0)


def extract_texture(image, coords, triangle_id=0, image_id=0):
    """Crop the bounding rect of a projected triangle and express its corners in it."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    coords = np.asarray(coords, dtype=np.float64).reshape(3, 2)
    if not np.all(in_bounds(coords, w, h)):
        raise OutOfBounds("triangle corners fall outside the image")
    rect = texture_rects(coords, (w, h))
    x, y, rw, rh = (int(v) for v in rect)
    uv = _rect_uvs(coords, rect)
    crop = image[y : y + rh, x : x + rw].copy()
    return TriangleTexture(int(triangle_id), int(image_id), coords, (x, y, rw, rh), uv, crop)


@dataclass
class TexturingResult:
    textures: list
    status: np.ndarray  # per triangle
    image_index: np.ndarray  # per triangle, index into the image list

    def counts(self):
        names = {TEXTURED: "textured", **REJECT_REASONS}
        return {name: int(np.sum(self.status == code)) for code, name in names.items()}


def camera_poses(images, trajectory, rig):
    return [geolocate_image(im.t, trajectory, rig, clamp=True).transform for im in images]


def project_mesh(mesh, images, poses, intr, route="world", profiles=None, rig=None):
    """Choose an image per triangle and project its corners.

    ``poses`` are camera -> world transforms, one per image. With
    ``route="laser"`` the corners coming from the two-vertex profile are
    mapped straight from the laser frame through the rigid rig, the third
    through the world frame; ``profiles`` and ``rig`` are then required.
    Returns ``(image_index, coords (T, 3, 2), status (T,))``.
    """
    if route not in ("world", "laser"):
        raise ValueError(f"unknown projection route {route!r}")
    if not images:
        raise EmptyStream("image stream is empty")
    n = mesh.n_triangles
    times = np.array([im.t for im in images])
    size = (images[0].image.shape[1], images[0].image.shape[0])
    chosen = nearest_index(times, mesh.profile_times[mesh.major]) if n else np.zeros(0, np.int64)
    chosen = np.atleast_1d(chosen)
    coords = np.full((n, 3, 2), np.nan)
    status = np.zeros(n, dtype=np.int8)
    world = mesh.vertices[mesh.triangles]
    if route == "laser":
        if profiles is None or rig is None:
            raise ValueError("the laser route needs the profiles and the rig")
        prov = mesh.provenance[mesh.triangles]  # (T, 3, 2)
        on_major = prov[..., 0] == mesh.major[:, None]
        theta = np.array([p.theta for p in profiles])
        rng = np.array([p.range for p in profiles])
        th = theta[prov[..., 0], prov[..., 1]]
        r = rng[prov[..., 0], prov[..., 1]]
        laser_cam = rig.laser_to_camera.apply(np.stack([r * np.cos(th), r * np.sin(th), np.zeros_like(r)], -1))
    for m in np.unique(chosen):
        sel = np.flatnonzero(chosen == m)
        pc = poses[m].inverse().apply(world[sel])
        if route == "laser":
            pc = np.where(on_major[sel][..., None], laser_cam[sel], pc)
        uv, pst = _project_camera_points(pc, intr, size)
        coords[sel] = uv
        status[sel] = _triangle_status(pst)
    return chosen, coords, status


def texture_mesh(mesh, images, poses, intr, route="world", profiles=None, rig=None):
    """Extract one texture per visible triangle; the rest get the fallback material."""
    chosen, coords, status = project_mesh(mesh, images, poses, intr, route, profiles, rig)
    return TexturingResult(textures_from_projection(images, chosen, coords, status), status, chosen)


def textures_from_projection(images, chosen, coords, status, first_id=0):
    """Batch :func:`extract_texture` over projected triangles.

    Crops are read-only views into the source images rather than copies.
    """
    tri = np.flatnonzero(status == TEXTURED)
    if tri.size == 0:
        return []
    h, w = images[0].image.shape[:2]
    rects = texture_rects(coords[tri], (w, h))
    uvs = _rect_uvs(coords[tri], rects)
    out = []
    for k, t in enumerate(tri):
        im = images[chosen[t]]
        x, y, rw, rh = rects[k].tolist()
        crop = im.image[y : y + rh, x : x + rw].view()
        crop.flags.writeable = False
        out.append(TriangleTexture(first_id + int(t), im.id, coords[t], (x, y, rw, rh), uvs[k], crop))
    return out


# -- atlas --

@dataclass(frozen=True)
class Placement:
    page: int
    x: int
    y: int


@dataclass
class AtlasPage:
    height_class: tuple
    index: int  # page number within its class
    image: np.ndarray = field(repr=False, default=None)
    used_area: int = 0

    @property
    def name(self):
        lo, hi = self.height_class
        return f"page_{lo}-{hi}_{self.index}"


@dataclass
class TextureAtlas:
    page_size: tuple
    height_classes: tuple
    pages: list
    placements: dict  # triangle id -> Placement
    rects: dict  # triangle id -> (w, h)
    gutter: int = DEFAULT_GUTTER

    @property
    def n_pages(self):
        return len(self.pages)

    def occupancy(self):
        if not self.pages:
            return 0.0
        w, h = self.page_size
        return sum(p.used_area for p in self.pages) / (len(self.pages) * w * h)


def height_class(h, classes):
    for c in classes:
        if c[0] <= h <= c[1]:
            return tuple(c)
    raise RectTooLarge(f"no height class holds a {h} px tall rect")


class AtlasBuilder:
    """Deterministic shelf packer; call :meth:`add` in triangle-id order."""

    def __init__(self, page_size=DEFAULT_PAGE_SIZE, classes=DEFAULT_HEIGHT_CLASSES, gutter=DEFAULT_GUTTER,
                 render=True):
        self.page_size = tuple(page_size)
        self.classes = tuple(tuple(c) for c in classes)
        self.gutter = int(gutter)
        self.render = render
        self.pages = []
        self.placements = {}
        self.rects = {}
        self._cursor = {}  # class -> (page id, x, y)

    def _shelf(self, cls):
        return min(cls[1], self.page_size[1])

    def _new_page(self, cls):
        index = sum(1 for p in self.pages if p.height_class == cls)
        w, h = self.page_size
        image = np.zeros((h, w, 3), dtype=np.uint8) if self.render else None
        self.pages.append(AtlasPage(cls, index, image))
        return len(self.pages) - 1

    def add(self, key, width, height, pixels=None):
        W, H = self.page_size
        if width > W or height > H:
            raise RectTooLarge(f"rect {width}x{height} exceeds page {W}x{H}")
        cls = height_class(height, self.classes)
        shelf = self._shelf(cls)
        g = self.gutter
        if cls not in self._cursor:
            self._cursor[cls] = (self._new_page(cls), 0, 0)
        page, x, y = self._cursor[cls]
        if x + width > W:
            x, y = 0, y + shelf + g
        if y + shelf > H:
            page, x, y = self._new_page(cls), 0, 0
        self.placements[key] = Placement(page, x, y)
        self.rects[key] = (width, height)
        p = self.pages[page]
        p.used_area += width * height
        if pixels is not None and p.image is not None:
            p.image[y : y + height, x : x + width] = pixels[..., :3] if pixels.ndim == 3 else pixels[..., None]
        self._cursor[cls] = (page, x + width + g, y)
        return self.placements[key]

    def build(self):
        return TextureAtlas(self.page_size, self.classes, self.pages, self.placements, self.rects, self.gutter)


def pack_atlas(textures, page_size=DEFAULT_PAGE_SIZE, classes=DEFAULT_HEIGHT_CLASSES, gutter=DEFAULT_GUTTER,
               render=True):
    """Pack triangle textures (sorted by triangle id) into height-class pages."""
    builder = AtlasBuilder(page_size, classes, gutter, render)
    for tex in sorted(textures, key=lambda t: t.triangle_id):
        builder.add(tex.triangle_id, tex.width, tex.height, tex.pixels)
    return builder.build()


def baseline_classes(textures):
    """The unbinned reference: a single class whose shelf fits the tallest rect."""
    tallest = max((t.height for t in textures), default=1)
    return ((1, tallest),)


def pack_rects(sizes, page_size=DEFAULT_PAGE_SIZE, classes=DEFAULT_HEIGHT_CLASSES, gutter=DEFAULT_GUTTER):
    """Geometry-only packing of ``(w, h)`` sizes keyed by position."""
    builder = AtlasBuilder(page_size, classes, gutter, render=False)
    for i, (w, h) in enumerate(sizes):
        builder.add(i, int(w), int(h))
    return builder.build()


# -- OBJ / MTL output --

def _g(x):
    return f"{x:.9g}"


def _format_rows(fmt, rows):
    return [fmt % tuple(r) for r in np.asarray(rows).tolist()]


def page_uvs(texture, placement, page_size):
    """OBJ texture coordinates of a texture's corners on its page (v up)."""
    W, H = page_size
    px = texture.local + [placement.x, placement.y]
    return np.column_stack([(px[:, 0] + 0.5) / W, 1.0 - (px[:, 1] + 0.5) / H])


def emit_textured_mesh(mesh, texturing, atlas, out_dir, name="model", image_format="png"):
    """Write ``<name>.obj``, ``<name>.mtl``, the page images and an atlas manifest.

    Faces are grouped per material (pages in order, then the fallback
    material), ascending triangle id within a group. Returns the written paths.
    """
    fmt = image_format.lower()
    if fmt not in ("png", "bmp"):
        raise ValueError("page images are written as png or bmp")
    os.makedirs(out_dir, exist_ok=True)
    textures = {t.triangle_id: t for t in texturing.textures}
    paths = {"obj": os.path.join(out_dir, f"{name}.obj"), "mtl": os.path.join(out_dir, f"{name}.mtl"),
             "manifest": os.path.join(out_dir, f"{name}_atlas.json"), "pages": []}

    for page in atlas.pages:
        path = os.path.join(out_dir, f"{page.name}.{fmt}")
        options = {"compress_level": 1} if fmt == "png" else {}
        Image.fromarray(page.image, "RGB").save(path, format=fmt.upper(), **options)
        paths["pages"].append(path)

    with open(paths["mtl"], "w", newline="\n") as f:
        for page in atlas.pages:
            f.write(f"newmtl {page.name}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {page.name}.{fmt}\n\n")
        g = _g(FALLBACK_GRAY)
        f.write(f"newmtl {FALLBACK_MATERIAL}\nKa {g} {g} {g}\nKd {g} {g} {g}\nKs 0 0 0\nillum 1\n")

    placed = np.array([t for t in range(mesh.n_triangles) if t in atlas.placements and t in textures],
                      dtype=np.int64)
    page_of = np.array([atlas.placements[t].page for t in placed], dtype=np.int64)
    fallback = np.setdiff1d(np.arange(mesh.n_triangles), placed)
    order = np.lexsort((placed, page_of))
    placed, page_of = placed[order], page_of[order]

    W, H = atlas.page_size
    if len(placed):
        local = np.array([textures[t].local for t in placed])
        offset = np.array([[atlas.placements[t].x, atlas.placements[t].y] for t in placed], dtype=np.float64)
        px = local + offset[:, None, :]
        uv = np.stack([(px[..., 0] + 0.5) / W, 1.0 - (px[..., 1] + 0.5) / H], axis=-1).reshape(-1, 2)
    else:
        uv = np.zeros((0, 2))

    vt_ids = np.arange(3 * len(placed)).reshape(-1, 3)
    materials = [atlas.pages[p].name for p in page_of] + [FALLBACK_MATERIAL] * len(fallback)
    model = ObjModel(mesh.vertices, uv, np.concatenate([mesh.triangles[placed], mesh.triangles[fallback]]),
                     np.concatenate([vt_ids, np.full((len(fallback), 3), -1, np.int64)]), materials, f"{name}.mtl")
    write_obj(model, paths["obj"])

    keys = sorted(int(t) for t in atlas.placements)
    manifest = {
        "page_size": list(atlas.page_size),
        "gutter": atlas.gutter,
        "height_classes": [list(c) for c in atlas.height_classes],
        "pages": [{"name": p.name, "class": list(p.height_class), "file": f"{p.name}.{fmt}",
                   "used_area": p.used_area} for p in atlas.pages],
        "occupancy": atlas.occupancy(),
        # one column per field, row k describes triangle placements["triangle"][k]
        "placements": {
            "triangle": keys,
            "page": [atlas.placements[t].page for t in keys],
            "x": [atlas.placements[t].x for t in keys],
            "y": [atlas.placements[t].y for t in keys],
            "w": [atlas.rects[t][0] for t in keys],
            "h": [atlas.rects[t][1] for t in keys],
            "image": [textures[t].image_id for t in keys],
        },
        "fallback_triangles": len(fallback),
    }
    with open(paths["manifest"], "w", newline="\n") as f:
        f.write(json.dumps(manifest, sort_keys=True) + "\n")
    return paths


@dataclass
class ObjModel:
    vertices: np.ndarray
    uvs: np.ndarray
    faces: np.ndarray  # (F, 3) zero-based vertex indices
    face_uvs: np.ndarray  # (F, 3) zero-based uv indices, -1 when untextured
    face_material: list
    mtllib: str = None


def read_obj(path):
    """Parse the OBJ subset written by :func:`emit_textured_mesh`."""
    verts, uvs, faces, fuv, mats = [], [], [], [], []
    material = None
    mtllib = None
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif tag == "vt":
                uvs.append([float(p) for p in parts[1:3]])
            elif tag == "f":
                vi, ti = [], []
                for corner in parts[1:4]:
                    fields = corner.split("/")
                    vi.append(int(fields[0]) - 1)
                    ti.append(int(fields[1]) - 1 if len(fields) > 1 and fields[1] else -1)
                faces.append(vi)
                fuv.append(ti)
                mats.append(material)
            elif tag == "usemtl":
                material = parts[1]
            elif tag == "mtllib":
                mtllib = parts[1]
    return ObjModel(np.array(verts).reshape(-1, 3), np.array(uvs).reshape(-1, 2),
                    np.array(faces, dtype=np.int64).reshape(-1, 3), np.array(fuv, dtype=np.int64).reshape(-1, 3),
                    mats, mtllib)


def write_obj(model, path):
    """Write an :class:`ObjModel`; ``read_obj`` of the output gives it back.

    Coordinates use 9 significant digits, so a model read from a file
    written here is re-written byte for byte.
    """
    lines = [f"mtllib {model.mtllib}"] if model.mtllib else []
    lines += _format_rows("v %.9g %.9g %.9g", model.vertices)
    lines += _format_rows("vt %.9g %.9g", model.uvs)
    faces = np.asarray(model.faces, dtype=np.int64).reshape(-1, 3) + 1
    fuv = np.asarray(model.face_uvs, dtype=np.int64).reshape(-1, 3) + 1
    textured = fuv[:, 0] > 0
    mats = list(model.face_material)
    # runs of faces sharing material and texturing
    breaks = [0] + [i for i in range(1, len(faces)) if mats[i] != mats[i - 1] or textured[i] != textured[i - 1]]
    current = None
    for a, b in zip(breaks, breaks[1:] + [len(faces)]):
        if a == b:
            continue
        if mats[a] is not None and mats[a] != current:
            lines.append(f"usemtl {mats[a]}")
            current = mats[a]
        if textured[a]:
            rows = np.stack([faces[a:b, 0], fuv[a:b, 0], faces[a:b, 1], fuv[a:b, 1], faces[a:b, 2], fuv[a:b, 2]], 1)
            lines += _format_rows("f %d/%d %d/%d %d/%d", rows)
        else:
            lines += _format_rows("f %d %d %d", faces[a:b])
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_mtl(path):
    """Materials as ``{name: {"Kd": (r, g, b), "map_Kd": file or None}}``."""
    out = {}
    current = None
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "newmtl":
                current = out.setdefault(parts[1], {"Kd": None, "map_Kd": None})
            elif parts[0] == "Kd" and current is not None:
                current["Kd"] = tuple(float(p) for p in parts[1:4])
            elif parts[0] == "map_Kd" and current is not None:
                current["map_Kd"] = parts[1]
    return out
