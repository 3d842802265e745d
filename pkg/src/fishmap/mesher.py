"""Strip triangulation between consecutive laser profiles.

Beams with the same index in two successive profiles are neighbours on the
surface, so every pair of adjacent beams ``j, j+1`` in profiles ``a`` and
``b`` bounds a quad that is split into two triangles::

    a[j+1] ---- b[j+1]
      |  \\        |
      |    \\      |
    a[j] ------ b[j]

The first triangle is ``(a[j], b[j], a[j+1])``, the second
``(a[j+1], b[j], b[j+1])``; both share the diagonal ``b[j] - a[j+1]`` and
have the same winding, so the strip is a manifold.
"""

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .errors import BeamCountMismatch

DEGENERATE_AREA = 1e-12

_Profile = namedtuple("_Profile", "points valid")


@dataclass
class PairTriangles:
    """Triangles of one profile pair, as (side, beam) references.

    ``side`` is 0 for the leading profile ``a`` and 1 for ``b``.
    """

    side: np.ndarray  # (T, 3)
    beam: np.ndarray  # (T, 3)
    degenerate_quads: int = 0
    long_edge_triangles: int = 0

    def __len__(self):
        return len(self.side)


def _as_points(profile):
    pts = getattr(profile, "points", profile)
    pts = np.asarray(pts, dtype=np.float64)
    valid = getattr(profile, "valid", None)
    if valid is None:
        valid = np.all(np.isfinite(pts), axis=1)
    return pts, np.asarray(valid, dtype=bool)


def _areas(p0, p1, p2):
    return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=-1)


def _max_edge(p0, p1, p2):
    return np.max(np.stack([np.linalg.norm(p1 - p0, axis=-1), np.linalg.norm(p2 - p1, axis=-1),
                            np.linalg.norm(p0 - p2, axis=-1)]), axis=0)


def triangulate_pair(a, b, max_edge=None):
    """Triangles joining profile ``a`` to the next profile ``b``.

    ``a`` and ``b`` are (N, 3) world points (NaN rows for invalid beams) or
    objects with ``points`` and ``valid``. Quads touching an invalid beam
    are skipped, as are quads with a zero-area triangle. ``max_edge``
    (metres, off by default) drops individual triangles with a longer edge.
    """
    pa, va = _as_points(a)
    pb, vb = _as_points(b)
    if len(pa) != len(pb):
        raise BeamCountMismatch(f"profiles have {len(pa)} and {len(pb)} beams")
    if len(pa) < 2:
        return PairTriangles(np.zeros((0, 3), np.int8), np.zeros((0, 3), np.int64))
    ok = va[:-1] & va[1:] & vb[:-1] & vb[1:]
    j = np.flatnonzero(ok)
    a0, a1, b0, b1 = pa[j], pa[j + 1], pb[j], pb[j + 1]
    area1 = _areas(a0, b0, a1)
    area2 = _areas(a1, b0, b1)
    good = (area1 >= DEGENERATE_AREA) & (area2 >= DEGENERATE_AREA)
    degenerate = int(np.sum(~good))
    j = j[good]
    n = len(j)
    side = np.empty((2 * n, 3), dtype=np.int8)
    beam = np.empty((2 * n, 3), dtype=np.int64)
    side[0::2] = (0, 1, 0)
    beam[0::2] = np.stack([j, j, j + 1], axis=1)
    side[1::2] = (0, 1, 1)
    beam[1::2] = np.stack([j + 1, j, j + 1], axis=1)
    dropped = 0
    if max_edge is not None:
        corners = [np.where((side[:, c] == 0)[:, None], pa[beam[:, c]], pb[beam[:, c]]) for c in range(3)]
        keep = _max_edge(*corners) <= max_edge
        dropped = int(np.sum(~keep))
        side, beam = side[keep], beam[keep]
    return PairTriangles(side, beam, degenerate, dropped)


@dataclass
class ScanMesh:
    """Triangle mesh with per-vertex (profile, beam) provenance.

    ``pair[t]`` is the index ``i`` of the profile pair ``(i, i+1)`` the
    triangle came from and ``major[t]`` the profile contributing two of its
    vertices.
    """

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    provenance: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    pair: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    major: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    profile_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degenerate_quads: int = 0
    long_edge_triangles: int = 0

    @property
    def n_triangles(self):
        return len(self.triangles)

    def triangle_vertices(self):
        return self.vertices[self.triangles]

    def normals(self):
        p = self.triangle_vertices()
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def edge_lengths(self):
        p = self.triangle_vertices()
        return np.linalg.norm(p[:, [1, 2, 0]] - p, axis=-1)

    @classmethod
    def concatenate(cls, chunks):
        """Join stream chunks (their vertex indices are already global)."""
        chunks = list(chunks)
        if not chunks:
            return cls()
        times = max((c.profile_times for c in chunks), key=len)
        return cls(
            np.concatenate([c.vertices for c in chunks]),
            np.concatenate([c.provenance for c in chunks]),
            np.concatenate([c.triangles for c in chunks]),
            np.concatenate([c.pair for c in chunks]),
            np.concatenate([c.major for c in chunks]),
            times,
            sum(c.degenerate_quads for c in chunks),
            sum(c.long_edge_triangles for c in chunks),
        )


class MeshStream:
    """Incremental strip mesher keeping exactly one previous profile.

    :meth:`push` takes world-resolved profiles in time order and returns a
    :class:`ScanMesh` chunk holding the new profile's vertices and the
    triangles to the previous profile. Vertex indices in chunks are global,
    so chunks can be appended as they come.
    """

    def __init__(self, max_edge=None):
        self.max_edge = max_edge
        self.prev = None
        self.prev_index = -1
        self.prev_vertex_ids = None
        self.n_vertices = 0
        self.times = []

    def push(self, profile):
        pts, valid = _as_points(profile)
        t = float(getattr(profile, "t", len(self.times)))
        if self.times and t < self.times[-1]:
            raise ValueError("profiles must arrive in timestamp order")
        index = self.prev_index + 1
        beams = np.flatnonzero(valid)
        ids = np.full(len(pts), -1, dtype=np.int64)
        ids[beams] = self.n_vertices + np.arange(len(beams))
        chunk = ScanMesh(
            vertices=pts[beams],
            provenance=np.column_stack([np.full(len(beams), index), beams]).astype(np.int64),
        )
        if self.prev is not None:
            tri = triangulate_pair(self.prev, _Profile(pts, valid), self.max_edge)
            lookup = np.stack([self.prev_vertex_ids, ids])
            chunk.triangles = lookup[tri.side, tri.beam]
            chunk.pair = np.full(len(tri), index - 1, dtype=np.int64)
            # first triangle of each quad has two vertices on the leading profile
            two_on_a = np.sum(tri.side == 0, axis=1) == 2
            chunk.major = np.where(two_on_a, index - 1, index).astype(np.int64)
            chunk.degenerate_quads = tri.degenerate_quads
            chunk.long_edge_triangles = tri.long_edge_triangles
        self.n_vertices += len(beams)
        self.times.append(t)
        chunk.profile_times = np.array(self.times)
        self.prev = _Profile(pts, valid)
        self.prev_vertex_ids = ids
        self.prev_index = index
        return chunk


def triangulate_stream(profiles, max_edge=None):
    """Mesh a whole profile sequence; an empty sequence gives an empty mesh."""
    stream = MeshStream(max_edge)
    return ScanMesh.concatenate([stream.push(p) for p in profiles])
