"""Triangle meshes, icosphere templates, curvature and normals."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Raised for structurally invalid meshes."""


class Topology:
    """Connectivity derived from a face list; shared between meshes with the same faces."""

    def __init__(self, faces: np.ndarray, n_vertices: int):
        self.faces = faces
        self.n_vertices = n_vertices

    @cached_property
    def half_edges(self) -> np.ndarray:
        f = self.faces
        return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (i < j), lexicographically sorted."""
        he = np.sort(self.half_edges, axis=1)
        return np.unique(he, axis=0)

    @cached_property
    def edge_face_pairs(self) -> np.ndarray:
        """Pairs of faces sharing an edge, one row per manifold interior edge."""
        nf = len(self.faces)
        he = np.sort(self.half_edges, axis=1)
        face_of = np.tile(np.arange(nf), 3)
        key = he[:, 0].astype(np.int64) * self.n_vertices + he[:, 1]
        order = np.argsort(key, kind="stable")
        key, face_of = key[order], face_of[order]
        same = key[1:] == key[:-1]
        return np.stack([face_of[:-1][same], face_of[1:][same]], axis=1)

    @cached_property
    def edge_face_counts(self) -> np.ndarray:
        he = np.sort(self.half_edges, axis=1)
        _, counts = np.unique(he, axis=0, return_counts=True)
        return counts

    @cached_property
    def degree(self) -> np.ndarray:
        e = self.edges
        return np.bincount(e.ravel(), minlength=self.n_vertices)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle surface.

    Parameters
    ----------
    vertices : (V, 3) float array
    faces : (F, 3) int array, counter-clockwise seen from outside
    kind : str
        Provenance tag: ``"template"``, ``"target"`` or ``"prediction"``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    kind: str = "template"
    topology: Topology | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must have shape (F, 3), got {f.shape}")
        if self.topology is None:
            if f.size and (f.min() < 0 or f.max() >= len(v)):
                bad = int(np.nonzero((f < 0).any(1) | (f >= len(v)).any(1))[0][0])
                raise MeshError(f"face {bad} has index out of range for {len(v)} vertices")
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degenerate.any():
                raise MeshError(f"face {int(np.nonzero(degenerate)[0][0])} repeats a vertex index")
            topo = Topology(f, len(v))
        else:
            topo = self.topology
            if len(v) != topo.n_vertices:
                raise MeshError("vertex count does not match shared topology")
            f = topo.faces
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "topology", topo)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def edges(self) -> np.ndarray:
        return self.topology.edges

    def with_vertices(self, vertices, kind: str | None = None) -> "Mesh":
        """Same connectivity, new positions. Topology caches are shared."""
        return Mesh(vertices, self.faces, kind or self.kind, topology=self.topology)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces

    def is_closed_manifold(self) -> bool:
        return bool(np.all(self.topology.edge_face_counts == 2))

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) array of face corner positions."""
        return self.vertices[self.faces]


@dataclass(frozen=True, eq=False)
class CoupledSurfaces:
    """Inner (white-matter analog, ``W``) and outer (pial analog, ``P``) surfaces
    sharing one tessellation."""

    inner: Mesh
    outer: Mesh

    LABELS = ("W", "P")

    def __post_init__(self):
        if self.inner.n_vertices != self.outer.n_vertices or not np.array_equal(
            self.inner.faces, self.outer.faces
        ):
            raise MeshError("inner and outer surfaces must share their tessellation")

    def __getitem__(self, label: str) -> Mesh:
        if label == "W":
            return self.inner
        if label == "P":
            return self.outer
        raise KeyError(label)

    def items(self):
        return [("W", self.inner), ("P", self.outer)]


# Canonical icosahedron, vertices (0, ±1, ±phi) and cyclic permutations.
_PHI = (1.0 + 5.0**0.5) / 2.0
_ICO_VERTICES = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=np.float64,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def _subdivide(vertices: np.ndarray, faces: np.ndarray):
    # midpoint per unique sorted edge; new vertex ids follow the sorted edge order
    nv = len(vertices)
    he = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    he = np.sort(he, axis=1)
    edges, inverse = np.unique(he, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mid = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    nf = len(faces)
    m01 = nv + inverse[:nf]
    m12 = nv + inverse[nf : 2 * nf]
    m20 = nv + inverse[2 * nf :]
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    new_faces = np.stack(
        [
            np.stack([a, m01, m20], 1),
            np.stack([b, m12, m01], 1),
            np.stack([c, m20, m12], 1),
            np.stack([m01, m12, m20], 1),
        ],
        axis=1,
    ).reshape(-1, 3)
    return np.concatenate([vertices, mid]), new_faces


def icosphere(level: int = 0, radius: float = 1.0, center=(0.0, 0.0, 0.0), kind: str = "template") -> Mesh:
    """Subdivided icosahedron projected onto a sphere.

    Has ``10 * 4**level + 2`` vertices and ``20 * 4**level`` faces. Vertex
    ordering is deterministic: original vertices first, then edge midpoints
    in sorted edge order, level by level.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    if radius <= 0:
        raise ValueError("radius must be > 0")
    v = _ICO_VERTICES / np.linalg.norm(_ICO_VERTICES, axis=1, keepdims=True)
    f = _ICO_FACES
    for _ in range(level):
        v, f = _subdivide(v, f)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return Mesh(v * radius + np.asarray(center, dtype=np.float64), f, kind)


def vertex_curvature(mesh: Mesh) -> np.ndarray:
    """Per-vertex curvature magnitude from the umbrella Laplacian.

    ``2 |(mean(neighbors) - v) . n| / mean(edge_length**2)`` with ``n`` the
    area-weighted vertex normal. Approximates ``1 / R`` on a sphere of radius
    ``R`` and vanishes on flat patches. Only the normal component is used so
    that irregular neighbor spacing does not leak in as curvature.
    """
    edges = mesh.edges
    v = mesh.vertices
    deg = mesh.topology.degree
    if np.any(deg == 0):
        raise MeshError(f"vertex {int(np.argmin(deg))} has no neighbors")
    i, j = edges[:, 0], edges[:, 1]
    nv = len(v)
    nbr_sum = np.zeros_like(v)
    for k in range(3):
        nbr_sum[:, k] = np.bincount(i, v[j, k], nv) + np.bincount(j, v[i, k], nv)
    lap = nbr_sum / deg[:, None] - v
    sq_len = np.sum((v[i] - v[j]) ** 2, axis=1)
    mean_sq = (np.bincount(i, sq_len, nv) + np.bincount(j, sq_len, nv)) / deg
    normal_part = np.abs(np.sum(lap * vertex_normals(mesh), axis=1))
    return 2.0 * normal_part / mean_sq


def _face_cross(mesh: Mesh) -> np.ndarray:
    t = mesh.triangles()
    return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])


def face_normals(mesh: Mesh) -> np.ndarray:
    """Unit normals, right-handed with respect to the face winding."""
    c = _face_cross(mesh)
    norm = np.linalg.norm(c, axis=1)
    zero = norm == 0.0
    if zero.any():
        raise MeshError(f"face {int(np.nonzero(zero)[0][0])} has zero area")
    return c / norm[:, None]


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted average of incident face normals."""
    face_normals(mesh)  # zero-area check
    c = _face_cross(mesh)
    out = np.zeros_like(mesh.vertices)
    for corner in range(3):
        idx = mesh.faces[:, corner]
        for k in range(3):
            out[:, k] += np.bincount(idx, c[:, k], mesh.n_vertices)
    return out / np.linalg.norm(out, axis=1, keepdims=True)
