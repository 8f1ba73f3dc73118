"""Exact nearest neighbors, point-to-triangle distance and self-intersection
detection with a bounding-volume hierarchy."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import Mesh

DET_EPS = 1e-12


class KdTree:
    """Exact Euclidean nearest-neighbor index over a fixed point set.

    Search is delegated to :class:`scipy.spatial.cKDTree` (median splits on
    the widest axis). Returned distances are recomputed as
    ``sqrt(sum((p - q)**2))`` and exact ties go to the lowest point index.
    """

    _TIE_K = 2

    def __init__(self, points, leafsize: int = 16):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("points must have shape (N, 3)")
        if len(points) == 0:
            raise ValueError("cannot build a KdTree over an empty point set")
        self.points = points
        self.leafsize = leafsize
        self._tree = cKDTree(points, leafsize=leafsize, balanced_tree=True, compact_nodes=True)

    def __len__(self):
        return len(self.points)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Nearest point index and distance for each row of ``queries``."""
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        k = min(self._TIE_K, len(self.points))
        _, idx = self._tree.query(q, k=k)
        idx = idx.reshape(len(q), k)
        d = np.sqrt(np.sum((self.points[idx] - q[:, None, :]) ** 2, axis=2))
        # lexicographic (distance, index) minimum among the k candidates
        best = np.argmin(d, axis=1)
        dmin = d[np.arange(len(q)), best]
        tied = d == dmin[:, None]
        idx_masked = np.where(tied, idx, np.iinfo(np.int64).max)
        out_idx = idx_masked.min(axis=1)
        if k < len(self.points):
            # all k candidates tied: the tie set may extend beyond k
            for row in np.nonzero(tied.all(axis=1))[0]:
                ball = self._tree.query_ball_point(q[row], dmin[row] * (1 + 1e-12) + 1e-300)
                ball = np.asarray(ball)
                dd = np.sqrt(np.sum((self.points[ball] - q[row]) ** 2, axis=1))
                out_idx[row] = ball[dd == dd.min()].min()
        return out_idx, dmin

    def nearest(self, query) -> tuple[int, float]:
        idx, dist = self.query(np.asarray(query, dtype=np.float64)[None, :])
        return int(idx[0]), float(dist[0])


class TriBvh:
    """Axis-aligned bounding-box hierarchy over the faces of a mesh.

    Nodes are stored in flat arrays. Leaves own a contiguous slice of
    ``face_order``. Internal nodes split at the median face centroid along
    the widest centroid axis.
    """

    def __init__(self, mesh: Mesh, leaf_size: int = 4):
        tri = mesh.triangles()
        self.mesh = mesh
        self.leaf_size = leaf_size
        self.face_lo = tri.min(axis=1)
        self.face_hi = tri.max(axis=1)
        cent = tri.mean(axis=1)
        order = np.arange(mesh.n_faces)
        lo, hi, left, right, start, count = [], [], [], [], [], []

        def new_node(ids):
            lo.append(self.face_lo[ids].min(axis=0))
            hi.append(self.face_hi[ids].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            return len(lo) - 1

        if mesh.n_faces == 0:
            raise ValueError("cannot build a BVH over a mesh without faces")
        root = new_node(order)
        stack = [(root, 0, mesh.n_faces)]
        while stack:
            node, a, b = stack.pop()
            ids = order[a:b]
            if b - a <= leaf_size:
                start[node], count[node] = a, b - a
                continue
            c = cent[ids]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            ids = ids[np.argsort(c[:, axis], kind="stable")]
            order[a:b] = ids
            m = (a + b) // 2
            ln, rn = new_node(order[a:m]), new_node(order[m:b])
            left[node], right[node] = ln, rn
            stack.append((rn, m, b))
            stack.append((ln, a, m))
        self.node_lo = np.array(lo)
        self.node_hi = np.array(hi)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        self.face_order = order

    @property
    def n_nodes(self) -> int:
        return len(self.node_lo)

    def query_boxes(self, qlo, qhi) -> tuple[np.ndarray, np.ndarray]:
        """All (query, face) pairs whose boxes overlap (closed intervals).

        Traverses the tree breadth-first for all queries at once. The result
        is sorted by query then face index.
        """
        qlo = np.asarray(qlo, dtype=np.float64).reshape(-1, 3)
        qhi = np.asarray(qhi, dtype=np.float64).reshape(-1, 3)
        qi = np.arange(len(qlo))
        ni = np.zeros(len(qlo), dtype=np.int64)
        out_q, out_f = [], []
        while len(qi):
            hit = np.all((qlo[qi] <= self.node_hi[ni]) & (qhi[qi] >= self.node_lo[ni]), axis=1)
            qi, ni = qi[hit], ni[hit]
            leaf = self.left[ni] < 0
            lq, ln = qi[leaf], ni[leaf]
            if len(lq):
                cnt = self.count[ln]
                rep_q = np.repeat(lq, cnt)
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                faces = self.face_order[np.repeat(self.start[ln], cnt) + offs]
                keep = np.all((qlo[rep_q] <= self.face_hi[faces]) & (qhi[rep_q] >= self.face_lo[faces]), axis=1)
                out_q.append(rep_q[keep])
                out_f.append(faces[keep])
            iq, inn = qi[~leaf], ni[~leaf]
            qi = np.concatenate([iq, iq])
            ni = np.concatenate([self.left[inn], self.right[inn]])
        if not out_q:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        q = np.concatenate(out_q)
        f = np.concatenate(out_f)
        order = np.lexsort((f, q))
        return q[order], f[order]


# ---------------------------------------------------------------------------
# point to triangle


def closest_points_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest point of each triangle ``(a, b, c)`` to ``p`` (row-wise).

    Classifies ``p`` into the seven Voronoi regions of the triangle
    (three vertices, three edges, interior).
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v_in = vb * denom
        w_in = vc * denom
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    out = a + ab * v_in[:, None] + ac * w_in[:, None]
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        nonlocal done
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done |= m

    assign((d1 <= 0) & (d2 <= 0), a)
    assign((d3 >= 0) & (d4 <= d3), b)
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * t_ab[:, None])
    assign((d6 >= 0) & (d5 <= d6), c)
    assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * t_ac[:, None])
    assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + (c - b) * t_bc[:, None])
    return out


def point_triangle_distance(p, tri) -> tuple[float, np.ndarray]:
    """Distance from ``p`` to the closed triangle ``tri`` (3x3) and the closest point."""
    tri = np.asarray(tri, dtype=np.float64)
    area = 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    if area <= 1e-12:
        raise ValueError("degenerate triangle")
    q = closest_points_on_triangles(np.asarray(p, dtype=np.float64)[None], tri[0][None], tri[1][None], tri[2][None])[0]
    return float(np.linalg.norm(np.asarray(p) - q)), q


def point_surface_distance(points, mesh: Mesh, bvh: TriBvh | None = None, vertex_tree: KdTree | None = None) -> np.ndarray:
    """Distance from each point to the surface of ``mesh``.

    The nearest mesh vertex gives an upper bound ``r``; only faces whose
    boxes overlap the cube of half-width ``r`` around the point are tested.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    bvh = bvh or TriBvh(mesh)
    vertex_tree = vertex_tree or KdTree(mesh.vertices)
    _, bound = vertex_tree.query(points)
    q, f = bvh.query_boxes(points - bound[:, None], points + bound[:, None])
    tri = mesh.triangles()[f]
    cp = closest_points_on_triangles(points[q], tri[:, 0], tri[:, 1], tri[:, 2])
    d = np.sqrt(np.sum((points[q] - cp) ** 2, axis=1))
    out = bound.copy()
    np.minimum.at(out, q, d)
    return out


# ---------------------------------------------------------------------------
# triangle-triangle intersection


def _orient(a, b, c, d):
    """Signed volume determinant det[b - a, c - a, d - a], row-wise."""
    return np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a))


def _sign(x):
    s = np.sign(x)
    s[np.abs(x) <= DET_EPS] = 0.0
    return s


def _segment_hits_triangle(p, q, a, b, c):
    sp = _sign(_orient(a, b, c, p))
    sq = _sign(_orient(a, b, c, q))
    straddle = (sp * sq <= 0) & ~((sp == 0) & (sq == 0))
    s1 = _sign(_orient(p, q, a, b))
    s2 = _sign(_orient(p, q, b, c))
    s3 = _sign(_orient(p, q, c, a))
    inside = ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
    return straddle & inside


def _cross2(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect_2d(p1, p2, q1, q2):
    d1, d2 = _cross2(q1, q2, p1), _cross2(q1, q2, p2)
    d3, d4 = _cross2(p1, p2, q1), _cross2(p1, p2, q2)
    if ((d1 > DET_EPS and d2 < -DET_EPS) or (d1 < -DET_EPS and d2 > DET_EPS)) and (
        (d3 > DET_EPS and d4 < -DET_EPS) or (d3 < -DET_EPS and d4 > DET_EPS)
    ):
        return True

    def on_seg(p, q, r, d):
        return abs(d) <= DET_EPS and min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(p[1], q[1])

    return on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2) or on_seg(p1, p2, q1, d3) or on_seg(p1, p2, q2, d4)


def _point_in_tri_2d(p, t):
    s = [_cross2(t[i], t[(i + 1) % 3], p) for i in range(3)]
    return all(x >= -DET_EPS for x in s) or all(x <= DET_EPS for x in s)


def _coplanar_overlap(A, B) -> bool:
    n = np.cross(A[1] - A[0], A[2] - A[0])
    drop = int(np.argmax(np.abs(n)))
    keep = [k for k in range(3) if k != drop]
    a, b = A[:, keep], B[:, keep]
    for i in range(3):
        for j in range(3):
            if _segments_intersect_2d(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]):
                return True
    return _point_in_tri_2d(a[0], b) or _point_in_tri_2d(b[0], a)


def triangles_intersect(A, B) -> np.ndarray:
    """Row-wise closed intersection test for triangle batches of shape (P, 3, 3).

    Determinants with magnitude <= ``DET_EPS`` count as zero. Non-coplanar
    pairs intersect iff an edge of one pierces the other; coplanar pairs are
    resolved in 2D.
    """
    A = np.asarray(A, dtype=np.float64).reshape(-1, 3, 3)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 3, 3)
    a0, a1, a2 = A[:, 0], A[:, 1], A[:, 2]
    b0, b1, b2 = B[:, 0], B[:, 1], B[:, 2]
    sb = np.stack([_sign(_orient(a0, a1, a2, b)) for b in (b0, b1, b2)], 1)
    sa = np.stack([_sign(_orient(b0, b1, b2, a)) for a in (a0, a1, a2)], 1)
    separated = (np.all(sb > 0, 1) | np.all(sb < 0, 1) | np.all(sa > 0, 1) | np.all(sa < 0, 1))
    coplanar = np.all(sb == 0, 1) | np.all(sa == 0, 1)
    hit = np.zeros(len(A), dtype=bool)
    for i in range(3):
        j = (i + 1) % 3
        hit |= _segment_hits_triangle(A[:, i], A[:, j], b0, b1, b2)
        hit |= _segment_hits_triangle(B[:, i], B[:, j], a0, a1, a2)
    hit &= ~separated & ~coplanar
    for k in np.nonzero(coplanar & ~separated)[0]:
        hit[k] = _coplanar_overlap(A[k], B[k])
    return hit


def candidate_face_pairs(mesh: Mesh, bvh: TriBvh) -> np.ndarray:
    """Face pairs (i < j) with overlapping boxes and no shared vertex index."""
    q, f = bvh.query_boxes(bvh.face_lo, bvh.face_hi)
    keep = q < f
    q, f = q[keep], f[keep]
    fa, fb = mesh.faces[q], mesh.faces[f]
    shared = np.any(fa[:, :, None] == fb[:, None, :], axis=(1, 2))
    return np.stack([q[~shared], f[~shared]], axis=1)


def self_intersecting_faces(mesh: Mesh, bvh: TriBvh | None = None) -> set[int]:
    """Indices of faces that intersect a non-adjacent face of the same mesh.

    Faces sharing a vertex index are never tested against each other.
    """
    bvh = bvh or TriBvh(mesh)
    pairs = candidate_face_pairs(mesh, bvh)
    if len(pairs) == 0:
        return set()
    tri = mesh.triangles()
    hit = triangles_intersect(tri[pairs[:, 0]], tri[pairs[:, 1]])
    return set(np.unique(pairs[hit]).tolist())


count_self_intersecting_faces = self_intersecting_faces
