"""Independent reference implementations used by the tests."""

import numpy as np

from medflow.mesh import icosphere


def brute_nearest(points, q):
    d = np.sqrt(np.sum((points - q) ** 2, axis=1))
    i = int(np.argmin(d))  # argmin returns the lowest index among ties
    return i, d[i]


def brute_chamfer(P, T, w=None):
    w = np.ones(len(T)) if w is None else w
    d = np.sum((P[:, None, :] - T[None, :, :]) ** 2, axis=2)
    return d.min(axis=1).mean() + np.mean(w * d.min(axis=0))


def sat_intersect(A, B):
    """Separating-axis test for batches of closed triangles, shape (P, 3, 3)."""
    ea = [A[:, (i + 1) % 3] - A[:, i] for i in range(3)]
    eb = [B[:, (i + 1) % 3] - B[:, i] for i in range(3)]
    na, nb = np.cross(ea[0], ea[1]), np.cross(eb[0], eb[1])
    axes = [na, nb] + [np.cross(x, y) for x in ea for y in eb]
    axes += [np.cross(na, e) for e in ea] + [np.cross(nb, e) for e in eb]
    hit = np.ones(len(A), dtype=bool)
    for ax in axes:
        pa = np.einsum("pkc,pc->pk", A, ax)
        pb = np.einsum("pkc,pc->pk", B, ax)
        sep = (pa.max(1) < pb.min(1)) | (pb.max(1) < pa.min(1))
        hit &= ~(sep & (np.sum(ax * ax, axis=1) >= 1e-20))
    return hit


def exhaustive_sif(mesh):
    """Faces hitting a face they share no vertex with, by testing every pair."""
    i, j = np.triu_indices(mesh.n_faces, 1)
    fi, fj = mesh.faces[i], mesh.faces[j]
    adjacent = np.any(fi[:, :, None] == fj[:, None, :], axis=(1, 2))
    i, j = i[~adjacent], j[~adjacent]
    tri = mesh.triangles()
    hit = sat_intersect(tri[i], tri[j])
    return set(np.concatenate([i[hit], j[hit]]).tolist())


def jittered_sphere(seed, level, scale):
    rng = np.random.default_rng(seed)
    m = icosphere(level)
    return m.with_vertices(m.vertices + scale * rng.standard_normal(m.vertices.shape))


def sif_corpus():
    """20 unit icospheres crumpled by isotropic jitter of 0.5 (half the radius), at most 500 faces."""
    return [jittered_sphere(s, 1 if s < 10 else 2, 0.5) for s in range(20)]
