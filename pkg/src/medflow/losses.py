"""Reconstruction and regularization losses with analytic vertex gradients.

Every term returns ``(value, grad)`` with ``grad`` shaped like the vertex
array it differentiates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .flow import SURFACES, Trajectory
from .mesh import CoupledSurfaces, Mesh, MeshError, vertex_curvature
from .spatial import KdTree


@dataclass(frozen=True)
class LossWeights:
    chamfer: float = 1.0
    edge: float = 1.0
    normal: float = 0.001
    med: float = 0.01

    def __post_init__(self):
        for name in ("chamfer", "edge", "normal", "med"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


def curvature_weights(target: Mesh, kappa: float = 1.0) -> np.ndarray:
    """Target-side Chamfer weights ``1 + kappa * curvature``, rescaled to mean 1."""
    w = 1.0 + kappa * vertex_curvature(target)
    return w / w.mean()


def _verts(x):
    return x.vertices if isinstance(x, Mesh) else np.asarray(x, dtype=np.float64)


def chamfer(pred, target, target_weights=None, target_tree: KdTree | None = None):
    """Symmetric squared-distance Chamfer between vertex sets.

    ``mean_i |p_i - t_nn(i)|^2 + mean_j w_j |t_j - p_nn(j)|^2``. The
    gradient is taken with the nearest-neighbor assignment held fixed.
    """
    P, T = _verts(pred), _verts(target)
    if len(P) == 0 or len(T) == 0:
        raise ValueError("chamfer needs non-empty point sets")
    w = np.ones(len(T)) if target_weights is None else np.asarray(target_weights, dtype=np.float64)
    target_tree = target_tree or KdTree(T)
    nn_t, _ = target_tree.query(P)
    nn_p, _ = KdTree(P).query(T)
    d_pt = P - T[nn_t]
    d_tp = P[nn_p] - T
    n, m = len(P), len(T)
    value = np.sum(d_pt**2) / n + np.sum(w * np.sum(d_tp**2, axis=1)) / m
    grad = 2.0 * d_pt / n
    back = 2.0 * w[:, None] * d_tp / m
    for k in range(3):
        grad[:, k] += np.bincount(nn_p, back[:, k], n)
    return float(value), grad


def edge_loss(pred: Mesh):
    """Mean squared length over unique edges."""
    v = pred.vertices
    e = pred.edges
    d = v[e[:, 0]] - v[e[:, 1]]
    E = len(e)
    value = np.sum(d**2) / E
    g = 2.0 * d / E
    grad = np.zeros_like(v)
    for k in range(3):
        grad[:, k] = np.bincount(e[:, 0], g[:, k], len(v)) - np.bincount(e[:, 1], g[:, k], len(v))
    return float(value), grad


def normal_consistency(pred: Mesh):
    """Mean of ``1 - n_a . n_b`` over face pairs sharing an edge."""
    v, f = pred.vertices, pred.faces
    pairs = pred.topology.edge_face_pairs
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    e1, e2 = b - a, c - a
    cr = np.cross(e1, e2)
    norm = np.linalg.norm(cr, axis=1)
    if np.any(norm == 0):
        raise MeshError(f"face {int(np.argmin(norm))} has zero area")
    n = cr / norm[:, None]
    na, nb = n[pairs[:, 0]], n[pairs[:, 1]]
    K = len(pairs)
    dots = np.sum(na * nb, axis=1)
    value = np.sum(1.0 - dots) / K
    # d(-dot/K)/dn_a = -n_b / K, accumulate per face
    gn = np.zeros_like(n)
    for k in range(3):
        gn[:, k] = -(np.bincount(pairs[:, 0], nb[:, k], len(f)) + np.bincount(pairs[:, 1], na[:, k], len(f))) / K
    # through normalization: dn = (I - n n^T) dcr / |cr|
    gcr = (gn - np.sum(gn * n, axis=1, keepdims=True) * n) / norm[:, None]
    # cr = e1 x e2: d/de1 = e2 x g, d/de2 = g x e1
    g1 = np.cross(e2, gcr)
    g2 = np.cross(gcr, e1)
    grad = np.zeros_like(v)
    nv = len(v)
    for k in range(3):
        grad[:, k] = (
            np.bincount(f[:, 1], g1[:, k], nv)
            + np.bincount(f[:, 2], g2[:, k], nv)
            - np.bincount(f[:, 0], g1[:, k] + g2[:, k], nv)
        )
    return float(value), grad


def path_lengths(states: np.ndarray) -> np.ndarray:
    """Per-vertex polyline length of a ``(S + 1, V, 3)`` snapshot array."""
    return np.sum(np.linalg.norm(np.diff(states, axis=0), axis=2), axis=0)


def med_loss(traj: Trajectory):
    """Mean vertex path length, summed over surfaces.

    Returns the value, the per-surface contributions and the gradient
    w.r.t. every snapshot. Zero-length segments get a zero subgradient.
    """
    per_surface = {}
    grads = {}
    for c, x in traj.states.items():
        V = x.shape[1]
        seg = np.diff(x, axis=0)
        ln = np.linalg.norm(seg, axis=2)
        per_surface[c] = float(np.sum(ln) / V)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(ln[..., None] > 0, seg / ln[..., None], 0.0) / V
        g = np.zeros_like(x)
        g[1:] += u
        g[:-1] -= u
        grads[c] = g
    return float(sum(per_surface.values())), per_surface, grads


@dataclass
class LossReport:
    terms: dict
    total: float
    grads: dict = field(repr=False)

    def to_record(self, **extra) -> dict:
        rec = dict(extra)
        rec.update(self.terms)
        rec["total"] = self.total
        return rec

    def to_json(self, **extra) -> str:
        return json.dumps(self.to_record(**extra), sort_keys=False)


class TargetCache:
    """Per-target structures reused across optimization iterations."""

    def __init__(self, target: CoupledSurfaces, kappa: float = 1.0):
        self.target = target
        self.trees = {c: KdTree(target[c].vertices) for c in SURFACES}
        self.weights = {c: curvature_weights(target[c], kappa) for c in SURFACES}


def total_loss(traj: Trajectory, target: CoupledSurfaces, weights: LossWeights = LossWeights(),
               cache: TargetCache | None = None, kappa: float = 1.0) -> LossReport:
    """Chamfer, edge and normal terms on the final state of both surfaces plus
    ``weights.med`` times the path-length regularizer on the whole trajectory."""
    cache = cache or TargetCache(target, kappa)
    terms = {}
    grads = {c: np.zeros_like(x) for c, x in traj.states.items()}
    total = 0.0
    for c in SURFACES:
        final = traj.mesh(c)
        ch, g_ch = chamfer(final, target[c], cache.weights[c], cache.trees[c])
        ed, g_ed = edge_loss(final)
        nc, g_nc = normal_consistency(final)
        terms[f"chamfer_{c}"] = ch
        terms[f"edge_{c}"] = ed
        terms[f"nc_{c}"] = nc
        total += weights.chamfer * ch + weights.edge * ed + weights.normal * nc
        grads[c][-1] += weights.chamfer * g_ch + weights.edge * g_ed + weights.normal * g_nc
    med, med_parts, g_med = med_loss(traj)
    terms["med"] = med
    for c in SURFACES:
        terms[f"med_{c}"] = med_parts[c]
    if weights.med:
        total += weights.med * med
        for c in SURFACES:
            grads[c] += weights.med * g_med[c]
    return LossReport(terms, float(total), grads)
