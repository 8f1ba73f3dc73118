"""Per-step trilinear velocity grids, forward-Euler integration and its adjoint.

The deformation is ``v[s+1] = v[s] + f_s(v[s])`` for ``s = 0 .. S-1``, where
``f_s`` trilinearly interpolates a ``G x G x G`` lattice of control
velocities spanning an axis-aligned domain box. Both coupled surfaces are
advected by the same fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import CoupledSurfaces, Mesh, Topology

SURFACES = ("W", "P")

# (dx, dy, dz) offsets of the 8 cell corners
_CORNERS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64)


class DomainError(RuntimeError):
    """A point left the velocity-grid domain box."""

    def __init__(self, msg, step=None, index=None, surface=None):
        super().__init__(msg)
        self.step = step
        self.index = index
        self.surface = surface


@dataclass(frozen=True)
class SeedSpec:
    seed: int
    sigma: float = 1e-3


class VelocityGridStack:
    """``S`` control grids of shape ``(G, G, G, 3)`` over ``[lo, hi]``.

    ``params`` has shape ``(S, G, G, G, 3)`` and is in displacement-per-step
    units.
    """

    def __init__(self, params, lo, hi):
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 5 or params.shape[-1] != 3 or not (
            params.shape[1] == params.shape[2] == params.shape[3] >= 2
        ):
            raise ValueError(f"params must have shape (S, G, G, G, 3) with G >= 2, got {params.shape}")
        if not np.all(np.isfinite(params)):
            raise ValueError("velocity parameters must be finite")
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if np.any(hi <= lo):
            raise ValueError("domain box must have positive extent on every axis")
        self.params = params
        self.lo = lo
        self.hi = hi

    @property
    def steps(self) -> int:
        return self.params.shape[0]

    @property
    def resolution(self) -> int:
        return self.params.shape[1]

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.resolution - 1)

    def contains(self, points) -> np.ndarray:
        points = np.asarray(points)
        return np.all((points >= self.lo) & (points <= self.hi), axis=-1)

    def require_inside(self, points, what="points"):
        inside = self.contains(points)
        if not inside.all():
            i = int(np.argmin(inside))
            raise DomainError(f"{what}: point {i} at {points[i]} is outside the domain box", index=i)

    def copy_with(self, params) -> "VelocityGridStack":
        return VelocityGridStack(params, self.lo, self.hi)

    # -- trilinear stencil -------------------------------------------------

    def stencil(self, points, with_grad: bool = False):
        """Flat node indices (N, 8), weights (N, 8) and, if requested, weight
        gradients (N, 8, 3). Corners are ordered x-major, as in ``_CORNERS``.

        A coordinate exactly on an interior cell face is assigned to the lower
        cell, so the Jacobian there is the lower cell's one.
        """
        G = self.resolution
        h = self.spacing
        t = (points - self.lo) / h
        cell = np.clip(np.ceil(t).astype(np.int64) - 1, 0, G - 2)
        frac = t - cell
        base = (cell[:, 0] * G + cell[:, 1]) * G + cell[:, 2]
        offsets = (_CORNERS[:, 0] * G + _CORNERS[:, 1]) * G + _CORNERS[:, 2]
        flat = base[:, None] + offsets[None, :]
        # per-axis weights for corner offsets 0 and 1: (N, 2) each
        wx, wy, wz = (np.stack([1.0 - frac[:, k], frac[:, k]], axis=1) for k in range(3))
        wxy = wx[:, :, None] * wy[:, None, :]
        weights = (wxy[:, :, :, None] * wz[:, None, None, :]).reshape(-1, 8)
        if not with_grad:
            return flat, weights
        sx, sy, sz = (np.array([-1.0, 1.0]) / h[k] for k in range(3))
        dw = np.empty(weights.shape + (3,))
        dw[..., 0] = (sx[None, :, None, None] * (wy[:, None, :, None] * wz[:, None, None, :])).reshape(-1, 8)
        dw[..., 1] = ((wx[:, :, None] * sy[None, None, :])[:, :, :, None] * wz[:, None, None, :]).reshape(-1, 8)
        dw[..., 2] = (wxy[:, :, :, None] * sz[None, None, None, :]).reshape(-1, 8)
        return flat, weights, dw

    def sample(self, step: int, points) -> np.ndarray:
        """Velocities of grid ``step`` at ``points`` (N, 3)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if not 0 <= step < self.steps:
            raise IndexError(f"step {step} outside [0, {self.steps})")
        self.require_inside(points)
        flat, weights = self.stencil(points)
        ctrl = self.params[step].reshape(-1, 3)
        return np.einsum("nk,nkc->nc", weights, ctrl[flat])


def sample_velocity(grids: VelocityGridStack, step: int, p) -> np.ndarray:
    return grids.sample(step, np.asarray(p, dtype=np.float64)[None, :])[0]


def domain_box(*point_sets, inflate: float = 0.25):
    """Joint bounding box of ``point_sets``, extent scaled by ``1 + inflate`` about its center."""
    pts = np.concatenate([np.asarray(p).reshape(-1, 3) for p in point_sets])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * (1.0 + inflate)
    return center - half, center + half


def init_params(spec: SeedSpec, steps: int, resolution: int, lo, hi) -> VelocityGridStack:
    """Gaussian control velocities ``N(0, sigma**2)``.

    Drawn from numpy's PCG64 bit generator seeded with ``spec.seed``, as
    standard normals scaled by sigma, in C order of shape
    ``(steps, G, G, G, 3)``. ``sigma = 0`` gives the identity flow.
    """
    if spec.sigma < 0:
        raise ValueError("sigma must be >= 0")
    shape = (steps, resolution, resolution, resolution, 3)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    params = rng.standard_normal(shape) * spec.sigma
    return VelocityGridStack(params, lo, hi)


@dataclass
class Trajectory:
    """Vertex snapshots ``states[c]`` of shape ``(S + 1, V, 3)`` per surface."""

    states: dict
    faces: np.ndarray
    meta: dict = field(default_factory=dict)
    topology: Topology | None = field(default=None, repr=False, compare=False)
    # per-step stencils recorded by integrate(), reused by backprop() for the same grids
    stencils: list | None = field(default=None, repr=False, compare=False)
    stencil_grids: "VelocityGridStack | None" = field(default=None, repr=False, compare=False)

    @property
    def steps(self) -> int:
        return next(iter(self.states.values())).shape[0] - 1

    @property
    def n_vertices(self) -> int:
        return next(iter(self.states.values())).shape[1]

    @property
    def labels(self):
        return tuple(self.states)

    def final(self, label: str) -> np.ndarray:
        return self.states[label][-1]

    def mesh(self, label: str, step: int = -1, kind: str = "prediction") -> Mesh:
        if self.topology is None:
            m = Mesh(self.states[label][step], self.faces, kind)
            self.topology = m.topology
            return m
        return Mesh(self.states[label][step], self.faces, kind, topology=self.topology)

    def map(self, fn) -> "Trajectory":
        return Trajectory({c: fn(x) for c, x in self.states.items()}, self.faces, dict(self.meta), self.topology)


def _stack_template(template: CoupledSurfaces):
    return np.concatenate([template.inner.vertices, template.outer.vertices])


def integrate(template: CoupledSurfaces, grids: VelocityGridStack) -> Trajectory:
    """Forward Euler with unit step through all ``S`` grids."""
    V = template.inner.n_vertices
    x = _stack_template(template).copy()
    try:
        grids.require_inside(x, "template")
    except DomainError as exc:
        exc.step = 0
        raise
    out = np.empty((grids.steps + 1,) + x.shape)
    out[0] = x
    stencils = []
    for s in range(grids.steps):
        flat, weights, dw = grids.stencil(x, with_grad=True)
        stencils.append((flat, weights, dw))
        ctrl = grids.params[s].reshape(-1, 3)
        x = x + np.einsum("nk,nkc->nc", weights, ctrl[flat])
        inside = grids.contains(x)
        if not inside.all():
            i = int(np.argmin(inside))
            label, idx = SURFACES[i // V], i % V
            raise DomainError(
                f"vertex {idx} of surface {label} left the domain box at step {s + 1}",
                step=s + 1, index=idx, surface=label,
            )
        out[s + 1] = x
    return Trajectory({"W": out[:, :V], "P": out[:, V:]}, template.inner.faces,
                      topology=template.inner.topology, stencils=stencils, stencil_grids=grids)


def backprop(traj: Trajectory, grids: VelocityGridStack, state_grads: dict) -> np.ndarray:
    """Gradient of a loss w.r.t. all grid parameters.

    ``state_grads[c]`` holds the direct loss gradient w.r.t. every snapshot,
    shape ``(S + 1, V, 3)``. The adjoint runs backwards through
    ``a[s] = a[s+1] + J_s(v[s])^T a[s+1] + dL/dv[s]`` and scatters
    ``a[s+1]`` onto the stencil of step ``s``.
    """
    x = np.concatenate([traj.states[c] for c in SURFACES], axis=1)
    g = np.concatenate([state_grads[c] for c in SURFACES], axis=1)
    S, G = grids.steps, grids.resolution
    n_nodes = G**3
    grad = np.zeros_like(grids.params)
    adj = g[S].copy()
    cached = traj.stencils if traj.stencil_grids is grids else None
    for s in range(S - 1, -1, -1):
        if cached is not None:
            flat, weights, dw = cached[s]
        else:
            flat, weights, dw = grids.stencil(x[s], with_grad=True)
        ctrl = grids.params[s].reshape(-1, 3)
        # dL/dctrl[node] = sum over points of weight * adjoint; bincount keeps a fixed summation order
        idx = flat.ravel()
        contrib = (weights[:, :, None] * adj[:, None, :]).reshape(-1, 3)
        gs = grad[s].reshape(-1, 3)
        for c in range(3):
            gs[:, c] = np.bincount(idx, contrib[:, c], n_nodes)
        # J^T a: d f_c / d x_k = sum_corner dw[k] * ctrl[c]
        proj = np.einsum("nkc,nc->nk", ctrl[flat], adj)
        adj = adj + np.einsum("nk,nkd->nd", proj, dw) + g[s]
    return grad


# -- trajectory dump ---------------------------------------------------------

TRAJ_MAGIC = "medflow-trajectory 1"


def write_trajectory(traj: Trajectory, path, header: dict | None = None):
    """ASCII dump: ``key value`` header lines, then one ``x y z`` row per vertex
    per snapshot, surfaces in label order, snapshots ascending."""
    lines = [TRAJ_MAGIC, f"S {traj.steps}", f"V {traj.n_vertices}", "surfaces " + " ".join(traj.labels)]
    for k, v in (header or {}).items():
        lines.append(f"meta {k} {v}")
    lines.append(f"faces {len(traj.faces)}")
    lines += [f"{a} {b} {c}" for a, b, c in traj.faces.tolist()]
    for label in traj.labels:
        arr = traj.states[label].reshape(-1, 3)
        lines.append(f"states {label}")
        lines += ["%.17g %.17g %.17g" % tuple(r) for r in arr.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trajectory(path) -> Trajectory:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != TRAJ_MAGIC:
        raise ValueError(f"{path}: not a trajectory dump")
    S = int(lines[1].split()[1])
    V = int(lines[2].split()[1])
    labels = lines[3].split()[1:]
    meta = {}
    i = 4
    while lines[i].startswith("meta "):
        _, k, v = lines[i].split(" ", 2)
        meta[k] = v
        i += 1
    nf = int(lines[i].split()[1])
    faces = np.array([l.split() for l in lines[i + 1 : i + 1 + nf]], dtype=np.int64).reshape(-1, 3)
    i += 1 + nf
    states = {}
    n = (S + 1) * V
    for label in labels:
        if lines[i] != f"states {label}":
            raise ValueError(f"{path}: expected states block for {label} at line {i + 1}")
        rows = np.array([l.split() for l in lines[i + 1 : i + 1 + n]], dtype=np.float64)
        states[label] = rows.reshape(S + 1, V, 3)
        i += 1 + n
    return Trajectory(states, faces, meta)
