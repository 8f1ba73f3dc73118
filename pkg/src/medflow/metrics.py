"""Evaluation metrics: ASSD, %SIF, test-retest distance, deformation energy
and multi-seed per-vertex RMSD."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .flow import Trajectory
from .losses import path_lengths
from .mesh import Mesh
from .spatial import KdTree, TriBvh, point_surface_distance, self_intersecting_faces

CSV_COLUMNS = ("metric", "surface", "lambda", "mean", "sd", "n")


def directed_surface_distance(src: Mesh, dst: Mesh) -> float:
    """Mean distance from the vertices of ``src`` to the surface of ``dst``."""
    return float(point_surface_distance(src.vertices, dst, TriBvh(dst), KdTree(dst.vertices)).mean())


def assd(pred: Mesh, ref: Mesh) -> float:
    """Average symmetric surface distance (vertex-to-triangle, both directions)."""
    a = directed_surface_distance(pred, ref)
    b = directed_surface_distance(ref, pred)
    return 0.5 * (a + b)


def sif_percent(mesh: Mesh) -> float:
    """Percentage of faces that intersect a non-adjacent face."""
    return 100.0 * len(self_intersecting_faces(mesh)) / mesh.n_faces


def trt_reliability(recon_a: Mesh, recon_b: Mesh) -> float:
    """Test-retest distance: ASSD between reconstructions of two acquisitions."""
    return assd(recon_a, recon_b)


def normalize_points(points, box):
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    extent = hi - lo
    if np.any(extent <= 0):
        raise ValueError("normalization box must have positive extent on every axis")
    return (np.asarray(points) - lo) / extent


def deformation_energy(traj: Trajectory, box) -> tuple[dict, dict]:
    """Per-vertex path length in unit-cube coordinates of ``box``.

    Returns ``(scalar per surface, per-vertex array per surface)``; the
    scalar is the vertex mean, i.e. the surface's path-length regularizer
    term evaluated in normalized space.
    """
    per_vertex = {c: path_lengths(normalize_points(x, box)) for c, x in traj.states.items()}
    scalars = {c: float(np.sum(v) / len(v)) for c, v in per_vertex.items()}
    return scalars, per_vertex


@dataclass
class RunBundle:
    """Trajectories of one case reconstructed with different seeds."""

    case: str
    trajectories: list
    seeds: list

    def __post_init__(self):
        if len(self.trajectories) < 2:
            raise ValueError("RMSD needs at least two runs")
        if len(set(self.seeds)) != len(self.seeds) or len(self.seeds) != len(self.trajectories):
            raise ValueError("seeds must be distinct, one per trajectory")
        ref = self.trajectories[0]
        for t in self.trajectories[1:]:
            if t.n_vertices != ref.n_vertices or t.labels != ref.labels or not np.array_equal(t.faces, ref.faces):
                raise ValueError("all runs must share topology and surfaces")


def rmsd(bundle: RunBundle) -> dict:
    """Per-vertex RMSD of final positions around their across-run mean.

    Returns ``{surface: per-vertex array}``.
    """
    out = {}
    for c in bundle.trajectories[0].labels:
        X = np.stack([t.final(c) for t in bundle.trajectories])
        # offsets from the first run, so identical runs give exact zeros
        D = X - X[0]
        dev = D - D.mean(axis=0)
        out[c] = np.sqrt(np.mean(np.sum(dev**2, axis=2), axis=0))
    return out


def mean_sd(values, ddof: int = 1) -> tuple[float, float, int]:
    values = np.asarray(values, dtype=np.float64).ravel()
    n = len(values)
    sd = float(np.std(values, ddof=ddof)) if n > ddof else 0.0
    return float(np.mean(values)), sd, n


@dataclass
class MetricsTable:
    """Rows of ``(metric, surface, lambda, mean, sd, n)``."""

    rows: list = field(default_factory=list)

    def add(self, metric, surface, lam, mean, sd, n):
        self.rows.append((metric, surface, float(lam), float(mean), float(sd), int(n)))

    def get(self, metric, surface, lam):
        for r in self.rows:
            if r[0] == metric and r[1] == surface and r[2] == float(lam):
                return r
        raise KeyError((metric, surface, lam))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for m, s, lam, mean, sd, n in self.rows:
            w.writerow([m, s, repr(lam), repr(mean), repr(sd), n])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsTable":
        rd = csv.reader(io.StringIO(text))
        header = next(rd)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected metrics header {header}")
        t = cls()
        for m, s, lam, mean, sd, n in rd:
            t.add(m, s, float(lam), float(mean), float(sd), int(n))
        return t
