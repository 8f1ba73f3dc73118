"""Coupled synthetic target surfaces: concentric spheres with shared radial bumps."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .mesh import CoupledSurfaces, Mesh, icosphere


@dataclass(frozen=True)
class CaseSpec:
    """Parameters of one synthetic case.

    The radial height field is ``amplitude * tanh(sum_k u_k exp(-theta_k^2 / (2 width^2)))``
    with ``theta_k`` the angle to bump center ``k`` and ``u_k ~ U(-1, 1)``,
    so ``|h| < amplitude`` everywhere.
    """

    seed: int
    n_bumps: int = 8
    amplitude: float = 0.12
    inner_radius: float = 0.6
    outer_radius: float = 1.0
    width: float = 0.45
    sigma_trt: float = 0.0

    def validate(self):
        if not 0 < self.inner_radius < self.outer_radius:
            raise ValueError("radii must satisfy 0 < inner < outer")
        if not 0 <= self.amplitude < (self.outer_radius - self.inner_radius) / 2:
            raise ValueError("amplitude must lie in [0, (outer - inner) / 2)")
        if self.n_bumps < 0 or self.width <= 0:
            raise ValueError("n_bumps must be >= 0 and width > 0")
        if self.sigma_trt < 0:
            raise ValueError("sigma_trt must be >= 0")

    def to_dict(self):
        return asdict(self)


def height_field(spec: CaseSpec, directions: np.ndarray) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    centers = rng.standard_normal((spec.n_bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    heights = rng.uniform(-1.0, 1.0, spec.n_bumps)
    cosang = np.clip(directions @ centers.T, -1.0, 1.0)
    theta = np.arccos(cosang)
    raw = np.exp(-(theta**2) / (2.0 * spec.width**2)) @ heights
    return spec.amplitude * np.tanh(raw)


def generate_case(spec: CaseSpec, level: int = 4) -> CoupledSurfaces:
    """Inner and outer radial graphs over an icosphere sharing one height field.

    The outer radius is ``R_o + h`` and the inner ``R_i + (R_i / R_o) h``, so
    the two surfaces never cross (``|h| < (R_o - R_i) / 2``).
    """
    spec.validate()
    sphere = icosphere(level)
    d = sphere.vertices
    h = height_field(spec, d)
    r_out = spec.outer_radius + h
    r_in = spec.inner_radius + (spec.inner_radius / spec.outer_radius) * h
    inner = Mesh(d * r_in[:, None], sphere.faces, "target")
    outer = Mesh(d * r_out[:, None], sphere.faces, "target", topology=inner.topology)
    return CoupledSurfaces(inner, outer)


def perturb_target(target: CoupledSurfaces, sigma: float, draw_seed) -> CoupledSurfaces:
    """Add isotropic Gaussian noise ``N(0, sigma^2 I)`` to every vertex of both surfaces.

    ``draw_seed`` is an int or a sequence of ints (PCG64 seed entropy).
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return target
    rng = np.random.Generator(np.random.PCG64(draw_seed))
    out = []
    for mesh in (target.inner, target.outer):
        noise = rng.standard_normal(mesh.vertices.shape) * sigma
        out.append(mesh.with_vertices(mesh.vertices + noise))
    return CoupledSurfaces(*out)


def mesh_hash(mesh: Mesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.faces).tobytes())
    return h.hexdigest()
