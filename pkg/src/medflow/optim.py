"""Adam and the per-target fitting loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import SURFACES, SeedSpec, Trajectory, VelocityGridStack, backprop, domain_box, init_params, integrate
from .losses import LossReport, LossWeights, TargetCache, path_lengths, total_loss
from .mesh import CoupledSurfaces


class FitDivergence(RuntimeError):
    def __init__(self, iteration: int, term: str, msg: str = ""):
        super().__init__(f"non-finite {term} at iteration {iteration}{': ' + msg if msg else ''}")
        self.iteration = iteration
        self.term = term


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params, grads, state: AdamState, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new params, updates ``state`` in place."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("params, grads and state must have identical shapes")
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grads
    state.v *= beta2
    state.v += (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class FitConfig:
    steps: int = 10
    resolution: int = 8
    iterations: int = 400
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_sigma: float = 1e-3
    kappa: float = 1.0
    box_inflate: float = 0.25
    weights: LossWeights = field(default_factory=LossWeights)


@dataclass
class FitResult:
    trajectory: Trajectory
    grids: VelocityGridStack
    history: list
    best_iteration: int
    best_loss: float


def _check_finite(report: LossReport, iteration: int):
    for name, val in report.terms.items():
        if not np.isfinite(val):
            raise FitDivergence(iteration, name)
    if not np.isfinite(report.total):
        raise FitDivergence(iteration, "total")
    for c, g in report.grads.items():
        if not np.all(np.isfinite(g)):
            raise FitDivergence(iteration, f"gradient[{c}]")


def check_triangle_inequality(traj: Trajectory):
    """Path length can never be shorter than the straight-line displacement."""
    for c, x in traj.states.items():
        path = path_lengths(x)
        straight = np.linalg.norm(x[-1] - x[0], axis=1)
        if np.any(path < straight):
            raise AssertionError(f"surface {c}: path length below straight-line displacement")


def fit(template: CoupledSurfaces, target: CoupledSurfaces, config: FitConfig = FitConfig(),
        seed: int = 0, box=None, callback=None) -> FitResult:
    """Optimize per-step velocity grids so the template flows onto ``target``.

    Runs exactly ``config.iterations`` Adam updates and returns the iterate
    with the lowest total loss (the initial state included).
    """
    if box is None:
        box = domain_box(template.inner.vertices, template.outer.vertices,
                         target.inner.vertices, target.outer.vertices, inflate=config.box_inflate)
    lo, hi = box
    grids = init_params(SeedSpec(seed, config.init_sigma), config.steps, config.resolution, lo, hi)
    for c in SURFACES:
        grids.require_inside(target[c].vertices, f"target {c}")
    cache = TargetCache(target, config.kappa)
    state = AdamState.zeros_like(grids.params)
    params = grids.params
    history = []
    best = (np.inf, -1, None, None)
    for it in range(config.iterations + 1):
        grids = grids.copy_with(params)
        traj = integrate(template, grids)
        report = total_loss(traj, target, config.weights, cache)
        _check_finite(report, it)
        history.append(report.to_record(iteration=it))
        if callback is not None:
            callback(it, report)
        if report.total < best[0]:
            best = (report.total, it, traj, grids)
        if it == config.iterations:
            break
        grad = backprop(traj, grids, report.grads)
        if not np.all(np.isfinite(grad)):
            raise FitDivergence(it, "parameter gradient")
        params = adam_step(params, grad, state, config.lr, config.beta1, config.beta2, config.eps)
    best_loss, best_it, traj, grids = best
    check_triangle_inequality(traj)
    traj.meta.update(seed=seed, best_iteration=best_it)
    return FitResult(traj, grids, history, best_it, float(best_loss))
