import numpy as np
import pytest

from medflow.flow import SeedSpec, domain_box, init_params
from medflow.mesh import CoupledSurfaces, icosphere
from medflow.synth import CaseSpec, generate_case


def central_difference(f, x, idx, h=1e-5):
    """Central finite difference of scalar ``f`` w.r.t. flat coordinates ``idx`` of ``x``."""
    out = np.empty(len(idx))
    flat = x.reshape(-1)
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        out[k] = (fp - fm) / (2 * h)
    return out


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def coupled_template(level, r_in=0.6, r_out=1.0):
    inner = icosphere(level, r_in)
    return CoupledSurfaces(inner, inner.with_vertices(icosphere(level, r_out).vertices))


@pytest.fixture(scope="session")
def small_instance():
    """ico-2 coupled template, a level-3 synthetic target and random G=4, S=3 grids."""
    template = coupled_template(2)
    target = generate_case(CaseSpec(seed=3), 3)
    lo, hi = domain_box(template.inner.vertices, template.outer.vertices,
                        target.inner.vertices, target.outer.vertices)
    grids = init_params(SeedSpec(7, 0.02), 3, 4, lo, hi)
    return template, target, grids


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
