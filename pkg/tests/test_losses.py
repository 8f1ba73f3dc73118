import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_difference, coupled_template, rel_err
from medflow.flow import SURFACES, Trajectory, backprop, integrate
from medflow.losses import (
    LossWeights, chamfer, curvature_weights, edge_loss, med_loss,
    normal_consistency, path_lengths, total_loss,
)
from medflow.mesh import icosphere
from gradcheck import TERMS, check_param_gradient, combined_loss, term_loss
from oracles import brute_chamfer


def test_chamfer_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(10):
        P = rng.standard_normal((300, 3))
        T = rng.standard_normal((400, 3)) * 1.1 + 0.1
        w = rng.uniform(0.5, 2.0, 400)
        value, _ = chamfer(P, T, w)
        assert abs(value - brute_chamfer(P, T, w)) < 1e-9


def test_chamfer_self_is_zero():
    m = icosphere(2)
    value, grad = chamfer(m, m, curvature_weights(m))
    assert value == 0.0 and np.all(grad == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_chamfer_nonnegative_and_translation_invariant(seed):
    rng = np.random.default_rng(seed)
    P, T = rng.standard_normal((30, 3)), rng.standard_normal((25, 3))
    shift = rng.standard_normal(3)
    a, _ = chamfer(P, T)
    b, _ = chamfer(P + shift, T + shift)
    assert a >= 0 and b == pytest.approx(a, rel=1e-9)


def test_curvature_weights_mean_one():
    m = icosphere(3)
    m = m.with_vertices(m.vertices * np.linspace(0.9, 1.1, m.n_vertices)[:, None])
    w = curvature_weights(m, 1.0)
    assert w.mean() == pytest.approx(1.0) and np.all(w > 0)


def _jittered(seed=0, level=2):
    rng = np.random.default_rng(seed)
    m = icosphere(level)
    return m.with_vertices(m.vertices + 0.03 * rng.standard_normal(m.vertices.shape))


@pytest.mark.parametrize("fn", [edge_loss, normal_consistency], ids=["edge", "normal"])
def test_vertex_gradients_match_finite_differences(fn):
    m = _jittered()
    _, grad = fn(m)
    idx = np.random.default_rng(1).choice(m.vertices.size, 60, replace=False)
    x = m.vertices.copy()
    fd = central_difference(lambda v: fn(m.with_vertices(v))[0], x, idx)
    assert np.max(rel_err(grad.ravel()[idx], fd)) < 1e-5


def test_chamfer_vertex_gradient_matches_finite_differences():
    m, t = _jittered(0), _jittered(1, 3)
    w = curvature_weights(t)
    _, grad = chamfer(m, t, w)
    idx = np.random.default_rng(2).choice(m.vertices.size, 60, replace=False)
    fd = central_difference(lambda v: chamfer(v, t, w)[0], m.vertices.copy(), idx)
    assert np.max(rel_err(grad.ravel()[idx], fd)) < 1e-5


def test_edge_loss_known_value():
    m = icosphere(0)
    L2 = np.sum((m.vertices[m.edges[:, 0]] - m.vertices[m.edges[:, 1]]) ** 2, axis=1)
    assert len(m.edges) == 30
    assert edge_loss(m)[0] == pytest.approx(L2.mean())


def test_normal_consistency_zero_on_plane():
    from medflow.mesh import Mesh
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0.0]])
    m = Mesh(v, [[0, 1, 2], [0, 2, 3]])
    assert normal_consistency(m)[0] == pytest.approx(0.0)


def _traj(states):
    return Trajectory({"W": states, "P": np.zeros_like(states)}, icosphere(0).faces)


def test_med_two_segment_unit_path():
    x = np.zeros((3, 1, 3))
    x[1, 0] = [1, 0, 0]
    x[2, 0] = [1, 1, 0]
    value, parts, _ = med_loss(Trajectory({"W": x}, np.zeros((0, 3), dtype=int)))
    assert value == 2.0 and parts["W"] == 2.0


def test_med_identity_is_zero_with_zero_gradient():
    x = np.repeat(icosphere(1).vertices[None], 4, axis=0)
    value, _, grads = med_loss(Trajectory({"W": x, "P": 2 * x}, icosphere(1).faces))
    assert value == 0.0
    assert all(np.all(g == 0) for g in grads.values())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_path_length_bounds_straight_line(seed, steps):
    x = np.random.default_rng(seed).standard_normal((steps + 1, 20, 3))
    assert np.all(path_lengths(x) >= np.linalg.norm(x[-1] - x[0], axis=1) - 1e-12)


def test_loss_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(med=-1.0)


# -- gradients through the flow ----------------------------------------------


@pytest.mark.parametrize("term", TERMS)
def test_term_gradient_wrt_grid_parameters(small_instance, term):
    err, a = check_param_gradient(small_instance, term_loss(term))
    assert np.any(a != 0)
    assert np.max(err) < 1e-4


def test_combined_gradient_wrt_grid_parameters(small_instance):
    err, _ = check_param_gradient(small_instance, combined_loss())
    assert np.max(err) < 1e-4


def test_total_loss_terms_and_total():

    tpl = coupled_template(1)
    target = coupled_template(2, 0.65, 1.05)
    x = np.stack([tpl.inner.vertices, tpl.inner.vertices * 1.01])
    y = np.stack([tpl.outer.vertices, tpl.outer.vertices * 1.02])
    traj = Trajectory({"W": x, "P": y}, tpl.inner.faces, topology=tpl.inner.topology)
    w = LossWeights(2.0, 0.5, 0.1, 0.3)
    r = total_loss(traj, target, w)
    expect = sum(2.0 * r.terms[f"chamfer_{c}"] + 0.5 * r.terms[f"edge_{c}"] + 0.1 * r.terms[f"nc_{c}"]
                 for c in SURFACES) + 0.3 * r.terms["med"]
    assert r.total == pytest.approx(expect)
    assert r.terms["med"] == pytest.approx(r.terms["med_W"] + r.terms["med_P"])
    assert r.terms["med_W"] == pytest.approx(0.01 * np.linalg.norm(tpl.inner.vertices, axis=1).mean())
    assert '"total"' in r.to_json(iteration=0)


def test_chamfer_single_pair():
    assert chamfer(np.zeros((1, 3)), np.array([[1.0, 0, 0]]))[0] == 2.0


def test_chamfer_scaled_sphere_matches_brute_force():
    m = icosphere(2)
    P, T = m.vertices, 1.01 * m.vertices
    assert abs(chamfer(P, T)[0] - brute_chamfer(P, T)) < 1e-6


def test_edge_loss_regular_tetrahedron_and_scaling():
    from medflow.mesh import Mesh
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1.0]]) / np.sqrt(8)
    tet = Mesh(v, [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    assert edge_loss(tet)[0] == pytest.approx(1.0, rel=1e-14)
    assert edge_loss(tet.with_vertices(2 * v))[0] == pytest.approx(4.0, rel=1e-14)


def test_normal_consistency_right_angle_fold():
    from medflow.mesh import Mesh
    v = np.array([[0, 0, 0], [1, 0, 0], [0.5, 1, 0], [0.5, 0, 1.0]])
    # shared edge 0-1, one face in the z=0 plane, the other in y=0
    m = Mesh(v, [[0, 1, 2], [1, 0, 3]])
    assert normal_consistency(m)[0] == pytest.approx(1.0, abs=1e-15)


def _random_hull(n, seed):
    from scipy.spatial import ConvexHull
    from medflow.mesh import Mesh
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    faces = ConvexHull(pts).simplices.copy()
    pts *= rng.uniform(0.9, 1.1, (n, 1))
    tri = pts[faces]
    inward = np.sum(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]) * tri.mean(axis=1), axis=1) < 0
    faces[inward] = faces[inward][:, ::-1]
    return Mesh(pts, faces)


def test_edge_gradient_random_50_vertex_mesh():
    m = _random_hull(50, 3)
    assert m.n_vertices == len(np.unique(m.faces))
    _, grad = edge_loss(m)
    idx = np.arange(m.vertices.size)
    fd = central_difference(lambda v: edge_loss(m.with_vertices(v))[0], m.vertices.copy(), idx)
    assert np.max(rel_err(grad.ravel(), fd)) < 1e-6


def test_normal_gradient_random_closed_mesh():
    m = _random_hull(40, 4)
    assert m.is_closed_manifold()
    _, grad = normal_consistency(m)
    idx = np.arange(m.vertices.size)
    fd = central_difference(lambda v: normal_consistency(m.with_vertices(v))[0], m.vertices.copy(), idx)
    assert np.max(rel_err(grad.ravel(), fd)) < 1e-5


def test_final_state_norm_gradient_with_zero_grids(small_instance):
    # L = sum |v^S|^2 with zero velocities: every step's gradient is 2 v^0 scattered through its stencil
    template, _, grids = small_instance
    zero = grids.copy_with(np.zeros_like(grids.params))
    traj = integrate(template, zero)
    sg = {c: np.zeros_like(x) for c, x in traj.states.items()}
    for c in SURFACES:
        sg[c][-1] = 2 * traj.states[c][-1]
    grad = backprop(traj, zero, sg)
    x0 = np.concatenate([template.inner.vertices, template.outer.vertices])
    flat, w = zero.stencil(x0)
    G3 = zero.resolution**3
    expect = np.stack([np.bincount(flat.ravel(), (w[:, :, None] * 2 * x0[:, None, :]).reshape(-1, 3)[:, k], G3)
                       for k in range(3)], axis=1)
    for s in range(zero.steps):
        np.testing.assert_allclose(grad[s].reshape(-1, 3), expect, atol=1e-12)

    def value(params):
        t = integrate(template, zero.copy_with(params))
        return sum(np.sum(t.states[c][-1] ** 2) for c in SURFACES)

    idx = np.random.default_rng(0).choice(grad.size, 100, replace=False)
    fd = central_difference(value, zero.params.copy(), idx)
    assert np.max(rel_err(grad.ravel()[idx], fd)) < 1e-6


def test_loss_on_initial_state_has_zero_parameter_gradient(small_instance):
    template, _, grids = small_instance
    traj = integrate(template, grids)
    sg = {c: np.zeros_like(x) for c, x in traj.states.items()}
    for c in SURFACES:
        sg[c][0] = 1.0
    assert np.all(backprop(traj, grids, sg) == 0)
