import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmlab.domain import build_domain
from hmlab.energy import EIGHT_PI, cell_energy, dirichlet_energy
from hmlab.fields import BoundaryTrace, VectorField, constant_field, hedgehog, hedgehog_values, normalize, random_field
from hmlab.minimizer import (
    ENERGY_FLOOR,
    TIE_TOL,
    SolverError,
    SolverParams,
    candidate_centers,
    descend,
    edge_energy,
    harmonic_extension,
    minimize,
    project_extension,
    project_from,
    unproject_from,
    w12_distance,
)
from hmlab.singularity import count_singular, detect_singularities
from hmlab.trace_norms import TraceFamily, make_trace

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


# -- parameters ------------------------------------------------------------------------


def test_solver_params_validation():
    with pytest.raises(ValueError):
        SolverParams(tau=0.0)
    with pytest.raises(ValueError):
        SolverParams(rel_tol=0.0)
    with pytest.raises(ValueError):
        SolverParams(restarts=0)
    h = 0.1
    assert SolverParams().step(h) == pytest.approx(h * h / 6)
    assert SolverParams(tau=h * h / 12).step(h) == pytest.approx(h * h / 12)
    with pytest.raises(ValueError):
        SolverParams(tau=h * h / 5).step(h)


def test_edge_energy_matches_cell_sum(ball17, rng):
    t = BoundaryTrace(ball17.surface, normalize(rng.standard_normal((ball17.surface.n_vertices, 3))))
    u = random_field(ball17, t, rng)
    # numba edge loop against the numpy cell sweep
    assert edge_energy(ball17, u.nodes) == pytest.approx(float(cell_energy(ball17, u.nodes).sum()), rel=1e-12)


# -- harmonic extension -------------------------------------------------------------------


def test_harmonic_extension_constant(ball33):
    t = make_trace(TraceFamily("constant", value=(0.6, 0.0, 0.8)), ball33.surface)
    v = harmonic_extension(ball33, t)
    assert np.allclose(v.nodes[ball33.node_mask], (0.6, 0.0, 0.8), atol=1e-12)


def test_harmonic_extension_linear_on_cube():
    g = build_domain("cube", 17)
    # linear data is harmonic; values need not be unit for the linear solve
    t = SimpleNamespace(surface=g.surface, values=g.surface.vertices.copy())
    v = harmonic_extension(g, t)
    pos = g.node_positions()
    assert np.abs(v.nodes[g.node_mask] - pos[g.node_mask]).max() <= 1e-10


@pytest.mark.parametrize("n", [33, 49])
def test_harmonic_extension_identity_on_ball(n):
    g = build_domain("ball", n)
    v = harmonic_extension(g, make_trace(TraceFamily("identity"), g.surface))
    pos = g.node_positions()
    # the shell carries x/|x| at the projected points, an O(h) change from x
    assert np.abs(v.nodes[g.node_mask] - pos[g.node_mask]).max() <= 1.5 * g.h


def test_harmonic_extension_residual(ball33, rng):
    from hmlab.minimizer import topology

    t = BoundaryTrace(ball33.surface, normalize(rng.standard_normal((ball33.surface.n_vertices, 3))))
    v = harmonic_extension(ball33, t)
    top = topology(ball33)
    u = np.where(ball33.node_mask[..., None], v.nodes, 0.0).reshape(-1, 3)
    lap = u[top.nbrs].sum(axis=1) - 6 * u[top.free]
    assert np.abs(lap).max() <= 1e-8


# -- projected extension ----------------------------------------------------------------


@given(st.integers(0, 2**32 - 1), st.floats(-0.45, 0.45), st.floats(-0.45, 0.45), st.floats(-0.2, 0.2))
@settings(max_examples=50, deadline=None)
def test_unproject_inverts_project(seed, a0, a1, a2):
    a = np.array([a0, a1, a2])
    xi = normalize(np.random.default_rng(seed).standard_normal((20, 3)))
    assert np.allclose(unproject_from(a, project_from(a, xi)), xi, atol=1e-12)
    eta = normalize(np.random.default_rng(seed + 1).standard_normal((20, 3)))
    hit = unproject_from(a, eta)
    assert np.allclose(np.linalg.norm(hit, axis=1), 1.0, atol=1e-12)
    assert np.allclose(project_from(a, hit), eta, atol=1e-12)


def test_candidate_lattice():
    c = candidate_centers()
    assert np.all(np.linalg.norm(c, axis=1) < 0.5)
    assert len(c) > 500
    # a = 0 is on the lattice, where the projection is the identity
    assert np.abs(c).sum(axis=1).min() <= 1e-15


def test_project_extension_unit_input(ball17, rng):
    t = BoundaryTrace(ball17.surface, normalize(rng.standard_normal((ball17.surface.n_vertices, 3))))
    u = random_field(ball17, t, rng)
    res = project_extension(VectorField(ball17, u.nodes, u.vertex_values))
    m = ball17.node_mask
    # every Pi_a^-1 o u_a returns a unit field unchanged
    assert np.allclose(res.field.nodes[m], u.nodes[m], atol=1e-12)
    assert res.energy_ratio <= 1 + 1e-9


def test_project_extension_brute_force():
    g = build_domain("cube", 9)
    rng = np.random.default_rng(7)
    nodes = 0.8 * rng.standard_normal((9, 9, 9, 3))
    nodes[g.shell_mask] = normalize(nodes[g.shell_mask])
    v = VectorField(g, nodes, normalize(rng.standard_normal((g.surface.n_vertices, 3))))
    cands = candidate_centers()
    res = project_extension(v, cands)
    m = g.node_mask
    brute = []
    for a in cands:
        ua = np.full(nodes.shape, np.nan)
        ua[m] = (nodes[m] - a) / np.linalg.norm(nodes[m] - a, axis=1, keepdims=True)
        brute.append(float(cell_energy(g, ua).sum()))
    brute = np.array(brute)
    best = int(np.flatnonzero(brute <= brute.min() * (1 + TIE_TOL))[0])
    assert np.array_equal(res.a_star, cands[best])
    assert np.allclose(res.candidate_energies, brute, rtol=1e-12)


def test_project_extension_identity(ball33):
    g = ball33
    v = harmonic_extension(g, make_trace(TraceFamily("identity"), g.surface))
    res = project_extension(v)
    a = res.a_star
    assert np.linalg.norm(a) < 0.5
    assert res.energy_ratio <= 192
    m = g.node_mask
    assert np.allclose(np.linalg.norm(res.field.nodes[m], axis=1), 1.0, atol=1e-12)
    # v is x up to O(h), so the output is Pi_a^-1 of the hedgehog about a
    pos = g.node_positions()
    exact = unproject_from(a, hedgehog_values(pos, a))
    far = m & (np.linalg.norm(pos - a, axis=-1) >= 4 * g.h)
    assert np.linalg.norm(res.field.nodes[far] - exact[far], axis=1).max() <= 2 * g.h
    # boundary values are restored
    assert np.allclose(res.field.vertex_values, v.vertex_values, atol=1e-12)


def test_project_extension_errors(ball17):
    u = constant_field(ball17, (1.0, 0.0, 0.0))
    v = VectorField(ball17, u.nodes, u.vertex_values)
    # the only candidate coincides with every value of the field
    with pytest.raises(SolverError):
        project_extension(v, candidates=np.array([[1.0, 0.0, 0.0]]))
    bad = np.array(u.nodes)
    bad[ball17.shell_mask] *= 2
    with pytest.raises(ValueError):
        project_extension(VectorField(ball17, bad, u.vertex_values))


# -- descent --------------------------------------------------------------------------------


def test_minimize_constant_trace(ball33):
    t = make_trace(TraceFamily("constant"), ball33.surface)
    res = minimize(ball33, t)
    assert res.energy <= ENERGY_FLOOR
    assert res.runs[0].iterations == 0 and res.runs[0].converged
    assert np.allclose(res.field.nodes[ball33.node_mask], (0, 0, 1))


def test_minimize_identity_one_singularity(identity_min33):
    res = identity_min33
    u = res.field
    assert abs(res.energy - EIGHT_PI) <= 0.05 * EIGHT_PI
    pts = detect_singularities(u)
    assert count_singular(pts) == 1 and len(pts) == 1
    assert np.linalg.norm(pts[0].location) <= u.grid.h


def test_minimize_history_monotone_and_unit(identity_min33):
    hist = identity_min33.history
    e = hist[:, 1]
    assert np.all(e[1:] <= e[:-1] * (1 + 1e-12))
    u = identity_min33.field
    m = u.grid.node_mask
    assert np.abs(np.linalg.norm(u.nodes[m], axis=1) - 1).max() <= 1e-12
    assert identity_min33.runs[0].converged


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=5, deadline=None)
def test_descent_steps_keep_unit_norm_and_decrease(seed):
    g = _grid("ball", 17)
    rng = np.random.default_rng(seed)
    t = BoundaryTrace(g.surface, normalize(rng.standard_normal((g.surface.n_vertices, 3))))
    start = random_field(g, t, rng)
    fld, hist, _ = descend(start, SolverParams(max_iters=60))
    m = g.node_mask
    assert np.abs(np.linalg.norm(fld.nodes[m], axis=1) - 1).max() <= 1e-12
    assert np.all(np.diff(hist[:, 1]) <= 1e-12 * hist[:-1, 1])
    # the shell never moves
    assert np.array_equal(fld.nodes[g.shell_mask], start.nodes[g.shell_mask])


def test_minimize_restarts_recorded(ball17):
    t = make_trace(TraceFamily("identity"), ball17.surface)
    res = minimize(ball17, t, SolverParams(restarts=3, seed=5))
    assert [r.start for r in res.runs] == ["extension", "radial", "random", "random"]
    assert [r.seed for r in res.runs] == [None, None, 5, 5]
    single = minimize(ball17, t, SolverParams(radial_start=False))
    assert [r.start for r in single.runs] == ["extension"]
    assert res.energy == min(r.energy for r in res.runs)


def test_minimize_rotation_equivariant(ball33, identity_min33):
    t = make_trace(TraceFamily("identity"), ball33.surface)
    rot = minimize(ball33, t.rotated(RZ90))
    assert rot.energy == pytest.approx(identity_min33.energy, rel=1e-8)
    assert dirichlet_energy(identity_min33.field.rotated(RZ90)).total == pytest.approx(rot.energy, rel=1e-8)


def test_minimize_bubble_one_singularity(ball33):
    t = make_trace(TraceFamily("bubble", lam=0.25), ball33.surface)
    res = minimize(ball33, t)
    assert count_singular(detect_singularities(res.field)) == 1


def test_minimize_rejects_foreign_trace(ball17, ball33):
    with pytest.raises(ValueError):
        minimize(ball17, make_trace(TraceFamily("identity"), ball33.surface))


def test_history_csv(tmp_path, identity_min33):
    p = tmp_path / "hist.csv"
    identity_min33.history_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "iter,energy,max_node_move"
    assert len(lines) == len(identity_min33.history) + 1


# -- W^{1,2} distance ----------------------------------------------------------------------


def test_w12_identical(ball17):
    u = hedgehog(ball17)
    assert w12_distance(u, u) == 0.0


def test_w12_constants(ball33):
    d = w12_distance(constant_field(ball33, (0, 0, 1)), constant_field(ball33, (1, 0, 0)))
    assert d == pytest.approx(math.sqrt(2 * ball33.volume()), rel=1e-12)


def test_w12_grid_mismatch(ball17, ball33):
    with pytest.raises(ValueError):
        w12_distance(hedgehog(ball17), hedgehog(ball33))


def _hedgehog_norm(g):
    return math.sqrt(g.volume() + dirichlet_energy(hedgehog(g)).total)


def test_w12_minimizer_to_located_hedgehog(identity_min49):
    u = identity_min49.field
    (s,) = detect_singularities(u)
    assert w12_distance(u, hedgehog(u.grid, s.location)) <= 0.15 * _hedgehog_norm(u.grid)


def test_w12_minimizer_to_centred_hedgehog(identity_min65):
    u = identity_min65.field
    assert w12_distance(u, hedgehog(u.grid)) <= 0.15 * _hedgehog_norm(u.grid)


_GRIDS = {}


def _grid(kind, n):
    if (kind, n) not in _GRIDS:
        _GRIDS[kind, n] = build_domain(kind, n)
    return _GRIDS[kind, n]


def test_minimize_identity_n65(identity_min65):
    res = identity_min65
    g = res.field.grid
    assert abs(res.energy - EIGHT_PI) <= 0.05 * EIGHT_PI
    pts = detect_singularities(res.field)
    assert len(pts) == 1 and count_singular(pts) == 1
    # the lowest run (radial start) keeps the defect within a cell of the centre
    assert np.linalg.norm(pts[0].location) <= g.h
    assert [r.start for r in res.runs] == ["extension", "radial"]
    assert res.energy == min(r.energy for r in res.runs)
