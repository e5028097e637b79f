import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmlab.domain import DomainError, boundary_distance, build_domain, inside
from hmlab.fields import (
    BoundaryTrace,
    FieldError,
    SphereField,
    VectorField,
    constant_field,
    hedgehog,
    hedgehog_values,
    normalize,
    random_field,
    restrict_trace,
    shell_values,
)
from hmlab.sfld import FormatError, TruncatedError, decode_field, encode_field, load_field, save_field
from hmlab.surface import CURVED, FLAT, graded_sphere, rotation_to

ANALYTIC = {
    "ball": (4 * math.pi / 3, 4 * math.pi),
    "half_ball": (2 * math.pi / 3, 3 * math.pi),
    "cube": (8.0, 24.0),
}


# -- build_domain -------------------------------------------------------------


@pytest.mark.parametrize("n", [8, 7, 10, 1])
def test_build_domain_rejects_bad_n(n):
    with pytest.raises(DomainError):
        build_domain("ball", n)


def test_build_domain_rejects_unknown_kind():
    with pytest.raises(DomainError):
        build_domain("torus", 9)


def test_cube_9_partition():
    g = build_domain("cube", 9)
    assert g.node_mask.all()
    assert g.interior_mask.sum() == 7**3
    assert g.shell_mask.sum() == 9**3 - 7**3
    assert g.surface.area() == pytest.approx(24.0, rel=1e-12)
    # six faces, each tiled by 8 x 8 quads split into two triangles
    assert len(g.surface.triangles) == 6 * 8 * 8 * 2


def test_ball_33_area(ball33):
    s = ball33.surface
    assert abs(s.area() - 4 * math.pi) <= 0.01 * 4 * math.pi
    assert abs(s.weights.sum() - 4 * math.pi) <= 0.01 * 4 * math.pi


def test_half_ball_33_tagged_areas():
    s = build_domain("half_ball", 33).surface
    assert abs(s.area(FLAT) - math.pi) <= 0.01 * math.pi
    assert abs(s.area(CURVED) - 2 * math.pi) <= 0.01 * 2 * math.pi
    flat_v = s.vertices[s.tags == FLAT]
    assert np.allclose(flat_v[:, 2], 0.0)


@pytest.mark.parametrize("kind", ["ball", "half_ball", "cube"])
def test_grid_invariants(kind):
    g = build_domain(kind, 17)
    h = g.h
    pos = g.node_positions()
    # every free node has its six axis neighbours inside the closed domain
    for axis in range(3):
        for sign in (-1, 1):
            nb = pos[g.interior_mask].copy()
            nb[:, axis] += sign * h
            assert inside(kind, nb).all()
    # surface vertices lie on the analytic boundary
    assert np.all(np.abs(boundary_distance(kind, g.surface.vertices)) <= h / 2)
    # shell points are where the grid meets the trace
    assert len(g.shell_points) == g.shell_mask.sum()


@pytest.mark.parametrize("kind", ["ball", "half_ball", "cube"])
def test_weights_match_area(kind):
    s = build_domain(kind, 33).surface
    assert abs(s.weights.sum() - ANALYTIC[kind][1]) <= 0.01 * ANALYTIC[kind][1]


@pytest.mark.parametrize("kind", ["ball", "half_ball"])
def test_volume_and_area_converge_first_order(kind):
    vol, area = ANALYTIC[kind]
    ev, ea = [], []
    for n in (17, 33, 65):
        g = build_domain(kind, n)
        ev.append(abs(g.volume() - vol))
        ea.append(abs(g.surface.area() - area))
    for e in (ev, ea):
        assert e[0] / e[1] >= 1.7 and e[1] / e[2] >= 1.7, e


def test_cube_volume_and_area_exact():
    for n in (17, 33):
        g = build_domain("cube", n)
        assert g.volume() == pytest.approx(8.0, rel=1e-12)
        assert g.surface.area() == pytest.approx(24.0, rel=1e-12)


def test_build_domain_deterministic():
    a, b = build_domain("half_ball", 17), build_domain("half_ball", 17)
    assert np.array_equal(a.interior_mask, b.interior_mask)
    assert np.array_equal(a.surface.vertices, b.surface.vertices)


def test_graded_sphere_is_closed_and_oriented():
    s = graded_sphere(0.2, pole=(1.0, 0.0, 0.0), grading=0.2, theta_min=0.01)
    V, T = s.vertices, s.triangles
    assert np.allclose(np.linalg.norm(V, axis=1), 1.0)
    # Euler characteristic of a sphere
    edges = {tuple(sorted(e)) for t in T for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
    assert len(V) - len(edges) + len(T) == 2
    # outward orientation: signed volume positive
    vol = np.einsum("ij,ij->i", V[T[:, 0]], np.cross(V[T[:, 1]], V[T[:, 2]])).sum() / 6
    assert vol > 0
    assert abs(s.area() - 4 * math.pi) < 0.02 * 4 * math.pi


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3))
@settings(max_examples=50, deadline=None)
def test_rotation_to_maps_e3_to_pole(v):
    pole = np.asarray(v) / np.linalg.norm(v)
    Q = rotation_to(pole)
    assert np.allclose(Q @ [0, 0, 1], pole, atol=1e-12)
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-12)
    assert np.linalg.det(Q) == pytest.approx(1.0)


# -- fields ---------------------------------------------------------------------


def _node_value(field, point):
    return field.nodes[field.grid.index_of(point)]


def test_hedgehog_examples():
    g = build_domain("cube", 11)
    u = hedgehog(g)
    assert np.allclose(_node_value(u, (1, 0, 0)), (1, 0, 0))
    assert np.allclose(_node_value(u, (0, -0.6, 0)), (0, -1, 0))
    v = hedgehog(g, center=(0.2, 0.0, 0.0))
    assert np.allclose(_node_value(v, (0.2, 0.0, 0.4)), (0, 0, 1))


def test_hedgehog_coincident_node_is_e3(ball17):
    u = hedgehog(ball17)
    assert np.array_equal(_node_value(u, (0, 0, 0)), (0, 0, 1))


def test_sphere_field_rejects_non_unit(ball17):
    u = constant_field(ball17)
    with pytest.raises(FieldError):
        SphereField(ball17, 2 * np.nan_to_num(u.nodes), u.vertex_values)
    with pytest.raises(FieldError):
        BoundaryTrace(ball17.surface, 0.5 * u.vertex_values)


def test_vector_field_rejects_non_finite(ball17):
    nodes = np.zeros((17, 17, 17, 3))
    nodes[8, 8, 8] = np.inf
    with pytest.raises(FieldError):
        VectorField(ball17, nodes, np.zeros((ball17.surface.n_vertices, 3)))


def test_fields_are_immutable(ball17):
    u = hedgehog(ball17)
    with pytest.raises(ValueError):
        u.nodes[8, 8, 8] = 0.0


def test_restrict_trace_constant(ball17):
    t = restrict_trace(constant_field(ball17))
    assert np.allclose(t.values, (0, 0, 1), atol=1e-12)


def test_restrict_trace_hedgehog_is_identity(ball33):
    t = restrict_trace(hedgehog(ball33))
    err = np.linalg.norm(t.values - ball33.surface.vertices, axis=1)
    assert err.max() <= 2 * ball33.h


def test_restrict_trace_offset_hedgehog(ball33):
    c = np.array([0.0, 0.0, 0.3])
    t = restrict_trace(hedgehog(ball33, c))
    exact = hedgehog_values(ball33.surface.vertices, c)
    err = np.linalg.norm(t.values - exact, axis=1)
    assert err.max() <= 2 * ball33.h


def test_shell_values_interpolate_trace(ball17):
    # identity trace interpolated at shell points lands near the projected point direction
    t = BoundaryTrace(ball17.surface, normalize(ball17.surface.vertices))
    sv = shell_values(ball17, t)[ball17.shell_mask]
    exact = normalize(ball17.shell_points)
    assert np.abs(np.linalg.norm(sv, axis=1) - 1).max() < 1e-12
    assert np.linalg.norm(sv - exact, axis=1).max() < 2 * ball17.h


# -- SFLD -------------------------------------------------------------------------


def test_sfld_round_trip_hedgehog(tmp_path, ball33):
    u = hedgehog(ball33)
    p = tmp_path / "h.sfld"
    save_field(u, p)
    v = load_field(p)
    save_field(v, tmp_path / "h2.sfld")
    assert p.read_bytes() == (tmp_path / "h2.sfld").read_bytes()
    m = ball33.node_mask
    assert np.array_equal(u.nodes[m], v.nodes[m])
    assert np.array_equal(u.vertex_values, v.vertex_values)


def test_sfld_header_layout(ball17):
    data = encode_field(constant_field(ball17))
    assert data[:4] == b"SFLD"
    assert int.from_bytes(data[4:8], "little") == 1
    assert data[8] == 1  # ball
    assert int.from_bytes(data[9:13], "little") == 17
    node0 = np.frombuffer(data, "<f8", count=3, offset=21)
    assert np.isnan(node0).all()  # corner (-1,-1,-1) is outside the ball
    # x runs fastest: record i is node (i, 0, 0) for i < n
    cube = build_domain("cube", 9)
    u = hedgehog(cube, center=(0.01, 0.02, 0.03))
    raw = np.frombuffer(encode_field(u), "<f8", count=9 * 3, offset=21).reshape(9, 3)
    assert np.array_equal(raw, u.nodes[:, 0, 0])


def test_sfld_bad_magic(ball17):
    data = bytearray(encode_field(constant_field(ball17)))
    data[:4] = b"XXXX"
    with pytest.raises(FormatError):
        decode_field(bytes(data))


def test_sfld_bad_version(ball17):
    data = bytearray(encode_field(constant_field(ball17)))
    data[4] = 2
    with pytest.raises(FormatError):
        decode_field(bytes(data))


@pytest.mark.parametrize("cut", [3, 30, 1000, -1])
def test_sfld_truncated(ball17, cut):
    data = encode_field(constant_field(ball17))
    with pytest.raises(TruncatedError):
        decode_field(data[:cut])


def test_sfld_trailing_bytes(ball17):
    data = encode_field(constant_field(ball17))
    with pytest.raises(FormatError):
        decode_field(data + b"\0")


def test_sfld_grid_mismatch(ball17):
    data = encode_field(constant_field(ball17))
    with pytest.raises(FormatError):
        decode_field(data, build_domain("ball", 19))


@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["ball", "half_ball", "cube"]))
@settings(max_examples=15, deadline=None)
def test_sfld_round_trip_random(seed, kind):
    g = _grids(kind)
    rng = np.random.default_rng(seed)
    trace = BoundaryTrace(g.surface, normalize(rng.standard_normal((g.surface.n_vertices, 3))))
    u = random_field(g, trace, rng)
    v = decode_field(encode_field(u), g)
    assert encode_field(v) == encode_field(u)
    assert np.array_equal(u.vertex_values, v.vertex_values)


_GRID_CACHE = {}


def _grids(kind):
    if kind not in _GRID_CACHE:
        _GRID_CACHE[kind] = build_domain(kind, 9)
    return _GRID_CACHE[kind]
