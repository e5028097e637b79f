"""Sphere-valued and vector-valued fields on masked grids, boundary traces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .domain import DomainGrid
from .surface import Surface

UNIT_TOL = 1e-12
E3 = np.array([0.0, 0.0, 1.0])


class FieldError(ValueError):
    pass


def normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Unit vector per boundary-surface vertex."""

    surface: Surface
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.surface.n_vertices, 3):
            raise FieldError(f"trace shape {v.shape} does not match surface")
        if not np.all(np.abs(np.linalg.norm(v, axis=1) - 1.0) <= UNIT_TOL):
            raise FieldError("trace values must be unit vectors")
        object.__setattr__(self, "values", _frozen(v))

    def rotated(self, R: np.ndarray) -> "BoundaryTrace":
        return BoundaryTrace(self.surface, normalize(self.values @ np.asarray(R).T))


@dataclass(frozen=True, eq=False)
class VectorField:
    """Unconstrained 3-vector per masked node and per boundary vertex."""

    grid: DomainGrid
    nodes: np.ndarray
    vertex_values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=np.float64)
        g = self.grid
        if nodes.shape != (g.n, g.n, g.n, 3):
            raise FieldError("node array has wrong shape")
        nodes[~g.node_mask] = np.nan
        if not np.all(np.isfinite(nodes[g.node_mask])):
            raise FieldError("non-finite values at masked nodes")
        vv = np.asarray(self.vertex_values, dtype=np.float64)
        if vv.shape != (g.surface.n_vertices, 3) or not np.all(np.isfinite(vv)):
            raise FieldError("vertex values invalid")
        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "vertex_values", _frozen(vv))

    def masked(self) -> np.ndarray:
        """Values at masked nodes, (m, 3) in C order of the node index."""
        return self.nodes[self.grid.node_mask]


@dataclass(frozen=True, eq=False)
class SphereField(VectorField):
    """S^2-valued map: unit vector per masked node and per boundary vertex."""

    def __post_init__(self):
        super().__post_init__()
        norms = np.linalg.norm(self.nodes[self.grid.node_mask], axis=1)
        if not np.all(np.abs(norms - 1.0) <= UNIT_TOL):
            raise FieldError("field values must be unit vectors")
        if not np.all(np.abs(np.linalg.norm(self.vertex_values, axis=1) - 1.0) <= UNIT_TOL):
            raise FieldError("vertex values must be unit vectors")

    @property
    def trace(self) -> BoundaryTrace:
        """The stored boundary values (the datum the field was built with)."""
        return BoundaryTrace(self.grid.surface, self.vertex_values)

    def rotated(self, R: np.ndarray) -> "SphereField":
        """Compose with a linear map of the target (rotation or reflection)."""
        R = np.asarray(R, dtype=np.float64)
        nodes = np.where(self.grid.node_mask[..., None], self.nodes, 0.0) @ R.T
        return SphereField(self.grid, normalize_masked(self.grid, nodes), normalize(self.vertex_values @ R.T))


def normalize_masked(grid: DomainGrid, nodes: np.ndarray) -> np.ndarray:
    out = np.full_like(nodes, np.nan)
    m = grid.node_mask
    out[m] = normalize(nodes[m])
    return out


def constant_field(grid: DomainGrid, value=E3) -> SphereField:
    value = normalize(np.asarray(value, dtype=np.float64))
    nodes = np.broadcast_to(value, (grid.n, grid.n, grid.n, 3)).copy()
    vv = np.broadcast_to(value, (grid.surface.n_vertices, 3)).copy()
    return SphereField(grid, nodes, vv)


def hedgehog_values(points: np.ndarray, center) -> np.ndarray:
    """(x - c)/|x - c|, with e3 wherever x coincides with c."""
    d = np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    r = np.linalg.norm(d, axis=-1, keepdims=True)
    out = d / np.where(r > 0, r, 1.0)
    out[(r == 0)[..., 0]] = E3
    return out


def hedgehog(grid: DomainGrid, center=(0.0, 0.0, 0.0)) -> SphereField:
    """The map x -> (x - center)/|x - center|; a node at the centre gets e3."""
    nodes = hedgehog_values(grid.node_positions(), center)
    vv = hedgehog_values(grid.surface.vertices, center)
    return SphereField(grid, nodes, vv)


def random_field(grid: DomainGrid, trace: BoundaryTrace, rng: np.random.Generator) -> SphereField:
    """Uniform random unit vectors at free nodes, trace values on the shell."""
    g = rng.standard_normal((grid.n, grid.n, grid.n, 3))
    nodes = normalize(g)
    nodes[grid.shell_mask] = shell_values(grid, trace)[grid.shell_mask]
    return SphereField(grid, nodes, trace.values)


# --------------------------------------------------------------------------
# trace <-> grid transfer


def surface_stencil(surface: Surface, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric stencil of surface triangles for points on (or near) the surface.

    The triangle is searched among those incident to the nearest vertex; the
    one with the largest minimal barycentric coordinate wins.
    """
    points = np.atleast_2d(points)
    tree = cKDTree(surface.vertices)
    _, nearest = tree.query(points)
    inc = surface.incident()
    deg = max(len(i) for i in inc)
    table = np.full((surface.n_vertices, deg), -1, dtype=np.int64)
    for k, i in enumerate(inc):
        table[k, : len(i)] = i
    cand = table[nearest]  # (P, deg)
    valid = cand >= 0
    tri = surface.triangles[np.where(valid, cand, 0)]  # (P, deg, 3)
    V = surface.vertices
    a, b, c = V[tri[..., 0]], V[tri[..., 1]], V[tri[..., 2]]
    p = points[:, None, :]
    v0, v1, v2 = b - a, c - a, p - a
    d00 = np.sum(v0 * v0, -1)
    d01 = np.sum(v0 * v1, -1)
    d11 = np.sum(v1 * v1, -1)
    d20 = np.sum(v2 * v0, -1)
    d21 = np.sum(v2 * v1, -1)
    den = d00 * d11 - d01 * d01
    l1 = (d11 * d20 - d01 * d21) / den
    l2 = (d00 * d21 - d01 * d20) / den
    l0 = 1.0 - l1 - l2
    bary = np.stack([l0, l1, l2], axis=-1)
    score = np.where(valid, bary.min(axis=-1), -np.inf)
    best = np.argmax(score, axis=1)
    rows = np.arange(len(points))
    ids = tri[rows, best]
    w = np.clip(bary[rows, best], 0.0, None)
    w /= w.sum(axis=1, keepdims=True)
    return ids, w


def _shell_stencil(grid: DomainGrid):
    key = "shell_stencil"
    if key not in grid._cache:
        grid._cache[key] = surface_stencil(grid.surface, grid.shell_points)
    return grid._cache[key]


def interpolate_trace(surface: Surface, values: np.ndarray, ids: np.ndarray, w: np.ndarray, unit: bool = True) -> np.ndarray:
    v = np.einsum("pk,pkc->pc", w, values[ids])
    if not unit:
        return v
    norm = np.linalg.norm(v, axis=1)
    bad = norm < 1e-8
    out = v / np.where(bad, 1.0, norm)[:, None]
    if bad.any():
        # antipodal corner values: fall back to the dominant vertex
        dom = ids[np.arange(len(ids)), np.argmax(w, axis=1)]
        out[bad] = values[dom[bad]]
    return out


def shell_values(grid: DomainGrid, trace: BoundaryTrace, unit: bool = True) -> np.ndarray:
    """Full (n,n,n,3) array holding the interpolated trace on the boundary shell.

    With ``unit`` the barycentric average is renormalized onto the sphere.
    """
    if trace.surface is not grid.surface:
        raise FieldError("trace lives on a different surface")
    ids, w = _shell_stencil(grid)
    out = np.full((grid.n, grid.n, grid.n, 3), np.nan)
    vals = interpolate_trace(grid.surface, trace.values, ids, w, unit)
    si = grid.shell_index
    out[si[:, 0], si[:, 1], si[:, 2]] = vals
    return out


def sample(grid: DomainGrid, nodes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Trilinear interpolation restricted to masked corners.

    Corner weights of unmasked nodes are dropped and the rest rescaled; a
    point with no masked corner raises ``FieldError``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, h = grid.n, grid.h
    f = (points + 1.0) / h
    i0 = np.clip(np.floor(f).astype(np.int64), 0, n - 2)
    t = np.clip(f - i0, 0.0, 1.0)
    acc = np.zeros((len(points), 3))
    wsum = np.zeros(len(points))
    vals = np.where(grid.node_mask[..., None], nodes, 0.0)
    for dx in (0, 1):
        wx = t[:, 0] if dx else 1.0 - t[:, 0]
        for dy in (0, 1):
            wy = t[:, 1] if dy else 1.0 - t[:, 1]
            for dz in (0, 1):
                wz = t[:, 2] if dz else 1.0 - t[:, 2]
                ix, iy, iz = i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz
                w = wx * wy * wz * grid.node_mask[ix, iy, iz]
                acc += w[:, None] * vals[ix, iy, iz]
                wsum += w
    if np.any(wsum <= 1e-14):
        raise FieldError("interpolation stencil leaves the domain")
    return acc / wsum[:, None]


def restrict_trace(field: VectorField) -> BoundaryTrace:
    """Trace of a field: node values interpolated at surface vertices, renormalized."""
    vals = sample(field.grid, field.nodes, field.grid.surface.vertices)
    return BoundaryTrace(field.grid.surface, normalize(vals))
