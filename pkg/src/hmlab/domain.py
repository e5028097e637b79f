"""Masked Cartesian grids on [-1,1]^3 describing the ball, half-ball and cube."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .surface import Surface, cube_surface, half_sphere, icosphere

KINDS = ("cube", "ball", "half_ball")
KIND_CODES = {"cube": 0, "ball": 1, "half_ball": 2}

# icosahedron edge length on the unit sphere; sets the geodesic frequency
_ICO_EDGE = 1.0514622242382672


class DomainError(ValueError):
    pass


def inside(kind: str, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Membership of points in the closed analytic domain."""
    pts = np.asarray(pts, dtype=np.float64)
    if kind == "cube":
        return np.all(np.abs(pts) <= 1.0 + tol, axis=-1)
    r2 = np.sum(pts * pts, axis=-1)
    ok = r2 <= 1.0 + tol
    if kind == "half_ball":
        ok &= pts[..., 2] >= -tol
    return ok


def boundary_distance(kind: str, pts: np.ndarray) -> np.ndarray:
    """Distance to the analytic boundary (for points inside the domain)."""
    pts = np.asarray(pts, dtype=np.float64)
    if kind == "cube":
        return np.min(1.0 - np.abs(pts), axis=-1)
    d = 1.0 - np.linalg.norm(pts, axis=-1)
    if kind == "half_ball":
        d = np.minimum(d, pts[..., 2])
    return d


def project_to_boundary(kind: str, pts: np.ndarray) -> np.ndarray:
    """Nearest point on the analytic boundary for points near it."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if kind == "cube":
        out = np.clip(pts, -1.0, 1.0)
        inner = np.all(np.abs(out) < 1.0, axis=1)
        if inner.any():
            q = out[inner]
            ax = np.argmax(np.abs(q), axis=1)
            rows = np.arange(len(q))
            q[rows, ax] = np.where(q[rows, ax] >= 0, 1.0, -1.0)
            out[inner] = q
        return out
    r = np.linalg.norm(pts, axis=1)
    sphere = pts / np.where(r > 0, r, 1.0)[:, None]
    sphere[r == 0] = (0.0, 0.0, 1.0)
    if kind == "ball":
        return sphere
    # half ball: candidates on the cap, the flat disk and the rim
    cand = []
    cap = sphere.copy()
    cap_ok = cap[:, 2] >= 0
    cand.append(np.where(cap_ok[:, None], cap, np.nan))
    flat = pts.copy()
    flat[:, 2] = 0.0
    rxy = np.linalg.norm(flat[:, :2], axis=1)
    cand.append(np.where((rxy <= 1.0)[:, None], flat, np.nan))
    rim = np.zeros_like(pts)
    safe = np.where(rxy > 0, rxy, 1.0)
    rim[:, 0] = np.where(rxy > 0, pts[:, 0] / safe, 1.0)
    rim[:, 1] = np.where(rxy > 0, pts[:, 1] / safe, 0.0)
    cand.append(rim)
    cand = np.stack(cand)  # (3, m, 3)
    dist = np.linalg.norm(cand - pts[None], axis=2)
    dist = np.where(np.isnan(dist), np.inf, dist)
    best = np.argmin(dist, axis=0)
    return cand[best, np.arange(len(pts))]


@dataclass(frozen=True, eq=False)
class DomainGrid:
    """Uniform grid of ``n`` nodes per axis on [-1,1]^3 with domain masks.

    A cell belongs to the domain when its centre does. ``node_mask`` holds
    every corner of a domain cell; ``interior_mask`` is the subset of free
    nodes whose 8 adjacent cells are domain cells and whose 6 axis neighbours
    lie in the closed domain. The remaining masked nodes form the pinned
    boundary shell, carrying trace values at ``shell_points``.
    """

    kind: str
    n: int
    h: float
    cell_mask: np.ndarray
    node_mask: np.ndarray
    interior_mask: np.ndarray
    surface: Surface
    shell_index: np.ndarray = field(repr=False)
    shell_points: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def coords(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n)

    @property
    def shell_mask(self) -> np.ndarray:
        return self.node_mask & ~self.interior_mask

    def node_positions(self) -> np.ndarray:
        """(n, n, n, 3) array of node coordinates, index order (x, y, z)."""
        c = self.coords
        X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def cell_centers(self) -> np.ndarray:
        c = self.coords
        m = 0.5 * (c[1:] + c[:-1])
        X, Y, Z = np.meshgrid(m, m, m, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def volume(self) -> float:
        return float(self.cell_mask.sum()) * self.h**3

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        return boundary_distance(self.kind, pts)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return inside(self.kind, pts)

    def edge_weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Fraction (0, 1/4, .., 1) of domain cells adjacent to each grid edge."""
        return _edge_weights(self.cell_mask)

    def index_of(self, point) -> tuple[int, int, int]:
        """Nearest node index to a point."""
        idx = np.rint((np.asarray(point, dtype=np.float64) + 1.0) / self.h).astype(int)
        idx = np.clip(idx, 0, self.n - 1)
        return tuple(int(i) for i in idx)


def _edge_weights(cell_mask: np.ndarray):
    c = np.pad(cell_mask.astype(np.float64), 1)
    # edge along x from node (i,j,k): adjacent cells (i, j-1..j, k-1..k)
    wx = (c[1:-1, :-1, :-1] + c[1:-1, 1:, :-1] + c[1:-1, :-1, 1:] + c[1:-1, 1:, 1:]) / 4.0
    wy = (c[:-1, 1:-1, :-1] + c[1:, 1:-1, :-1] + c[:-1, 1:-1, 1:] + c[1:, 1:-1, 1:]) / 4.0
    wz = (c[:-1, :-1, 1:-1] + c[1:, :-1, 1:-1] + c[:-1, 1:, 1:-1] + c[1:, 1:, 1:-1]) / 4.0
    return wx, wy, wz


def _surface_for(kind: str, n: int, h: float) -> Surface:
    if kind == "ball":
        return icosphere(max(2, int(math.ceil(_ICO_EDGE / h))))
    if kind == "half_ball":
        return half_sphere(h)
    return cube_surface(n)


def build_domain(kind: str, n: int) -> DomainGrid:
    """Build the masked grid and boundary surface for ``kind`` at ``n`` nodes per axis."""
    if kind not in KINDS:
        raise DomainError(f"unknown domain kind {kind!r}")
    if not isinstance(n, (int, np.integer)) or n < 9 or n % 2 == 0:
        raise DomainError(f"n must be an odd integer >= 9, got {n!r}")
    n = int(n)
    h = 2.0 / (n - 1)
    c = np.linspace(-1.0, 1.0, n)
    m = 0.5 * (c[1:] + c[:-1])
    X, Y, Z = np.meshgrid(m, m, m, indexing="ij")
    cell_mask = inside(kind, np.stack([X, Y, Z], axis=-1), tol=0.0)
    if kind == "half_ball":
        cell_mask &= Z > 0

    cm = np.pad(cell_mask, 1)
    node_mask = np.zeros((n, n, n), dtype=bool)
    all_cells = np.ones((n, n, n), dtype=bool)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                block = cm[dx : dx + n, dy : dy + n, dz : dz + n]
                node_mask |= block
                all_cells &= block

    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    nodes = np.stack([X, Y, Z], axis=-1)
    nbrs_inside = np.ones((n, n, n), dtype=bool)
    for axis in range(3):
        for sign in (-1.0, 1.0):
            shifted = nodes.copy()
            shifted[..., axis] += sign * h
            nbrs_inside &= inside(kind, shifted)
    interior_mask = node_mask & all_cells & inside(kind, nodes) & nbrs_inside
    if kind == "cube":
        interior_mask &= np.all(np.abs(nodes) < 1.0 - 1e-12, axis=-1)

    shell = node_mask & ~interior_mask
    shell_index = np.argwhere(shell)
    shell_points = project_to_boundary(kind, nodes[shell])
    return DomainGrid(
        kind=kind,
        n=n,
        h=h,
        cell_mask=cell_mask,
        node_mask=node_mask,
        interior_mask=interior_mask,
        surface=_surface_for(kind, n, h),
        shell_index=shell_index,
        shell_points=shell_points,
    )
