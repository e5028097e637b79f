"""Discrete Dirichlet energy and the quantities built from it.

The energy of a grid cell is ``h**3`` times the mean over its four edges per
axis of the squared forward difference quotient, i.e. ``(h/4) * sum |du|^2``
over the 12 cell edges. Summed over domain cells this is a weighted edge
energy whose gradient is the 7-point Laplacian at free nodes, so the
projected heat flow in :mod:`hmlab.minimizer` decreases exactly this number.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .domain import DomainGrid, build_domain
from .fields import SphereField, VectorField, sample

EIGHT_PI = 8.0 * np.pi

# smallest admissible probe radius, in grid spacings
MIN_RADIUS_CELLS = 2.0


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    per_cell: np.ndarray


@dataclass(frozen=True)
class MonotonicityProfile:
    center: np.ndarray
    radii: np.ndarray
    normalized_energy: np.ndarray
    radial_term: np.ndarray  # one entry per consecutive radius pair
    defect: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["radius", "normalized_energy", "radial_term", "defect"])
            for i, r in enumerate(self.radii):
                rad = "" if i == 0 else repr(float(self.radial_term[i - 1]))
                dfc = "" if i == 0 else repr(float(self.defect[i - 1]))
                w.writerow([repr(float(r)), repr(float(self.normalized_energy[i])), rad, dfc])


def _filled(grid: DomainGrid, nodes: np.ndarray) -> np.ndarray:
    return np.where(grid.node_mask[..., None], nodes, 0.0)


def _edge_sq(u: np.ndarray):
    dx = np.sum((u[1:] - u[:-1]) ** 2, axis=-1)
    dy = np.sum((u[:, 1:] - u[:, :-1]) ** 2, axis=-1)
    dz = np.sum((u[:, :, 1:] - u[:, :, :-1]) ** 2, axis=-1)
    return dx, dy, dz


def cell_energy(grid: DomainGrid, nodes: np.ndarray) -> np.ndarray:
    """Energy of every grid cell, zero outside the domain; shape (n-1,)*3."""
    u = _filled(grid, nodes)
    dx, dy, dz = _edge_sq(u)
    e = (
        dx[:, :-1, :-1] + dx[:, 1:, :-1] + dx[:, :-1, 1:] + dx[:, 1:, 1:]
        + dy[:-1, :, :-1] + dy[1:, :, :-1] + dy[:-1, :, 1:] + dy[1:, :, 1:]
        + dz[:-1, :-1, :] + dz[1:, :-1, :] + dz[:-1, 1:, :] + dz[1:, 1:, :]
    )
    return np.where(grid.cell_mask, e * (grid.h / 4.0), 0.0)


def cell_gradients(grid: DomainGrid, nodes: np.ndarray) -> np.ndarray:
    """Cell-centred gradient, shape (n-1,)*3 + (3 axes, 3 components)."""
    u = _filled(grid, nodes)
    h = grid.h
    gx = u[1:] - u[:-1]
    gy = u[:, 1:] - u[:, :-1]
    gz = u[:, :, 1:] - u[:, :, :-1]
    gx = (gx[:, :-1, :-1] + gx[:, 1:, :-1] + gx[:, :-1, 1:] + gx[:, 1:, 1:]) / (4 * h)
    gy = (gy[:-1, :, :-1] + gy[1:, :, :-1] + gy[:-1, :, 1:] + gy[1:, :, 1:]) / (4 * h)
    gz = (gz[:-1, :-1, :] + gz[1:, :-1, :] + gz[:-1, 1:, :] + gz[1:, 1:, :]) / (4 * h)
    g = np.stack([gx, gy, gz], axis=3)
    g[~grid.cell_mask] = 0.0
    return g


def excluded_cells(grid: DomainGrid, points, radius: float) -> np.ndarray:
    """Cells having a corner node within ``radius`` of any of ``points``."""
    mask = np.zeros(grid.cell_mask.shape, dtype=bool)
    if points is None or len(points) == 0:
        return mask
    pos = grid.node_positions()
    near = np.zeros((grid.n,) * 3, dtype=bool)
    for p in np.atleast_2d(points):
        near |= np.linalg.norm(pos - p, axis=-1) <= radius
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                mask |= near[dx : dx + grid.n - 1, dy : dy + grid.n - 1, dz : dz + grid.n - 1]
    return mask


def per_cell(field: VectorField) -> np.ndarray:
    key = "per_cell"
    if key not in field._cache:
        field._cache[key] = cell_energy(field.grid, field.nodes)
    return field._cache[key]


def dirichlet_energy(field: VectorField, exclude=None, exclude_radius: float | None = None) -> EnergyBreakdown:
    """Total and per-cell discrete Dirichlet energy.

    ``exclude`` optionally lists singular points; cells with a corner within
    ``exclude_radius`` (default 2h) of one of them are left out of the sum.
    """
    e = per_cell(field)
    if exclude is not None and len(exclude):
        r = 2 * field.grid.h if exclude_radius is None else exclude_radius
        e = np.where(excluded_cells(field.grid, exclude, r), 0.0, e)
    return EnergyBreakdown(total=float(e.sum()), per_cell=e)


def _ball_block(grid: DomainGrid, y, r):
    """Slices of the cell array covering B_r(y) and the in-ball mask."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (3,):
        raise ValueError(f"centre must be a 3-vector, got shape {y.shape}")
    h = grid.h
    lo = np.clip(np.floor((y - r + 1.0) / h - 0.5).astype(int), 0, grid.n - 2)
    hi = np.clip(np.ceil((y + r + 1.0) / h - 0.5).astype(int) + 1, 1, grid.n - 1)
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    c = [-1.0 + h * (np.arange(a, b) + 0.5) for a, b in zip(lo, hi)]
    X, Y, Z = np.meshgrid(*c, indexing="ij")
    rel = np.stack([X - y[0], Y - y[1], Z - y[2]], axis=-1)
    dist = np.linalg.norm(rel, axis=-1)
    return sl, rel, dist


def _check_radius(grid: DomainGrid, r: float) -> None:
    if r < MIN_RADIUS_CELLS * grid.h - 1e-12:
        raise ValueError(f"radius {r:.4g} below {MIN_RADIUS_CELLS:g}h: stencil too coarse")


def local_energy(field: VectorField, y, r: float) -> float:
    """Energy of domain cells whose centre lies in the closed ball B_r(y)."""
    sl, _, dist = _ball_block(field.grid, y, r)
    return float(np.sum(per_cell(field)[sl][dist <= r]))


def normalized_local_energy(field: VectorField, y, r: float) -> float:
    """r^-1 times the energy in B_r(y); only domain cells count."""
    _check_radius(field.grid, r)
    return local_energy(field, y, r) / r


def _radial_term(field: VectorField, y, r: float, R: float) -> float:
    grid = field.grid
    if "grad" not in field._cache:
        field._cache["grad"] = cell_gradients(grid, field.nodes)
    g = field._cache["grad"]
    sl, rel, dist = _ball_block(grid, y, R)
    sel = (dist > r) & (dist <= R) & grid.cell_mask[sl]
    nu = rel[sel] / dist[sel][:, None]
    du_dnu = np.einsum("ma,mac->mc", nu, g[sl][sel])
    return float(2.0 * grid.h**3 * np.sum(np.sum(du_dnu**2, axis=1) / dist[sel]))


def monotonicity_profile(field: VectorField, y, radii) -> MonotonicityProfile:
    """Normalized energies over ``radii`` and the monotonicity defect per annulus.

    defect = [R^-1 E(B_R) - r^-1 E(B_r)] - 2 * int_{annulus} |x-y|^-1 |du/dnu|^2
    """
    radii = np.asarray(radii, dtype=np.float64)
    if radii.ndim != 1 or len(radii) < 2 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be a strictly increasing sequence of length >= 2")
    for r in radii:
        _check_radius(field.grid, r)
    y = np.asarray(y, dtype=np.float64)
    f = np.array([normalized_local_energy(field, y, r) for r in radii])
    rad = np.array([_radial_term(field, y, r, R) for r, R in zip(radii[:-1], radii[1:])])
    defect = np.diff(f) - rad
    return MonotonicityProfile(center=y, radii=radii, normalized_energy=f, radial_term=rad, defect=defect)


def el_residual(field: VectorField, exclude=None, where: np.ndarray | None = None):
    """Euler-Lagrange residual Lap_h u + |grad_h u|^2 u at free nodes.

    Nodes within 4h of any point in ``exclude`` and nodes outside the optional
    boolean mask ``where`` are skipped. Returns (residual array, median |residual|).
    """
    grid = field.grid
    h = grid.h
    u = _filled(grid, field.nodes)
    c = u[1:-1, 1:-1, 1:-1]
    lap = (
        u[2:, 1:-1, 1:-1] + u[:-2, 1:-1, 1:-1]
        + u[1:-1, 2:, 1:-1] + u[1:-1, :-2, 1:-1]
        + u[1:-1, 1:-1, 2:] + u[1:-1, 1:-1, :-2]
        - 6.0 * c
    ) / h**2
    gx = (u[2:, 1:-1, 1:-1] - u[:-2, 1:-1, 1:-1]) / (2 * h)
    gy = (u[1:-1, 2:, 1:-1] - u[1:-1, :-2, 1:-1]) / (2 * h)
    gz = (u[1:-1, 1:-1, 2:] - u[1:-1, 1:-1, :-2]) / (2 * h)
    grad2 = np.sum(gx**2 + gy**2 + gz**2, axis=-1)
    res = np.full(u.shape, np.nan)
    res[1:-1, 1:-1, 1:-1] = lap + grad2[..., None] * c
    use = grid.interior_mask.copy()
    if where is not None:
        use &= where
    if exclude is not None and len(exclude):
        pos = grid.node_positions()
        for p in np.atleast_2d(exclude):
            use &= np.linalg.norm(pos - p, axis=-1) > 4 * h
    res[~use] = np.nan
    mags = np.linalg.norm(res[use], axis=1)
    median = float(np.median(mags)) if len(mags) else 0.0
    return res, median


def rescale_blowup(field: SphereField, y, lam: float, n_out: int | None = None) -> SphereField:
    """The blow-up x -> u(y + lam x) resampled on a unit-ball grid."""
    grid = field.grid
    y = np.asarray(y, dtype=np.float64)
    if lam < 8 * grid.h - 1e-12:
        raise ValueError(f"lambda {lam:.4g} below 8h")
    if grid.boundary_distance(y) < lam - 1e-12:
        raise ValueError("B_lambda(y) leaves the domain")
    target = build_domain("ball", n_out or grid.n)
    pos = target.node_positions()
    nodes = np.full(pos.shape, np.nan)
    m = target.node_mask
    nodes[m] = _resample_unit(field, y + lam * pos[m])
    vv = _resample_unit(field, y + lam * target.surface.vertices)
    return SphereField(target, nodes, vv)


def _resample_unit(field: VectorField, pts: np.ndarray) -> np.ndarray:
    """Trilinear samples renormalized; a cancelling average (e.g. midway across
    a defect) takes the value of the nearest masked node instead."""
    grid = field.grid
    v = sample(grid, field.nodes, pts)
    norm = np.linalg.norm(v, axis=1)
    bad = norm < 1e-10
    if bad.any():
        idx = np.clip(np.rint((pts[bad] + 1.0) / grid.h).astype(int), 0, grid.n - 1)
        near = field.nodes[idx[:, 0], idx[:, 1], idx[:, 2]]
        miss = ~grid.node_mask[idx[:, 0], idx[:, 1], idx[:, 2]]
        if miss.any():
            raise ValueError("blow-up sample point has no masked neighbour")
        v[bad] = near
        norm[bad] = np.linalg.norm(near, axis=1)
    return v / norm[:, None]


def radial_share(field: VectorField, center=(0.0, 0.0, 0.0), radius: float = 1.0) -> float:
    """Share of the energy in B_radius(center) carried by the radial derivative."""
    grid = field.grid
    if "grad" not in field._cache:
        field._cache["grad"] = cell_gradients(grid, field.nodes)
    g = field._cache["grad"]
    sl, rel, dist = _ball_block(grid, center, radius)
    sel = (dist <= radius) & (dist > 0) & grid.cell_mask[sl]
    nu = rel[sel] / dist[sel][:, None]
    du_dnu = np.einsum("ma,mac->mc", nu, g[sl][sel])
    radial = np.sum(du_dnu**2)
    total = np.sum(g[sl][sel] ** 2)
    return float(radial / total) if total > 0 else 0.0
