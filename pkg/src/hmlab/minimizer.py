"""Harmonic extension, sphere-valued extension by radial projection, and
energy descent for sphere-valued maps with prescribed boundary trace.

The descent is a tangent-projected heat step followed by renormalization,

    w_i = u_i + (tau/h^2) P_{u_i} sum_{j ~ i} (u_j - u_i),    u_i <- w_i/|w_i|,

which never increases the edge energy of :mod:`hmlab.energy` for
tau <= h^2/6: the tangent step decreases the quadratic energy and, since
|w_i| >= 1, renormalization shortens every edge difference.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import cg

from .domain import DomainGrid
from .fields import E3, BoundaryTrace, SphereField, VectorField, normalize, random_field, shell_values

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SolverDivergence(SolverError):
    pass


@dataclass(frozen=True)
class SolverParams:
    """tau=None means the largest admissible step h^2/6."""

    tau: float | None = None
    max_iters: int = 20000
    rel_tol: float = 1e-7
    restarts: int = 1
    seed: int = 0
    window: int = 100
    radial_start: bool = True  # also descend from the normalized harmonic extension

    def __post_init__(self):
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.restarts < 1 or self.max_iters < 0 or self.window < 1:
            raise ValueError("restarts >= 1, max_iters >= 0 and window >= 1 required")

    def step(self, h: float) -> float:
        tmax = h * h / 6.0
        if self.tau is None:
            return tmax
        if self.tau > tmax * (1 + 1e-12):
            raise ValueError(f"tau {self.tau:.3g} exceeds h^2/6 = {tmax:.3g}")
        return self.tau


# --------------------------------------------------------------------------
# grid topology shared by the kernels


@dataclass(frozen=True, eq=False)
class _Topology:
    free: np.ndarray  # flat indices of free nodes
    nbrs: np.ndarray  # (F, 6) flat indices of their axis neighbours
    edges: np.ndarray  # (E, 2) flat node indices of edges with an adjacent domain cell
    weights: np.ndarray  # (E,) fraction of adjacent domain cells


def topology(grid: DomainGrid) -> _Topology:
    key = "topology"
    if key in grid._cache:
        return grid._cache[key]
    n = grid.n
    flat = np.arange(n**3).reshape(n, n, n)
    free = flat[grid.interior_mask]
    ijk = np.argwhere(grid.interior_mask)
    nb = []
    for axis in range(3):
        for sign in (1, -1):
            off = ijk.copy()
            off[:, axis] += sign
            nb.append(flat[off[:, 0], off[:, 1], off[:, 2]])
    nbrs = np.stack(nb, axis=1)
    wx, wy, wz = grid.edge_weights()
    edges, weights = [], []
    for axis, w in enumerate((wx, wy, wz)):
        idx = np.argwhere(w > 0)
        a = flat[idx[:, 0], idx[:, 1], idx[:, 2]]
        idx[:, axis] += 1
        b = flat[idx[:, 0], idx[:, 1], idx[:, 2]]
        edges.append(np.stack([a, b], axis=1))
        weights.append(w[w > 0])
    topo = _Topology(free, nbrs, np.concatenate(edges), np.concatenate(weights))
    grid._cache[key] = topo
    return topo


@numba.njit(cache=True)
def _edge_energy(u, edges, weights, h):
    total = 0.0
    for e in range(edges.shape[0]):
        a, b = edges[e, 0], edges[e, 1]
        d = (u[a, 0] - u[b, 0]) ** 2 + (u[a, 1] - u[b, 1]) ** 2 + (u[a, 2] - u[b, 2]) ** 2
        total += weights[e] * d
    return h * total


@numba.njit(cache=True)
def _flow_step(u, out, free, nbrs, alpha):
    move = 0.0
    for k in range(free.shape[0]):
        i = free[k]
        l0 = -6.0 * u[i, 0]
        l1 = -6.0 * u[i, 1]
        l2 = -6.0 * u[i, 2]
        for m in range(6):
            j = nbrs[k, m]
            l0 += u[j, 0]
            l1 += u[j, 1]
            l2 += u[j, 2]
        dot = l0 * u[i, 0] + l1 * u[i, 1] + l2 * u[i, 2]
        w0 = u[i, 0] + alpha * (l0 - dot * u[i, 0])
        w1 = u[i, 1] + alpha * (l1 - dot * u[i, 1])
        w2 = u[i, 2] + alpha * (l2 - dot * u[i, 2])
        r = np.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
        w0 /= r
        w1 /= r
        w2 /= r
        d = np.sqrt((w0 - u[i, 0]) ** 2 + (w1 - u[i, 1]) ** 2 + (w2 - u[i, 2]) ** 2)
        if d > move:
            move = d
        out[i, 0] = w0
        out[i, 1] = w1
        out[i, 2] = w2
    return move


def _flat(grid: DomainGrid, nodes: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.where(grid.node_mask[..., None], nodes, 0.0).reshape(-1, 3))


def edge_energy(grid: DomainGrid, nodes: np.ndarray) -> float:
    """Total discrete energy; equals ``dirichlet_energy(...).total`` up to rounding."""
    t = topology(grid)
    return float(_edge_energy(_flat(grid, nodes), t.edges, t.weights, grid.h))


# --------------------------------------------------------------------------
# harmonic extension


def _laplace_system(grid: DomainGrid):
    key = "laplace"
    if key in grid._cache:
        return grid._cache[key]
    t = topology(grid)
    N = grid.n**3
    row = np.full(N, -1, dtype=np.int64)
    row[t.free] = np.arange(len(t.free))
    a, b, w = t.edges[:, 0], t.edges[:, 1], t.weights
    # weighted graph Laplacian restricted to free rows
    diag = np.zeros(N)
    np.add.at(diag, a, w)
    np.add.at(diag, b, w)
    fa, fb = row[a] >= 0, row[b] >= 0
    both = fa & fb
    r = np.concatenate([row[a[both]], row[b[both]], np.arange(len(t.free))])
    c = np.concatenate([row[b[both]], row[a[both]], np.arange(len(t.free))])
    v = np.concatenate([-w[both], -w[both], diag[t.free]])
    A = coo_matrix((v, (r, c)), shape=(len(t.free),) * 2).tocsr()
    # coupling of free rows to pinned columns
    pa = fa & ~fb
    pb = fb & ~fa
    coupling = (
        np.concatenate([row[a[pa]], row[b[pb]]]),
        np.concatenate([b[pa], a[pb]]),
        np.concatenate([w[pa], w[pb]]),
    )
    grid._cache[key] = (A, coupling)
    return A, coupling


def harmonic_extension(grid: DomainGrid, trace: BoundaryTrace, tol: float = 1e-8, max_iters: int = 20000) -> VectorField:
    """Componentwise discrete harmonic extension with the shell pinned to the trace.

    Returns a field whose max residual at free nodes is below ``tol * max|trace|``.
    Unit-valued data is renormalized on the shell; any other data (e.g. a
    linear function) is interpolated as is.
    """
    t = topology(grid)
    A, (rows, cols, w) = _laplace_system(grid)
    unit = bool(np.all(np.abs(np.linalg.norm(trace.values, axis=1) - 1.0) <= 1e-12))
    pinned = shell_values(grid, trace, unit)
    u = _flat(grid, pinned)
    b = np.zeros((len(t.free), 3))
    np.add.at(b, rows, w[:, None] * u[cols])
    scale = max(1.0, float(np.max(np.abs(trace.values))))
    x = np.empty_like(b)
    diag = A.diagonal()
    for c in range(3):
        sol, info = cg(A, b[:, c], rtol=1e-13, atol=0.0, maxiter=max_iters)
        if info != 0:
            raise SolverError("harmonic extension did not converge")
        x[:, c] = sol
    res = np.max(np.abs((A @ x - b) / diag[:, None]), initial=0.0)
    if res > tol * scale:
        raise SolverError(f"harmonic extension residual {res:.2e} above tolerance")
    u[t.free] = x
    nodes = u.reshape(grid.n, grid.n, grid.n, 3)
    return VectorField(grid, nodes, trace.values)


# --------------------------------------------------------------------------
# extension by radial projection


def candidate_centers(count: int = 11, half_width: float = 0.45, radius: float = 0.5) -> np.ndarray:
    """Uniform lattice of the cube [-w, w]^3 intersected with the open ball |a| < radius."""
    g = np.linspace(-half_width, half_width, count)
    A = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    return A[np.linalg.norm(A, axis=1) < radius]


def project_from(a: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Radial projection of sphere points from the interior point a: (xi - a)/|xi - a|."""
    return normalize(xi - a)


def unproject_from(a: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Inverse of :func:`project_from`: the sphere point hit by the ray a + t eta, t > 0."""
    a = np.asarray(a, dtype=np.float64)
    ae = eta @ a
    t = -ae + np.sqrt(ae * ae + 1.0 - a @ a)
    return a + t[..., None] * eta


@numba.njit(cache=True)
def _candidate_energy(v, mask_idx, a, edges, weights, h, work):
    # returns -1 if some masked value coincides with a
    for k in range(mask_idx.shape[0]):
        i = mask_idx[k]
        d0 = v[i, 0] - a[0]
        d1 = v[i, 1] - a[1]
        d2 = v[i, 2] - a[2]
        r = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        if r == 0.0:
            return -1.0
        work[i, 0] = d0 / r
        work[i, 1] = d1 / r
        work[i, 2] = d2 / r
    return _edge_energy(work, edges, weights, h)


TIE_TOL = 1e-9
# energies below this are rounding noise around a constant map
ENERGY_FLOOR = 1e-20


@dataclass(frozen=True)
class ExtensionResult:
    field: SphereField
    a_star: np.ndarray
    energy_ratio: float
    candidate_energies: np.ndarray = field(repr=False)


def project_extension(vfield: VectorField, candidates: np.ndarray | None = None) -> ExtensionResult:
    """Sphere-valued extension of a vector field with unit boundary values.

    Each candidate centre a gives u_a = (v - a)/|v - a|; the one of least
    energy is kept and composed with the inverse radial projection, which
    restores the original boundary values.
    """
    grid = vfield.grid
    t = topology(grid)
    if candidates is None:
        candidates = candidate_centers()
    shell_norm = np.linalg.norm(vfield.nodes[grid.shell_mask], axis=1)
    if not np.all(np.abs(shell_norm - 1.0) <= 1e-9):
        raise ValueError("boundary values of the vector field must be unit")
    v = _flat(grid, vfield.nodes)
    mask_idx = np.flatnonzero(grid.node_mask.ravel())
    work = np.zeros_like(v)
    energies = np.array(
        [_candidate_energy(v, mask_idx, np.asarray(a, dtype=np.float64), t.edges, t.weights, grid.h, work) for a in candidates]
    )
    ok = energies >= 0
    if not ok.any():
        raise SolverError("every candidate centre hits a value of the field")
    # exact symmetric ties differ only by rounding; take the first in lattice order
    emin = np.min(energies[ok])
    best = int(np.flatnonzero(ok & (energies <= emin * (1 + TIE_TOL)))[0])
    a = np.asarray(candidates[best], dtype=np.float64)
    m = grid.node_mask
    nodes = np.full(vfield.nodes.shape, np.nan)
    nodes[m] = normalize(unproject_from(a, project_from(a, vfield.nodes[m])))
    vv = normalize(unproject_from(a, project_from(a, vfield.vertex_values)))
    out = SphereField(grid, nodes, vv)
    ev = edge_energy(grid, vfield.nodes)
    eo = edge_energy(grid, out.nodes)
    ratio = eo / ev if ev > 0 else (1.0 if eo == 0 else np.inf)
    return ExtensionResult(out, a, float(ratio), energies)


# --------------------------------------------------------------------------
# descent


@dataclass(frozen=True)
class RunRecord:
    start: str  # "extension", "warm", "radial" or "random"
    seed: int | None
    energy: float
    iterations: int
    converged: bool
    error: str = ""


@dataclass(frozen=True)
class MinimizeResult:
    field: SphereField
    history: np.ndarray  # (iters+1, 3): iter, energy, max node move of the best run
    runs: tuple

    @property
    def energy(self) -> float:
        return float(self.history[-1, 1])

    def history_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "energy", "max_node_move"])
            for it, e, mv in self.history:
                w.writerow([int(it), repr(float(e)), repr(float(mv))])


def descend(start: SphereField, params: SolverParams):
    """Run the projected heat flow from ``start``; returns (field, history, converged)."""
    grid = start.grid
    t = topology(grid)
    alpha = params.step(grid.h) / grid.h**2
    u = _flat(grid, start.nodes)
    nxt = u.copy()
    e = float(_edge_energy(u, t.edges, t.weights, grid.h))
    hist = [(0, e, 0.0)]
    converged = e <= ENERGY_FLOOR
    it = 0
    while not converged and it < params.max_iters:
        move = _flow_step(u, nxt, t.free, t.nbrs, alpha)
        e_new = float(_edge_energy(nxt, t.edges, t.weights, grid.h))
        it += 1
        if e_new > e * (1 + 1e-12) + 1e-300:
            raise SolverDivergence(f"energy rose from {e!r} to {e_new!r} at iteration {it}")
        u, nxt = nxt, u
        e = e_new
        hist.append((it, e, move))
        if move == 0.0 or e <= ENERGY_FLOOR:
            converged = True
        elif it >= params.window:
            e_old = hist[it - params.window][1]
            converged = (e_old - e) <= params.rel_tol * e_old
    nodes = u.reshape(grid.n, grid.n, grid.n, 3)
    return SphereField(grid, np.where(grid.node_mask[..., None], nodes, np.nan), start.vertex_values), np.array(hist), converged


def initial_extension(grid: DomainGrid, trace: BoundaryTrace) -> SphereField:
    return project_extension(harmonic_extension(grid, trace)).field


def radial_extension(grid: DomainGrid, trace: BoundaryTrace) -> SphereField:
    """Harmonic extension projected radially from a = 0 (zero vectors map to e3).

    Unlike the projected extension it keeps the symmetry of the data about the
    origin, so an identity trace starts from the centred hedgehog.
    """
    v = harmonic_extension(grid, trace)
    m = grid.node_mask
    vals = v.nodes[m]
    r = np.linalg.norm(vals, axis=1)
    zero = r <= 1e-12
    vals = vals / np.where(zero, 1.0, r)[:, None]
    vals[zero] = E3
    nodes = np.full(v.nodes.shape, np.nan)
    nodes[m] = vals
    nodes[grid.shell_mask] = shell_values(grid, trace)[grid.shell_mask]
    return SphereField(grid, nodes, trace.values)


def warm_start(field: SphereField, trace: BoundaryTrace) -> SphereField:
    """Interior values of ``field`` with the boundary shell reset to ``trace``."""
    grid = field.grid
    nodes = np.array(field.nodes)
    nodes[grid.shell_mask] = shell_values(grid, trace)[grid.shell_mask]
    return SphereField(grid, nodes, trace.values)


def minimize(grid: DomainGrid, trace: BoundaryTrace, params: SolverParams = SolverParams(),
             initial: SphereField | None = None) -> MinimizeResult:
    """Best-of-restarts projected heat flow.

    Run 0 starts from the projected harmonic extension, or from ``initial``
    with its shell reset to the trace when given (continuation). Without
    ``initial`` and with ``params.radial_start`` one extra run starts from
    :func:`radial_extension`; the projected extension puts the defect of
    symmetric data near a*, where lattice pinning can hold it in a
    metastable state. Random runs draw from ``numpy.random.default_rng([seed, r])``
    for r = 1, ..., restarts - 1.
    """
    if trace.surface is not grid.surface:
        raise ValueError("trace lives on a different surface")
    best = None
    runs = []
    plan = [("warm" if initial is not None else "extension", 0)]
    if initial is None and params.radial_start:
        plan.append(("radial", 0))
    plan += [("random", r) for r in range(1, params.restarts)]
    for i, (kind, r) in enumerate(plan):
        seed = params.seed if kind == "random" else None
        try:
            if kind == "warm":
                start = warm_start(initial, trace)
            elif kind == "extension":
                start = initial_extension(grid, trace)
            elif kind == "radial":
                start = radial_extension(grid, trace)
            else:
                start = random_field(grid, trace, np.random.default_rng([params.seed, r]))
            fld, hist, conv = descend(start, params)
        except SolverError as exc:
            log.warning("run %d (%s) failed: %s", i, kind, exc)
            runs.append(RunRecord(kind, seed, float("nan"), 0, False, str(exc)))
            continue
        runs.append(RunRecord(kind, seed, float(hist[-1, 1]), int(hist[-1, 0]), bool(conv)))
        log.info("run %d (%s): energy %.6g after %d iterations", i, kind, hist[-1, 1], hist[-1, 0])
        if best is None or hist[-1, 1] < best[1][-1, 1]:
            best = (fld, hist)
    if best is None:
        raise SolverError("all runs failed")
    return MinimizeResult(best[0], best[1], tuple(runs))


def w12_distance(a: VectorField, b: VectorField) -> float:
    """sqrt(||A - B||_{L^2}^2 + ||grad(A - B)||_{L^2}^2) with cell quadrature.

    The L^2 part averages |A - B|^2 over the 8 corners of each domain cell;
    the gradient part is the discrete energy of the difference.
    """
    from .energy import cell_energy

    if a.grid is not b.grid:
        raise ValueError("fields live on different grids")
    grid = a.grid
    d = np.where(grid.node_mask[..., None], a.nodes - b.nodes, 0.0)
    d2 = np.sum(d * d, axis=-1)
    n = grid.n
    corners = sum(
        d2[i : i + n - 1, j : j + n - 1, k : k + n - 1] for i in (0, 1) for j in (0, 1) for k in (0, 1)
    ) / 8.0
    l2 = float(np.sum(corners[grid.cell_mask])) * grid.h**3
    grad = float(np.sum(cell_energy(grid, d)))
    return float(np.sqrt(l2 + grad))
