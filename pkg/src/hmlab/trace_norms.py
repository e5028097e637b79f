"""Fractional trace seminorms on boundary surfaces and the trace families used
by the experiments (identity, bubbles, multi-bubbles, perturbations).

The Gagliardo seminorm is discretized as the vertex-lumped double sum

    sum_{i != j} |phi_i - phi_j|^p / |x_i - x_j|^(2 + s p) * w_i * w_j

with chord distances and lumped vertex areas ``w``. At ``s = 1`` the double
integral diverges and the tangential gradient norm is used instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.spatial import cKDTree

from .fields import BoundaryTrace, hedgehog_values, normalize
from .surface import FLAT, Surface, graded_sphere, rotation_to

E3 = np.array([0.0, 0.0, 1.0])

# default poles for multi-bubble traces, pairwise at least a right angle apart
DEFAULT_POLES = (
    (0.0, 0.0, 1.0),
    (0.0, 0.0, -1.0),
    (1.0, 0.0, 0.0),
    (-1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, -1.0, 0.0),
)
# cap of angular radius pi/4 around each pole
DEFAULT_CUTOFF = math.tan(math.pi / 8)

_S2 = 1.0 / math.sqrt(2.0)
# (centre of the bump, rotation axis) for each perturbation mode
PERTURBATION_MODES = (
    ((_S2, 0.0, _S2), (0.0, 1.0, 0.0)),
    ((0.0, _S2, _S2), (1.0, 0.0, 0.0)),
    ((_S2, 0.0, -_S2), (0.0, 0.0, 1.0)),
)
PERTURBATION_RADIUS = 0.3


@dataclass(frozen=True)
class SeminormParams:
    """Smoothness ``s`` in (0, 1] and integrability ``p >= 2``."""

    s: float
    p: float

    def __post_init__(self):
        if not (0.0 < self.s <= 1.0):
            raise ValueError(f"s must lie in (0, 1], got {self.s}")
        if not self.p >= 2.0:
            raise ValueError(f"p must be >= 2, got {self.p}")

    @property
    def kernel_exponent(self) -> float:
        return 2.0 + self.s * self.p

    @property
    def sp(self) -> float:
        return self.s * self.p


@dataclass(frozen=True)
class TraceFamily:
    """Parameters of a boundary-data family.

    kind is one of ``identity``, ``constant``, ``hedgehog``, ``bubble``,
    ``k_bubbles``, ``perturbed`` or ``split``. Only the fields relevant to the
    kind are read.
    """

    kind: str = "identity"
    lam: float = 1.0
    pole: tuple = (0.0, 0.0, 1.0)
    k: int = 1
    poles: tuple | None = None
    signs: tuple | None = None
    cutoff: float = DEFAULT_CUTOFF
    base: str = "identity"
    delta: float = 0.0
    mode: int = 0
    center: tuple = (0.0, 0.0, 0.0)
    value: tuple = (0.0, 0.0, 1.0)
    band: float = 0.25

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown trace family {self.kind!r}")
        if self.kind in ("bubble", "k_bubbles") and not (0.0 < self.lam <= 1.0):
            raise ValueError("bubble scale must lie in (0, 1]")
        if self.kind == "k_bubbles" and self.k < 0:
            raise ValueError("k must be >= 0")
        if self.kind == "perturbed" and not (0 <= self.mode < len(PERTURBATION_MODES)):
            raise ValueError("unknown perturbation mode")


FAMILY_KINDS = ("identity", "constant", "hedgehog", "bubble", "k_bubbles", "perturbed", "split")


# --------------------------------------------------------------------------
# stereographic charts


def stereo(x: np.ndarray) -> np.ndarray:
    """Projection from the south pole onto the plane, the north pole going to 0."""
    return x[:, :2] / (1.0 + x[:, 2:3])


def inv_stereo(y: np.ndarray) -> np.ndarray:
    r2 = np.sum(y * y, axis=1)
    out = np.empty((len(y), 3))
    out[:, 0] = 2 * y[:, 0] / (1 + r2)
    out[:, 1] = 2 * y[:, 1] / (1 + r2)
    out[:, 2] = (1 - r2) / (1 + r2)
    return out


def _on_sphere(points: np.ndarray) -> np.ndarray:
    return normalize(np.asarray(points, dtype=np.float64))


def bubble_values(points: np.ndarray, lam: float, pole=(0.0, 0.0, 1.0)) -> np.ndarray:
    """x -> Q iota(sigma(Q^T x) / lam), the dilated identity concentrating at ``pole``.

    Points are first projected radially onto the unit sphere. The antipode of
    the pole maps to its own antipode for every ``lam``.
    """
    Q = rotation_to(pole)
    x = _on_sphere(points) @ Q  # rows of Q^T x
    south = x[:, 2] <= -1.0 + 1e-15
    out = np.empty_like(x)
    out[south] = (0.0, 0.0, -1.0)
    ok = ~south
    out[ok] = inv_stereo(stereo(x[ok]) / lam)
    return normalize(out @ Q.T)


def k_bubble_values(points, k, lam, poles=None, signs=None, cutoff=DEFAULT_CUTOFF) -> np.ndarray:
    """``k`` cut-off bubbles on the constant background -e3.

    Around each pole, in the stereographic chart y centred at it, the value is
    iota(f(|y|) y/|y|) with f(r) = r / (lam (1 - (r/cutoff)^2)); beyond the
    cutoff it is -e3. Sign -1 reflects the chart and reverses the degree.
    """
    x = _on_sphere(points)
    out = np.tile((0.0, 0.0, -1.0), (len(x), 1))
    if k == 0:
        return out
    poles = DEFAULT_POLES[:k] if poles is None else poles
    signs = (1,) * k if signs is None else signs
    if len(poles) != k or len(signs) != k:
        raise ValueError("need exactly k poles and k signs")
    P = normalize(np.asarray(poles, dtype=np.float64))
    for i in range(k):
        for j in range(i + 1, k):
            if np.linalg.norm(P[i] - P[j]) < 4 * lam:
                raise ValueError("bubbles overlap: poles closer than 4*lambda")
    cap = 2 * math.atan(cutoff)
    for i in range(k):
        for j in range(i + 1, k):
            if math.acos(np.clip(P[i] @ P[j], -1, 1)) < 2 * cap:
                raise ValueError("bubble caps overlap; reduce the cutoff")
    for pole, sign in zip(P, signs):
        if sign not in (1, -1):
            raise ValueError("signs must be +1 or -1")
        xl = x @ rotation_to(pole)
        near = xl[:, 2] > math.cos(cap)
        y = stereo(xl[near])
        rho = np.linalg.norm(y, axis=1)
        if sign < 0:
            y[:, 1] = -y[:, 1]
        scale = np.zeros_like(rho)
        inner = rho < cutoff
        scale[inner] = 1.0 / (lam * (1.0 - (rho[inner] / cutoff) ** 2))
        vals = inv_stereo(y * scale[:, None])
        vals[~inner] = (0.0, 0.0, -1.0)
        out[near] = vals
    return normalize(out)


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of each row of ``v`` by its own angle."""
    c, s = np.cos(angle)[:, None], np.sin(angle)[:, None]
    return v * c + np.cross(axis, v) * s + np.outer(v @ axis, axis) * (1 - c)


def perturbation_weight(points: np.ndarray, mode: int) -> np.ndarray:
    """cos^2 bump of chord radius 0.3 around the mode's centre point."""
    c = np.asarray(PERTURBATION_MODES[mode][0])
    d = np.linalg.norm(_on_sphere(points) - c, axis=1)
    chi = np.cos(0.5 * np.pi * d / PERTURBATION_RADIUS) ** 2
    return np.where(d < PERTURBATION_RADIUS, chi, 0.0)


def split_values(surface: Surface, center=(0.0, 0.0, 0.5), value=(0.0, 0.0, -1.0), band=0.25) -> np.ndarray:
    """Constant ``value`` on flat vertices, a hedgehog about ``center`` on curved ones.

    On the curved part the hedgehog is blended into ``value`` over heights
    z < ``band`` so the datum is continuous across the rim.
    """
    a = normalize(np.asarray(value, dtype=np.float64))
    out = np.tile(a, (surface.n_vertices, 1))
    curved = surface.tags != FLAT
    x = surface.vertices[curved]
    b = hedgehog_values(x, center)
    t = np.clip(x[:, 2] / band, 0.0, 1.0)
    w = (t * t * (3 - 2 * t))[:, None]
    out[curved] = normalize((1 - w) * a + w * b)
    return out


def make_trace(family: TraceFamily, surface: Surface) -> BoundaryTrace:
    """Boundary data of the given family at the vertices of ``surface``."""
    x = surface.vertices
    kind = family.kind
    if kind == "identity":
        vals = _on_sphere(x)
    elif kind == "constant":
        vals = np.tile(normalize(np.asarray(family.value, dtype=np.float64)), (len(x), 1))
    elif kind == "hedgehog":
        vals = hedgehog_values(x, family.center)
    elif kind == "bubble":
        vals = bubble_values(x, family.lam, family.pole)
    elif kind == "k_bubbles":
        vals = k_bubble_values(x, family.k, family.lam, family.poles, family.signs, family.cutoff)
    elif kind == "perturbed":
        if family.base == "perturbed":
            raise ValueError("perturbed base must be another family")
        base = make_trace(_replace_kind(family, family.base), surface).values
        if family.delta == 0.0:
            vals = base.copy()
        else:
            axis = np.asarray(PERTURBATION_MODES[family.mode][1], dtype=np.float64)
            vals = _rotate_about(base, axis, family.delta * perturbation_weight(x, family.mode))
    else:  # split
        vals = split_values(surface, family.center, family.value, family.band)
    return BoundaryTrace(surface, normalize(vals))


def _replace_kind(family: TraceFamily, kind: str) -> TraceFamily:
    from dataclasses import replace

    return replace(family, kind=kind)


# --------------------------------------------------------------------------
# seminorms


@numba.njit(cache=True)
def _pair_sum_upper(X, F, W, half_p, half_q, block):
    # blocked symmetric sum over i < j; every block row is reduced in order
    m = X.shape[0]
    total = 0.0
    for b0 in range(0, m, block):
        b1 = min(b0 + block, m)
        part = 0.0
        for i in range(b0, b1):
            row = 0.0
            for j in range(i + 1, m):
                d2 = (X[i, 0] - X[j, 0]) ** 2 + (X[i, 1] - X[j, 1]) ** 2 + (X[i, 2] - X[j, 2]) ** 2
                f2 = (F[i, 0] - F[j, 0]) ** 2 + (F[i, 1] - F[j, 1]) ** 2 + (F[i, 2] - F[j, 2]) ** 2
                if f2 == 0.0:
                    continue
                if half_p == 1.0:
                    num = f2
                else:
                    num = f2**half_p
                row += num / d2**half_q * W[j]
            part += row * W[i]
        total += part
    return 2.0 * total


def _check_distinct(x: np.ndarray) -> None:
    if cKDTree(x).query_pairs(1e-12):
        raise ValueError("coincident surface vertices")


def gagliardo_seminorm_p(trace: BoundaryTrace, params: SeminormParams, *, block: int = 256) -> float:
    """p-th power of the trace seminorm (pair sum for s < 1, gradient norm at s = 1)."""
    return seminorm_p_values(trace.surface, trace.values, params, block=block)


def seminorm_p_values(surface: Surface, values: np.ndarray, params: SeminormParams, *, block: int = 256) -> float:
    """Same as :func:`gagliardo_seminorm_p` for arbitrary vector data, e.g. a difference of traces."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.shape != (surface.n_vertices, 3):
        raise ValueError("values do not match the surface")
    if params.s == 1.0:
        return _grad_norm_values(surface, values, params.p)
    _check_distinct(surface.vertices)
    return float(
        _pair_sum_upper(surface.vertices, values, surface.weights, params.p / 2.0, params.kernel_exponent / 2.0, block)
    )


def gagliardo_seminorm_naive(trace: BoundaryTrace, params: SeminormParams) -> float:
    """Reference O(M^2) pair sum, one full row at a time (both orders of each pair)."""
    if params.s == 1.0:
        raise ValueError("the pair sum diverges at s = 1")
    x, f, w = trace.surface.vertices, trace.values, trace.surface.weights
    _check_distinct(x)
    total = 0.0
    for i in range(len(x)):
        d2 = np.sum((x - x[i]) ** 2, axis=1)
        f2 = np.sum((f - f[i]) ** 2, axis=1)
        d2[i] = np.inf
        total += w[i] * np.sum(f2 ** (params.p / 2) / d2 ** (params.kernel_exponent / 2) * w)
    return float(total)


def triangle_gradients(surface: Surface, values: np.ndarray) -> np.ndarray:
    """Tangential gradient of the piecewise-linear interpolant, (T, 3 comps, 3 dirs)."""
    V, T = surface.vertices, surface.triangles
    a, b, c = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    n = np.cross(b - a, c - a)
    area2 = np.linalg.norm(n, axis=1)
    n = n / area2[:, None]
    # gradient of the barycentric coordinate of a vertex: n x (opposite edge) / 2A;
    # written with differences from f_a so that constant data gives exactly 0
    gb = np.cross(n, a - c) / area2[:, None]
    gc = np.cross(n, b - a) / area2[:, None]
    fa, fb, fc = values[T[:, 0]], values[T[:, 1]], values[T[:, 2]]
    return (fb - fa)[:, :, None] * gb[:, None, :] + (fc - fa)[:, :, None] * gc[:, None, :]


def grad_trace_norm(trace: BoundaryTrace, p: float = 2.0, tri_mask: np.ndarray | None = None) -> float:
    """sum_T |T| |grad_T phi|^p over triangles (optionally a subset)."""
    return _grad_norm_values(trace.surface, trace.values, p, tri_mask)


def _grad_norm_values(surface: Surface, values: np.ndarray, p: float, tri_mask=None) -> float:
    if p < 2:
        raise ValueError("p must be >= 2")
    g = triangle_gradients(surface, values)
    g2 = np.sum(g * g, axis=(1, 2))
    area = surface.triangle_areas()
    terms = area * g2 ** (p / 2)
    if tri_mask is not None:
        terms = terms[tri_mask]
    return float(np.sum(terms))


@dataclass(frozen=True)
class LocalizedSeminorm:
    value: float
    scaled: float  # rho^(sp-2) * value
    n_vertices: int


def localized_seminorm_p(trace: BoundaryTrace, center, rho: float, params: SeminormParams) -> LocalizedSeminorm:
    """Seminorm restricted to surface points within B_rho(center)."""
    surf = trace.surface
    if rho < 2 * surf.mean_spacing():
        raise ValueError("rho must be at least twice the mean vertex spacing")
    c = np.asarray(center, dtype=np.float64)
    inside = np.linalg.norm(surf.vertices - c, axis=1) <= rho
    if not inside.any():
        raise ValueError("no surface vertex within the ball")
    if params.s == 1.0:
        tri_in = inside[surf.triangles].all(axis=1)
        value = grad_trace_norm(trace, params.p, tri_mask=tri_in)
    else:
        idx = np.flatnonzero(inside)
        x, f, w = surf.vertices[idx], trace.values[idx], surf.weights[idx]
        value = float(_pair_sum_upper(x, f, w, params.p / 2.0, params.kernel_exponent / 2.0, 256))
    return LocalizedSeminorm(value=value, scaled=rho ** (params.sp - 2.0) * value, n_vertices=int(inside.sum()))


def localized_max(trace: BoundaryTrace, rho: float, params: SeminormParams, centers=None) -> float:
    """Largest scaled localized score over ``centers`` (default: every 7th vertex)."""
    if centers is None:
        centers = trace.surface.vertices[::7]
    return max(localized_seminorm_p(trace, c, rho, params).scaled for c in np.atleast_2d(centers))


# --------------------------------------------------------------------------
# scaling fits


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    lambdas: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)


def fit_loglog(lambdas, values) -> ScalingFit:
    lam = np.asarray(lambdas, dtype=np.float64)
    val = np.asarray(values, dtype=np.float64)
    if len(lam) < 3:
        raise ValueError("need at least 3 points")
    if lam.max() / lam.min() < 4.0 - 1e-12:
        raise ValueError("lambdas must span a factor of at least 4")
    if np.any(val <= 0):
        raise ValueError("values must be positive for a log-log fit")
    slope, intercept = np.polyfit(np.log(lam), np.log(val), 1)
    return ScalingFit(float(slope), float(intercept), lam, val)


def scaling_surface(lambdas, pole=(0.0, 0.0, 1.0), spacing: float = 0.12, grading: float = 0.12) -> Surface:
    """Sphere mesh graded towards ``pole`` fine enough for the smallest bubble."""
    theta_min = 0.05 * min(lambdas)
    return graded_sphere(spacing, pole=pole, grading=grading, theta_min=theta_min)


def fit_scaling_exponent(lambdas, params: SeminormParams, surface: Surface | None = None,
                         pole=(0.0, 0.0, 1.0)) -> ScalingFit:
    """Least-squares slope of log [phi_lambda]^p against log lambda for bubbles."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if len(lambdas) < 3:
        raise ValueError("need at least 3 lambdas")
    if surface is None:
        surface = scaling_surface(lambdas, pole)
    vals = [gagliardo_seminorm_p(make_trace(TraceFamily("bubble", lam=float(l), pole=tuple(pole)), surface), params)
            for l in lambdas]
    return fit_loglog(lambdas, vals)


SEMINORM_CSV_HEADER = ("family", "lambda", "s", "p", "seminorm_p", "localized_max", "fit_slope")


def write_seminorm_csv(path, rows) -> None:
    """Rows are tuples in the order of ``SEMINORM_CSV_HEADER``; floats written with repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SEMINORM_CSV_HEADER)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
