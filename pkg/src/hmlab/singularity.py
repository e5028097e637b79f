"""Detection, degree classification and audits of point singularities."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .domain import DomainGrid
from .energy import local_energy, per_cell
from .fields import FieldError, VectorField, normalize, sample
from .surface import icosphere

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class DetectorParams:
    """Lengths default to multiples of the grid spacing when left as None."""

    r_detect: float | None = None  # 4h
    density_threshold: float = FOUR_PI
    merge_radius: float | None = None  # 2 * r_detect
    degree_radius: float | None = None  # 6h

    def resolve(self, h: float) -> "DetectorParams":
        r = 4 * h if self.r_detect is None else self.r_detect
        if r < 3 * h - 1e-12:
            raise ValueError("r_detect must be at least 3h")
        if self.density_threshold <= 0:
            raise ValueError("density_threshold must be positive")
        m = 2 * r if self.merge_radius is None else self.merge_radius
        d = 6 * h if self.degree_radius is None else self.degree_radius
        if m <= 0 or d <= 0:
            raise ValueError("radii must be positive")
        return DetectorParams(r, self.density_threshold, m, d)


@dataclass(frozen=True)
class SingularPoint:
    location: np.ndarray
    density: float
    degree: int
    boundary_distance: float
    degree_error: float = 0.0
    flags: tuple = ()

    @property
    def accepted(self) -> bool:
        """Classified as a degree +-1 point."""
        return abs(self.degree) == 1


@dataclass(frozen=True)
class SeparationReport:
    pairs: tuple  # (i, j, |x_i - x_j|, min(D_i, D_j))
    c_emp: float | None


# --------------------------------------------------------------------------
# degree


def _solid_angles(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Signed solid angle of spherical triangles with unit vertices a, b, c."""
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(num, den)


_PROBES: dict = {}


def _probe(frequency: int):
    if frequency not in _PROBES:
        _PROBES[frequency] = icosphere(frequency)
    return _PROBES[frequency]


def degree_raw(field: VectorField, center, r: float, frequency: int = 8) -> float:
    """Unrounded degree of the field restricted to the sphere of radius r about center."""
    probe = _probe(frequency)
    pts = np.asarray(center, dtype=np.float64) + r * probe.vertices
    if not np.all(field.grid.contains(pts)):
        raise ValueError("probe sphere leaves the domain")
    vals = normalize(sample(field.grid, field.nodes, pts))
    T = probe.triangles
    return float(np.sum(_solid_angles(vals[T[:, 0]], vals[T[:, 1]], vals[T[:, 2]])) / FOUR_PI)


def degree_on_sphere(field: VectorField, center, r: float, frequency: int = 8, *, with_error: bool = False):
    """Degree of u on the sphere S_r(center), rounded to the nearest integer.

    Requires r >= 4h. With ``with_error`` returns (degree, |raw - degree|).
    """
    if r < 4 * field.grid.h - 1e-12:
        raise ValueError("probe radius must be at least 4h")
    raw = degree_raw(field, center, r, frequency)
    deg = int(round(raw))
    return (deg, abs(raw - deg)) if with_error else deg


# --------------------------------------------------------------------------
# detection


def _ball_kernel(h: float, r: float) -> np.ndarray:
    m = int(math.ceil(r / h)) + 1
    off = (np.arange(-m, m) + 0.5) * h
    X, Y, Z = np.meshgrid(off, off, off, indexing="ij")
    return (np.sqrt(X * X + Y * Y + Z * Z) <= r).astype(np.float64), m


def density_map(field: VectorField, r: float) -> np.ndarray:
    """r^-1 times the energy of domain cells with centre in B_r(node), per node."""
    grid = field.grid
    K, m = _ball_kernel(grid.h, r)
    E = np.pad(per_cell(field), m)
    out = fftconvolve(E, K[::-1, ::-1, ::-1], mode="valid")
    out = np.where(grid.node_mask, np.maximum(out, 0.0), 0.0) / r
    return out


def density_estimate(field: VectorField, y, r: float) -> float:
    """Energy density at y from two radii: (E(B_2r) - E(B_r)) / r.

    Eliminates the constant energy deficit of the discrete defect core, which
    enters r^-1 E(B_r) as an O(h/r) bias.
    """
    return (local_energy(field, y, 2 * r) - local_energy(field, y, r)) / r


def _clusters(points: np.ndarray, radius: float) -> np.ndarray:
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    m = len(points)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m))
    return connected_components(g, directed=False)[1]


def detect_singularities(field: VectorField, params: DetectorParams = DetectorParams(), where=None) -> list:
    """Threshold the node-wise normalized energy, cluster, locate and classify.

    ``where`` optionally restricts the candidate nodes (boolean node mask).
    Points are returned sorted by location.
    """
    grid = field.grid
    p = params.resolve(grid.h)
    dens = density_map(field, p.r_detect)
    hot = dens > p.density_threshold
    if where is not None:
        hot &= where
    idx = np.argwhere(hot)
    if len(idx) == 0:
        return []
    pos = -1.0 + grid.h * idx
    wts = dens[hot]
    labels = _clusters(pos, p.merge_radius)
    out = []
    for lab in np.unique(labels):
        sel = labels == lab
        loc = np.sum(pos[sel] * wts[sel, None], axis=0) / np.sum(wts[sel])
        out.append(_classify(field, loc, p))
    out.sort(key=lambda s: tuple(np.round(s.location, 12)))
    return out


def _classify(field: VectorField, loc: np.ndarray, p: DetectorParams) -> SingularPoint:
    grid = field.grid
    h = grid.h
    flags = []
    dist = float(grid.boundary_distance(loc))
    density = density_estimate(field, loc, p.r_detect)
    if 2 * p.r_detect > dist:
        flags.append("partial_ball")
    if density < p.density_threshold:
        flags.append("low_density")
    rad = min(p.degree_radius, dist - h)
    if rad < 2 * h:
        rad = max(dist - 0.5 * h, 0.5 * h)
        flags.append("near_boundary")
    try:
        raw = degree_raw(field, loc, rad)
        deg = int(round(raw))
        err = abs(raw - deg)
    except (ValueError, FieldError):
        deg, err = 0, float("nan")
        flags.append("degree_failed")
    if abs(deg) != 1:
        flags.append("degree_violation")
    return SingularPoint(loc, float(density), deg, dist, float(err), tuple(flags))


def count_singular(points) -> int:
    """Number of points classified with degree +-1."""
    return sum(1 for s in points if s.accepted)


# --------------------------------------------------------------------------
# audits


def separation_audit(points, grid: DomainGrid | None = None) -> SeparationReport:
    """Pairwise distances against the smaller boundary distance of each pair."""
    pairs = []
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            d = float(np.linalg.norm(points[i].location - points[j].location))
            if d <= 0:
                raise ValueError("coincident singular points")
            pairs.append((i, j, d, min(points[i].boundary_distance, points[j].boundary_distance)))
    if not pairs:
        return SeparationReport((), None)
    ratios = [d / m if m > 0 else math.inf for _, _, d, m in pairs]
    return SeparationReport(tuple(pairs), float(min(ratios)))


def boundary_layer_census(points, depth: float) -> tuple:
    """(count within ``depth`` of the boundary, count deeper)."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    near = sum(1 for s in points if s.boundary_distance < depth)
    return near, len(points) - near


SINGULARITY_CSV_HEADER = ("x", "y", "z", "density", "degree", "boundary_distance", "flags")


def write_singularities_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SINGULARITY_CSV_HEADER)
        for s in points:
            x, y, z = (repr(float(c)) for c in s.location)
            w.writerow([x, y, z, repr(float(s.density)), s.degree, repr(float(s.boundary_distance)), ";".join(s.flags)])
