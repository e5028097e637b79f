"""Triangulated boundary surfaces with lumped per-vertex area weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CURVED = 0
FLAT = 1

_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


@dataclass(frozen=True, eq=False)
class Surface:
    """Closed triangulated surface.

    ``weights`` are lumped vertex areas (one third of every incident triangle),
    ``tags`` mark vertices as CURVED or FLAT and ``tri_tags`` do the same for
    triangles so that tagged areas can be measured exactly.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    weights: np.ndarray
    tags: np.ndarray
    tri_tags: np.ndarray
    _incident: list = field(default=None, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    def area(self, tag: int | None = None) -> float:
        a = self.triangle_areas()
        if tag is None:
            return float(a.sum())
        return float(a[self.tri_tags == tag].sum())

    def mean_spacing(self) -> float:
        tri = self.triangles
        v = self.vertices
        e = np.concatenate(
            [
                np.linalg.norm(v[tri[:, 0]] - v[tri[:, 1]], axis=1),
                np.linalg.norm(v[tri[:, 1]] - v[tri[:, 2]], axis=1),
                np.linalg.norm(v[tri[:, 2]] - v[tri[:, 0]], axis=1),
            ]
        )
        return float(e.mean())

    def incident(self) -> list:
        """Triangle indices incident to each vertex (cached)."""
        if self._incident is None:
            inc = [[] for _ in range(self.n_vertices)]
            for t, tri in enumerate(self.triangles):
                for v in tri:
                    inc[v].append(t)
            object.__setattr__(self, "_incident", [np.array(i, dtype=np.int64) for i in inc])
        return self._incident


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 1]] - vertices[triangles[:, 0]]
    b = vertices[triangles[:, 2]] - vertices[triangles[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def lumped_weights(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    w = np.zeros(len(vertices))
    areas = triangle_areas(vertices, triangles)
    for k in range(3):
        np.add.at(w, triangles[:, k], areas / 3.0)
    return w


def _make(vertices, triangles, tags, tri_tags) -> Surface:
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    return Surface(
        vertices=vertices,
        triangles=triangles,
        weights=lumped_weights(vertices, triangles),
        tags=np.asarray(tags, dtype=np.uint8),
        tri_tags=np.asarray(tri_tags, dtype=np.uint8),
    )


def _dedupe(points: np.ndarray, triangles: np.ndarray, decimals: int = 10):
    """Merge coincident points, keeping first-occurrence order."""
    keys = np.round(points, decimals)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    new_index = remap[inverse.ravel()]
    return points[first[order]], new_index[triangles]


def icosphere(frequency: int, radius: float = 1.0) -> Surface:
    """Geodesic sphere: each icosahedron face split into ``frequency**2`` triangles."""
    if frequency < 1:
        raise ValueError("frequency must be >= 1")
    t = (1.0 + 5.0**0.5) / 2.0
    base = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    base /= np.linalg.norm(base, axis=1)[:, None]
    f = frequency
    pts = []
    tris = []
    for a, b, c in _ICO_FACES:
        A, B, C = base[a], base[b], base[c]
        offset = len(pts)
        index = {}
        for i in range(f + 1):
            for j in range(f + 1 - i):
                index[i, j] = offset + len(index)
                pts.append(A + (B - A) * (i / f) + (C - A) * (j / f))
        for i in range(f):
            for j in range(f - i):
                tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
                if i + j < f - 1:
                    tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    pts = np.array(pts)
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    pts, tris = _dedupe(pts, np.array(tris))
    pts = pts * radius
    return _make(pts, tris, np.full(len(pts), CURVED), np.full(len(tris), CURVED))


def _zip_rings(inner: np.ndarray, inner_ang: np.ndarray, outer: np.ndarray, outer_ang: np.ndarray):
    """Triangulate the band between two concentric rings of vertex indices.

    A ring of length one is a pole/centre. Angles must be increasing in [0, 2pi).
    """
    tris = []
    if len(inner) == 1:
        m = len(outer)
        for k in range(m):
            tris.append((inner[0], outer[k], outer[(k + 1) % m]))
        return tris
    i = j = 0
    ni, no = len(inner), len(outer)
    while i < ni or j < no:
        ai_next = inner_ang[(i + 1) % ni] + 2 * np.pi * ((i + 1) // ni)
        ao_next = outer_ang[(j + 1) % no] + 2 * np.pi * ((j + 1) // no)
        advance_outer = j < no and (i >= ni or ao_next <= ai_next)
        if advance_outer:
            tris.append((inner[i % ni], outer[j % no], outer[(j + 1) % no]))
            j += 1
        else:
            tris.append((inner[i % ni], outer[j % no], inner[(i + 1) % ni]))
            i += 1
    return tris


def half_sphere(spacing: float) -> Surface:
    """Boundary of the upper unit half-ball: flat disk T_1 plus curved cap S^+.

    Both parts are built from concentric rings sharing the rim ring; rim
    vertices are tagged FLAT.
    """
    n_rim = max(6, int(round(2 * np.pi / spacing)))
    k_disk = max(2, int(round(1.0 / spacing)))
    k_cap = max(2, int(round((np.pi / 2) / spacing)))

    pts = []
    tags = []
    tris = []
    tri_tags = []

    def ring(radius_xy, z, count, phase):
        ang = (np.arange(count) + phase) * (2 * np.pi / count)
        idx = np.arange(len(pts), len(pts) + count)
        for a in ang:
            pts.append((radius_xy * np.cos(a), radius_xy * np.sin(a), z))
        return idx, ang

    rim_idx, rim_ang = ring(1.0, 0.0, n_rim, 0.0)
    tags.extend([FLAT] * n_rim)

    # flat disk, from the rim inwards
    prev_idx, prev_ang = rim_idx, rim_ang
    for k in range(k_disk - 1, -1, -1):
        r = k / k_disk
        count = 1 if k == 0 else max(6, int(round(2 * np.pi * r / spacing)))
        idx, ang = ring(r, 0.0, count, 0.5 * (k % 2))
        tags.extend([FLAT] * count)
        new = _zip_rings(idx, ang, prev_idx, prev_ang)
        # orient flat triangles with normal -e3 (outward)
        tris.extend((a, c, b) for a, b, c in new)
        tri_tags.extend([FLAT] * len(new))
        prev_idx, prev_ang = idx, ang

    # curved cap, from the rim up to the pole
    prev_idx, prev_ang = rim_idx, rim_ang
    for k in range(k_cap - 1, -1, -1):
        theta = (np.pi / 2) * k / k_cap
        rxy, z = np.sin(theta), np.cos(theta)
        count = 1 if k == 0 else max(6, int(round(2 * np.pi * rxy / spacing)))
        idx, ang = ring(rxy, z, count, 0.5 * (k % 2))
        tags.extend([CURVED] * count)
        new = _zip_rings(idx, ang, prev_idx, prev_ang)
        tris.extend(new)
        tri_tags.extend([CURVED] * len(new))
        prev_idx, prev_ang = idx, ang

    pts = np.array(pts)
    pts[-1] = (0.0, 0.0, 1.0)
    return _make(pts, np.array(tris), tags, tri_tags)


def cube_surface(n: int, half_width: float = 1.0) -> Surface:
    """Six faces of [-1,1]^3 with vertices on the n x n grid nodes of each face."""
    g = np.linspace(-half_width, half_width, n)
    pts = []
    tris = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            a1, a2 = [k for k in range(3) if k != axis]
            offset = len(pts)
            for j in range(n):
                for i in range(n):
                    p = [0.0, 0.0, 0.0]
                    p[axis] = sign * half_width
                    p[a1] = g[i]
                    p[a2] = g[j]
                    pts.append(p)
            for j in range(n - 1):
                for i in range(n - 1):
                    v00 = offset + j * n + i
                    v10, v01, v11 = v00 + 1, v00 + n, v00 + n + 1
                    tris.append((v00, v10, v11))
                    tris.append((v00, v11, v01))
    pts, tris = _dedupe(np.array(pts), np.array(tris))
    return _make(pts, tris, np.full(len(pts), FLAT), np.full(len(tris), FLAT))


def rotation_to(pole) -> np.ndarray:
    """A rotation matrix Q with Q e3 = pole (unit)."""
    p = np.asarray(pole, dtype=np.float64)
    p = p / np.linalg.norm(p)
    e3 = np.array([0.0, 0.0, 1.0])
    c = float(p @ e3)
    if c > 1.0 - 1e-15:
        return np.eye(3)
    if c < -1.0 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    v = np.cross(e3, p)
    s = np.linalg.norm(v)
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def graded_sphere(spacing: float, pole=(0.0, 0.0, 1.0), grading: float = 0.2, theta_min: float = 1e-3) -> Surface:
    """Unit sphere from latitude rings, refined geometrically towards ``pole``.

    Away from the pole the ring spacing is ``spacing``; within polar angle
    theta of the pole it is ``grading * theta``, so the mesh looks the same
    at every scale down to ``theta_min``. Used to resolve traces that
    concentrate at a point.
    """
    thetas = [0.0, theta_min]
    while True:
        t = thetas[-1]
        step = min(spacing, grading * t)
        if step >= spacing:
            break
        thetas.append(t + step)
    t0 = thetas[-1]
    m = max(1, int(np.ceil((np.pi - t0) / spacing)))
    thetas.extend(t0 + (np.pi - t0) * np.arange(1, m + 1) / m)

    pts = []
    tris = []
    prev_idx = prev_ang = None
    for k, th in enumerate(thetas):
        if k == 0 or k == len(thetas) - 1:
            count = 1
        else:
            local = min(thetas[k] - thetas[k - 1], thetas[k + 1] - thetas[k])
            count = max(6, int(round(2 * np.pi * np.sin(th) / local)))
        ang = (np.arange(count) + 0.5 * (k % 2)) * (2 * np.pi / count)
        idx = np.arange(len(pts), len(pts) + count)
        st, ct = np.sin(th), np.cos(th)
        for a in ang:
            pts.append((st * np.cos(a), st * np.sin(a), ct))
        if prev_idx is not None:
            if len(prev_idx) == 1:
                tris.extend(_zip_rings(prev_idx, prev_ang, idx, ang))
            else:
                tris.extend((a, c, b) for a, b, c in _zip_rings(idx, ang, prev_idx, prev_ang))
        prev_idx, prev_ang = idx, ang
    pts = np.array(pts) @ rotation_to(pole).T
    tris = np.array(tris)
    return _make(pts, tris, np.full(len(pts), CURVED), np.full(len(tris), CURVED))
