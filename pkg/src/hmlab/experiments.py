"""Experiment harness: configs, the five studies, and deterministic reports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .domain import build_domain
from .energy import EIGHT_PI, local_energy, monotonicity_profile, normalized_local_energy, radial_share, rescale_blowup
from .fields import E3
from .minimizer import MinimizeResult, SolverError, SolverParams, minimize, w12_distance
from .singularity import DetectorParams, count_singular, detect_singularities
from .trace_norms import (
    SeminormParams,
    TraceFamily,
    fit_loglog,
    gagliardo_seminorm_p,
    localized_seminorm_p,
    make_trace,
    seminorm_p_values,
)

log = logging.getLogger(__name__)

EXPERIMENTS = ("linear_law", "sharpness", "stability", "boundary_regularity", "monotonicity_suite")
UNIQUENESS_NOTE = "uniqueness of the base minimizer is assumed, not verified"
# degree-1 half-ball data: constant -e3 on the flat face, a hedgehog about an
# interior point on the curved part, so the minimizer must have a singularity
DEFAULT_SPLIT = {"kind": "split", "center": (0.0, 0.0, 0.5), "value": (0.0, 0.0, -1.0)}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    domain: str = "ball"
    n: int = 49
    s: float = 0.6
    p: float = 2.0
    lambdas: tuple = (1.0, 0.5, 0.25)
    k_list: tuple = (0, 1, 2, 3)
    deltas: tuple = (0.8, 0.4, 0.2, 0.1, 0.05)
    bubble_lam: float = 0.25
    sp_grid: tuple = ((1.0, 2.0), (0.75, 8.0 / 3.0))
    mode: int = 0
    radii: tuple = (0.1, 0.2, 0.4)
    trace: dict | None = None
    solver: SolverParams = SolverParams()
    detector: DetectorParams = DetectorParams()
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        SeminormParams(self.s, self.p)
        for s, p in self.sp_grid:
            SeminormParams(s, p)
        need = {
            "linear_law": self.k_list,
            "sharpness": self.lambdas,
            "stability": self.deltas,
            "boundary_regularity": self.radii,
        }.get(self.experiment, (1,))
        if len(need) == 0:
            raise ValueError("experiment parameter list must be nonempty")

    # -- JSON mirror ------------------------------------------------------
    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (SolverParams, DetectorParams)):
                v = asdict(v)
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "solver" in d:
            d["solver"] = SolverParams(**d["solver"])
        if "detector" in d:
            d["detector"] = DetectorParams(**d["detector"])
        for key in ("lambdas", "k_list", "deltas", "radii"):
            if key in d:
                d[key] = tuple(d[key])
        if "sp_grid" in d:
            d["sp_grid"] = tuple(tuple(x) for x in d["sp_grid"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


ROW_FIELDS = (
    "case", "experiment", "config_sha", "seed", "domain", "n", "s", "p", "lam", "k", "delta",
    "seminorm_p", "n_singular", "n_flagged", "energy", "run_energies", "distance", "value", "location",
    "defect_min", "radial_share", "fit_slope", "rel_change", "flags", "error",
)


@dataclass
class ExperimentReport:
    experiment: str
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.verdicts) and all(self.verdicts.values())

    def row(self, case: str, **kw) -> dict:
        r = {k: "" for k in ROW_FIELDS}
        r.update(case=case, experiment=self.experiment, config_sha=self.config.digest(), seed=self.config.seed,
                 domain=self.config.domain, n=self.config.n)
        r.update(kw)
        self.rows.append(r)
        return r

    def write(self, out_dir) -> list:
        """Write ``<experiment>.csv``, ``<experiment>_summary.csv`` and the config echo."""
        os.makedirs(out_dir, exist_ok=True)
        base = os.path.join(out_dir, self.experiment)
        rows = sorted(self.rows, key=lambda r: r["case"])
        with open(base + ".csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ROW_FIELDS)
            for r in rows:
                w.writerow([_fmt(r[k]) for k in ROW_FIELDS])
        with open(base + "_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["verdict", "passed"])
            for k in sorted(self.verdicts):
                w.writerow([k, int(bool(self.verdicts[k]))])
            for note in self.notes:
                w.writerow(["note: " + note, ""])
        with open(base + "_config.json", "w") as fh:
            json.dump(self.config.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        return [base + ".csv", base + "_summary.csv", base + "_config.json"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


# --------------------------------------------------------------------------
# shared steps


def _solve(grid, trace, cfg: ExperimentConfig, initial=None) -> MinimizeResult:
    return minimize(grid, trace, replace(cfg.solver, seed=cfg.seed), initial=initial)


def _detect(result: MinimizeResult, cfg: ExperimentConfig):
    pts = detect_singularities(result.field, cfg.detector)
    return pts, count_singular(pts), sum(1 for s in pts if s.flags)


def _flags(pts) -> list:
    return sorted({f for s in pts for f in s.flags})


def _energies(result: MinimizeResult) -> list:
    return [r.energy for r in result.runs]


# --------------------------------------------------------------------------
# studies


def run_linear_law(config: ExperimentConfig) -> ExperimentReport:
    """k bubbles at critical scaling: singularity counts against trace seminorms."""
    rep = ExperimentReport("linear_law", config)
    for s, p in config.sp_grid:
        if abs(s * p - 2.0) > 1e-9:
            raise ValueError("linear law requires s p = 2")
    grid = build_domain(config.domain, config.n)
    ratios = {sp: [] for sp in config.sp_grid}
    counts_ok = True
    for k in sorted(config.k_list):
        case = f"k={k:02d}"
        try:
            fam = TraceFamily("k_bubbles", k=k, lam=config.bubble_lam)
            trace = make_trace(fam, grid.surface)
            res = _solve(grid, trace, config)
            pts, N, nflag = _detect(res, config)
        except (SolverError, ValueError) as exc:
            counts_ok = False
            rep.row(case, k=k, lam=config.bubble_lam, error=repr(exc))
            continue
        counts_ok &= N == k
        for s, p in config.sp_grid:
            semi = gagliardo_seminorm_p(trace, SeminormParams(s, p))
            ratio = N / semi if (k > 0 and semi > 0) else ""
            if ratio != "":
                ratios[(s, p)].append(ratio)
            rep.row(f"{case},s={s:.4f}", k=k, lam=config.bubble_lam, s=s, p=p, seminorm_p=semi, n_singular=N,
                    n_flagged=nflag, energy=res.energy, run_energies=_energies(res), value=ratio, flags=_flags(pts))
    rep.verdicts["counts_equal_k"] = counts_ok
    for (s, p), r in ratios.items():
        spread = (max(r) / min(r) if min(r) > 0 else math.inf) if r else math.nan
        rep.verdicts[f"ratio_spread_le_3[s={s:.4f}]"] = bool(r) and spread <= 3.0
        rep.row(f"zz_spread,s={s:.4f}", s=s, p=p, value=spread)
    rep.notes.append("N_k = k is a design property of the separated bubble family, not a theorem")
    return rep


def run_sharpness(config: ExperimentConfig) -> ExperimentReport:
    """Concentrating bubbles below critical scaling: seminorm shrinks, one singularity stays."""
    params = SeminormParams(config.s, config.p)
    if params.sp >= 2.0:
        raise ValueError("sharpness study requires s p < 2")
    rep = ExperimentReport("sharpness", config)
    grid = build_domain(config.domain, config.n)
    crit = SeminormParams(*config.sp_grid[0])
    lams, vals, crits = [], [], []
    ones = True
    for lam in sorted(config.lambdas, reverse=True):
        case = f"lam={lam:.6f}"
        try:
            trace = make_trace(TraceFamily("bubble", lam=lam), grid.surface)
            res = _solve(grid, trace, config)
            pts, N, nflag = _detect(res, config)
        except (SolverError, ValueError) as exc:
            ones = False
            rep.row(case, lam=lam, error=repr(exc))
            continue
        semi = gagliardo_seminorm_p(trace, params)
        c = gagliardo_seminorm_p(trace, crit)
        lams.append(lam)
        vals.append(semi)
        crits.append(c)
        ones &= N == 1
        rep.row(case, lam=lam, s=params.s, p=params.p, seminorm_p=semi, n_singular=N, n_flagged=nflag,
                energy=res.energy, run_energies=_energies(res), value=c, flags=_flags(pts))
    rep.verdicts["one_singularity_each"] = ones
    if len(lams) >= 3 and max(lams) / min(lams) >= 4:
        fit = fit_loglog(lams, vals)
        slope = fit.slope
    else:
        slope = math.nan
    target = 2.0 - params.sp
    rep.verdicts["slope_within_0.15"] = abs(slope - target) <= 0.15
    if lams:
        drop = vals[0] / vals[-1]
        need = 0.99 * (max(lams) / min(lams)) ** target
        rep.verdicts["seminorm_drop"] = drop >= need
        change = abs(crits[-1] - crits[0]) / crits[0]
        rep.verdicts["critical_change_le_15pct"] = change <= 0.15
        rep.row("zz_summary", s=params.s, p=params.p, value=drop, fit_slope=slope, rel_change=change)
    return rep


def run_stability(config: ExperimentConfig) -> ExperimentReport:
    """Perturbed identity data: singularity count and W^{1,2} distance to the base minimizer.

    Each perturbed problem is solved by continuation from the base minimizer.
    """
    params = SeminormParams(config.s, config.p)
    rep = ExperimentReport("stability", config)
    rep.notes.append(UNIQUENESS_NOTE)
    grid = build_domain(config.domain, config.n)
    base_trace = make_trace(TraceFamily("identity"), grid.surface)
    base_semi = gagliardo_seminorm_p(base_trace, params)
    base = _solve(grid, base_trace, config)
    base_pts, N0, nf0 = _detect(base, config)
    rep.row("delta=base", delta=0.0, s=params.s, p=params.p, seminorm_p=base_semi, n_singular=N0, n_flagged=nf0,
            energy=base.energy, run_energies=_energies(base), distance=0.0, flags=_flags(base_pts))
    small_ok = N0 == 1
    dists = []
    for delta in sorted(config.deltas, reverse=True):
        case = f"delta={delta:.6f}"
        try:
            trace = make_trace(TraceFamily("perturbed", base="identity", delta=delta, mode=config.mode), grid.surface)
            res = _solve(grid, trace, config, initial=base.field)
            pts, N, nflag = _detect(res, config)
        except (SolverError, ValueError) as exc:
            small_ok = False
            rep.row(case, delta=delta, error=repr(exc))
            continue
        pert = seminorm_p_values(grid.surface, trace.values - base_trace.values, params)
        dist = w12_distance(res.field, base.field)
        if pert <= 0.1 * base_semi:
            small_ok &= N == 1
        if delta > 0:
            dists.append((delta, dist))
        rep.row(case, delta=delta, s=params.s, p=params.p, seminorm_p=pert, n_singular=N, n_flagged=nflag,
                energy=res.energy, run_energies=_energies(res), distance=dist, value=pert / base_semi,
                flags=_flags(pts))
    rep.verdicts["count_stable_for_small_perturbations"] = small_ok
    if len(dists) >= 2:
        d = [x for _, x in dists]  # ordered by decreasing delta
        rep.verdicts["distance_halves"] = d[-1] <= 0.5 * d[0]
        rep.verdicts["distance_nonincreasing_20pct"] = all(b <= 1.2 * a for a, b in zip(d, d[1:]))
    else:
        rep.verdicts["distance_halves"] = False
    return rep


def run_boundary_regularity(config: ExperimentConfig) -> ExperimentReport:
    """Half ball, constant flat-face data: no singularity in the layer next to the flat face."""
    if config.domain != "half_ball":
        raise ValueError("boundary regularity study runs on the half ball")
    params = SeminormParams(config.s, config.p)
    rep = ExperimentReport("boundary_regularity", config)
    grid = build_domain("half_ball", config.n)
    data = dict(config.trace or DEFAULT_SPLIT)
    trace = make_trace(TraceFamily(**data), grid.surface)
    try:
        res = _solve(grid, trace, config)
    except SolverError as exc:
        rep.row("solve", error=repr(exc))
        rep.verdicts["no_singularity_near_flat_face"] = False
        return rep
    pts, N, nflag = _detect(res, config)
    near_flat = [s for s in pts if s.location[2] < 0.1]
    lowest = list(min(pts, key=lambda s: s.location[2]).location) if pts else ""
    rep.row("solve", s=params.s, p=params.p, seminorm_p=gagliardo_seminorm_p(trace, params), n_singular=N,
            n_flagged=nflag, energy=res.energy, run_energies=_energies(res), value=len(near_flat), location=lowest,
            flags=_flags(pts))
    rep.verdicts["no_singularity_near_flat_face"] = len(near_flat) == 0
    finite = True
    for r in config.radii:
        e = local_energy(res.field, (0.0, 0.0, 0.0), r) / r
        loc = localized_seminorm_p(trace, (0.0, 0.0, 0.0), max(2 * r, 2 * grid.surface.mean_spacing()), params)
        bound = max(1.0, r ** (params.sp - 2.0) * loc.value)
        ratio = e / bound
        finite &= bool(np.isfinite(ratio))
        rep.row(f"diag,r={r:.4f}", lam=r, s=params.s, p=params.p, seminorm_p=loc.value, energy=e, value=ratio)
    rep.verdicts["diagnostic_finite"] = finite
    return rep


def run_monotonicity_suite(config: ExperimentConfig, field=None) -> ExperimentReport:
    """Monotonicity profiles at detected singularities and at random regular points."""
    rep = ExperimentReport("monotonicity_suite", config)
    if field is None:
        grid = build_domain(config.domain, config.n)
        data = dict(config.trace or {"kind": "identity"})
        trace = make_trace(TraceFamily(**data), grid.surface)
        res = _solve(grid, trace, config)
        field = res.field
        rep.row("solve", energy=res.energy, run_energies=_energies(res))
    grid = field.grid
    h = grid.h
    tol = 0.02 * EIGHT_PI
    pts = detect_singularities(field, config.detector)
    base_radii = sorted({4 * h, 8 * h, 0.1, 0.2, 0.4})
    defect_ok = density_ok = share_ok = True
    for i, s in enumerate(pts):
        radii = [r for r in base_radii if 2 * h - 1e-12 <= r <= s.boundary_distance]
        if len(radii) >= 2:
            prof = monotonicity_profile(field, s.location, radii)
            worst = float(prof.defect.min())
            defect_ok &= worst >= -tol
        else:
            worst = math.nan
        density_ok &= 4 * math.pi <= s.density <= 12 * math.pi
        lam = max(0.1, 8 * h)
        share = math.nan
        if s.boundary_distance >= lam:
            share = radial_share(rescale_blowup(field, s.location, lam))
            share_ok &= share <= 0.1
        rep.row(f"singular_{i:02d}", n_singular=1, value=s.density, location=list(s.location),
                defect_min=worst, radial_share=share, flags=list(s.flags))
    rng = np.random.default_rng(config.seed)
    pos = grid.node_positions()[grid.interior_mask]
    dist = grid.boundary_distance(pos)
    far = np.ones(len(pos), dtype=bool)
    for s in pts:
        far &= np.linalg.norm(pos - s.location, axis=1) >= 0.25
    # deep enough that the profile spans at least 4h and 8h
    pool = pos[(dist >= max(0.2, 8 * h)) & far]
    regular_ok = True
    if len(pool):
        for j, y in enumerate(pool[rng.choice(len(pool), size=min(5, len(pool)), replace=False)]):
            d = float(grid.boundary_distance(y))
            radii = [r for r in base_radii if 2 * h - 1e-12 <= r <= d]
            prof = monotonicity_profile(field, y, radii)
            worst = float(prof.defect.min())
            defect_ok &= worst >= -tol
            small = normalized_local_energy(field, y, 4 * h)
            regular_ok &= small < 4 * math.pi
            rep.row(f"regular_{j:02d}", value=small, location=list(y), defect_min=worst)
    rep.verdicts["defect_bound"] = defect_ok
    rep.verdicts["singular_density_in_range"] = density_ok
    rep.verdicts["radial_share_le_0.1"] = share_ok
    rep.verdicts["regular_points_small_density"] = regular_ok
    return rep


RUNNERS = {
    "linear_law": run_linear_law,
    "sharpness": run_sharpness,
    "stability": run_stability,
    "boundary_regularity": run_boundary_regularity,
    "monotonicity_suite": run_monotonicity_suite,
}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    return RUNNERS[config.experiment](config)


def constant_trace_family() -> TraceFamily:
    return TraceFamily("constant", value=tuple(E3))
