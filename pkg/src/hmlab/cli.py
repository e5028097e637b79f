"""Command-line entry point ``hmlab``."""

from __future__ import annotations

import argparse
import logging
import sys

from .domain import KINDS, build_domain
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .fields import constant_field
from .minimizer import SolverError, minimize
from .sfld import FormatError, load_field, save_field
from .singularity import DetectorParams, detect_singularities, write_singularities_csv
from .trace_norms import SeminormParams, TraceFamily, gagliardo_seminorm_p, make_trace

log = logging.getLogger("hmlab")


def _cmd_build_domain(args) -> int:
    grid = build_domain(args.kind, args.n)
    save_field(constant_field(grid), args.out)
    print(f"{args.kind} n={grid.n} h={grid.h!r} nodes={int(grid.node_mask.sum())} "
          f"free={int(grid.interior_mask.sum())} vertices={grid.surface.n_vertices}")
    return 0


def _cmd_minimize(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    grid = build_domain(cfg.domain, cfg.n)
    trace = make_trace(TraceFamily(**(cfg.trace or {"kind": "identity"})), grid.surface)
    res = minimize(grid, trace, cfg.solver)
    save_field(res.field, args.out)
    if args.history:
        res.history_csv(args.history)
    for i, r in enumerate(res.runs):
        print(f"run {i} ({r.start}): energy={r.energy!r} iterations={r.iterations} converged={r.converged}")
    return 0


def _cmd_singular(args) -> int:
    field = load_field(args.field)
    params = DetectorParams(r_detect=args.r_detect, density_threshold=args.threshold)
    pts = detect_singularities(field, params)
    write_singularities_csv(args.out, pts)
    print(f"{len(pts)} singular point(s)")
    return 0


def _cmd_seminorm(args) -> int:
    field = load_field(args.trace_from)
    value = gagliardo_seminorm_p(field.trace, SeminormParams(args.s, args.p))
    print(repr(value))
    return 0


def _cmd_exp(args) -> int:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig(args.name.replace("-", "_"))
    name = args.name.replace("-", "_")
    if name == "monotonicity":
        name = "monotonicity_suite"
    if cfg.experiment != name:
        raise SystemExit(f"config is for {cfg.experiment!r}, not {name!r}")
    rep = run_experiment(cfg)
    out = args.out_dir or cfg.output_dir
    for path in rep.write(out):
        print(path)
    for k in sorted(rep.verdicts):
        print(f"{'PASS' if rep.verdicts[k] else 'FAIL'} {k}")
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hmlab", description="Minimizing harmonic maps into the sphere: numerical lab")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-domain", help="build a domain and write a constant field on it")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_domain)

    p = sub.add_parser("minimize", help="minimize the energy for the trace named in a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=_cmd_minimize)

    p = sub.add_parser("singular", help="detect singular points of a stored field")
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--r-detect", type=float, default=None)
    p.add_argument("--threshold", type=float, default=DetectorParams().density_threshold)
    p.set_defaults(func=_cmd_singular)

    p = sub.add_parser("seminorm", help="trace seminorm of a stored field's boundary values")
    p.add_argument("--trace-from", required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.set_defaults(func=_cmd_seminorm)

    names = sorted({e.replace("_", "-") for e in EXPERIMENTS} | {"monotonicity"})
    p = sub.add_parser("exp", help="run one of the studies")
    p.add_argument("name", choices=names)
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_exp)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FormatError, SolverError, ValueError, OSError) as exc:
        print(f"hmlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
