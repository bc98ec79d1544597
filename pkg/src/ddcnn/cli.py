"""``ddcnn`` command line: run experiments, emit tables and timing, check gradients."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .data import dump_flat, synth2d, synth3d
from .decomposition import DomainShape, make_plan
from .engine.gradcheck import run_suite
from .exceptions import DDCNNError
from .experiment import ExperimentConfig, Report, emit_table, emit_timing, run_many, timing_report


def _load_configs(args):
    configs = []
    for path in args.configs:
        cfg = ExperimentConfig.from_file(path)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.workers is not None:
            cfg = replace(cfg, workers=args.workers)
        if args.out is not None:
            cfg = replace(cfg, output=str(Path(args.out) / Path(path).stem))
        configs.append(cfg)
    return configs


def cmd_run(args):
    reports = run_many(_load_configs(args), write=not args.dry_run)
    sys.stdout.write(emit_table(reports, args.format))
    for r in reports:
        print(f"{r.label}: speedup {r.metrics.speedup:.2f}")
    if args.out is not None and not args.dry_run:
        emit_table(reports, "aligned-text", Path(args.out) / "table.txt")
        emit_table(reports, "csv", Path(args.out) / "table.csv")
    return 0


def cmd_table(args):
    reports = [Report.from_file(p) for p in args.reports]
    text = emit_table(reports, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def cmd_timing(args):
    if args.report is not None:
        report = Report.from_file(args.report)
    elif None not in (args.global_seconds, args.max_local, args.coarse):
        report = timing_report(args.global_seconds, args.max_local, args.coarse)
    else:
        raise DDCNNError("give a report file or all of --global, --max-local and --coarse")
    text = emit_timing(report, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args):
    results = run_suite(points=args.points, seed=args.seed, tol=args.tol)
    ok = True
    for kind, worst, passed in results:
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {kind:<26} worst relative error {worst:.3e}")
    return 0 if ok else 1


def cmd_plan(args):
    domain = DomainShape(tuple(args.domain), args.channels)
    p = tuple(args.p) * domain.ndim if len(args.p) == 1 else tuple(args.p)
    text = make_plan(domain, args.variant, p, args.delta).to_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args):
    seed = 0 if args.seed is None else args.seed
    if args.kind == "2d":
        size = tuple(args.size or (32, 32))
        ds = synth2d(args.n, args.classes, size, args.placement, seed=seed, channels=args.channels)
    else:
        ds = synth3d(args.n, tuple(args.size or (64, 64, 32)), seed=seed)
    dump_flat(ds, args.out)
    print(f"wrote {len(ds)} samples of shape {ds.X.shape[1:]} to {args.out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="ddcnn", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one or more experiment configs")
    p.add_argument("configs", nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output root; each config writes to OUT/<config name>")
    p.add_argument("--workers", type=int, help="parallel local trainers")
    p.add_argument("--format", choices=("aligned-text", "csv"), default="aligned-text")
    p.add_argument("--dry-run", action="store_true", help="do not write artifacts")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("table", help="accuracy table from report files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--format", choices=("aligned-text", "csv"), default="aligned-text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("timing", help="timing data file from a report or from raw seconds")
    p.add_argument("report", nargs="?")
    p.add_argument("--global", dest="global_seconds", type=float)
    p.add_argument("--max-local", type=float)
    p.add_argument("--coarse", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer kind")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plan", help="print a decomposition plan")
    p.add_argument("--domain", type=int, nargs="+", required=True)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--variant", choices=("type-a", "type-b"), default="type-a")
    p.add_argument("--p", type=int, nargs="+", default=[2])
    p.add_argument("--delta", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("synth", help="dump a synthetic dataset to the flat binary format")
    p.add_argument("kind", choices=("2d", "3d"))
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--size", type=int, nargs="+")
    p.add_argument("--placement", choices=("per-quadrant", "global"), default="per-quadrant")
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DDCNNError, ValueError, OSError) as exc:
        print(f"ddcnn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
