"""Command-line entry point: ``korteweg-lab <subcommand> CONFIG [key=value ...]``.

Exit codes:
  0  success, all checks of the experiment passed
  1  at least one check failed (outputs are still written)
  2  configuration or usage error (message on standard error)
  3  a solver run aborted (partial trajectory written when available)
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import lab
from .config import parse_config, resolved_dict, write_resolved
from .constitutive import DomainError
from .dynamics import SolverAbort
from .lab import ConfigError

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

RUNNERS = {
    "simulate": lab.run_simulation,
    "energy-balance": lab.run_energy_balance,
    "weak-strong": lab.run_weak_strong,
    "capillarity": lab.run_vanishing_capillarity,
    "friction": lab.run_large_friction,
    "mollify-check": lab.run_mollify_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="korteweg-lab",
                                     description="Periodic-domain experiments for Euler-Korteweg flows.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(RUNNERS) + ["validate-config"]:
        p = sub.add_parser(name)
        p.add_argument("config", help="TOML config file")
        p.add_argument("overrides", nargs="*", metavar="section.key=value",
                       help="overrides applied after the file is parsed")
        if name == "validate-config":
            continue
        p.add_argument("-o", "--output-dir", default=None,
                       help="output directory (default: out/<subcommand>)")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="parallel sweep members (KORTEWEG_LAB_THREADS overrides)")
        p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")
    return parser


def _gnuplot(outdir: Path, has_rates: bool) -> None:
    if has_rates:
        body = ("set datafile separator ','\nset logscale xy\nset xlabel 'eps'\nset ylabel 'sup error'\n"
                "plot 'rates.csv' skip 1 using 1:2 with linespoints title 'measured'\n")
    else:
        body = ("set datafile separator ','\nset key autotitle columnhead\n"
                "plot 'summary.csv' using 1:2 with lines\n")
    (outdir / "plot.gp").write_text(body, encoding="utf-8")


def _run(args) -> int:
    if args.command == "validate-config":
        cfg = parse_config(args.config, args.overrides)
        print(f"{args.config}: ok ({cfg.grid.dim}-D, N={cfg.grid.points_per_axis}, setting={cfg.setting})")
        return EXIT_OK
    outdir = Path(args.output_dir or Path("out") / args.command)
    if outdir.exists() and any(outdir.iterdir()) and not args.force:
        print(f"error: output directory {outdir} is not empty; pass --force to reuse it", file=sys.stderr)
        return EXIT_CONFIG
    cfg = parse_config(args.config, args.overrides, None, experiment=args.command)
    cfg.output_dir = str(outdir)
    write_resolved(resolved_dict(args.config, args.overrides), outdir, args.overrides)
    try:
        report = RUNNERS[args.command](cfg, jobs=args.jobs)
    except SolverAbort as exc:
        print(f"error: solver aborted: {exc}", file=sys.stderr)
        if exc.trajectory is not None and len(exc.trajectory):
            exc.trajectory.write(outdir / "partial")
        return EXIT_ABORT
    report.write(outdir)
    if args.gnuplot:
        _gnuplot(outdir, report.fit is not None)
    for name, ok in report.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if report.passed else EXIT_CHECKS


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
