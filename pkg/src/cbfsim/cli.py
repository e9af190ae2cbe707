"""Command-line entry point: ``cbfsim {run,sweep,golden,validate-config}``."""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

from cbfsim import config as cfgmod
from cbfsim.core import Algorithm
from cbfsim.engine import plan_matrix, sweep
from cbfsim.events import InvariantViolation
from cbfsim.golden import CHECKS, run_golden
from cbfsim.metrics import ResultTable
from cbfsim.scenario import VALID_DENSITIES
from cbfsim.trace import trace_filename

EXIT_USAGE = 2
EXIT_FAILED = 1

DEFAULT_GOLDEN = ("duplicate-wave", "pair-abort", "border-storm")


def _add_common(p: argparse.ArgumentParser, matrix: bool) -> None:
    nargs = "+" if matrix else None
    p.add_argument("--config", type=Path, help="TOML configuration (default: built-in highway.toml)")
    p.add_argument("--algorithm", nargs=nargs, choices=[a.value for a in Algorithm],
                   type=str.lower, required=not matrix)
    p.add_argument("--density", nargs=nargs, type=int, choices=VALID_DENSITIES, required=not matrix,
                   help="vehicles per km per lane")
    p.add_argument("--seed", nargs=nargs, type=int)
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--trace", action="store_true", help="write line-delimited event traces")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbfsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one (algorithm, density, seed)")
    _add_common(p, matrix=False)

    p = sub.add_parser("sweep", help="simulate the algorithm x density x seed matrix")
    _add_common(p, matrix=True)
    p.add_argument("--workers", type=int, default=1, help="parallel processes")

    p = sub.add_parser("golden", help="run the scripted pathology topologies")
    p.add_argument("--check", nargs="+", choices=list(CHECKS), default=list(DEFAULT_GOLDEN))
    p.add_argument("--all", action="store_true", help="run every scripted check")

    p = sub.add_parser("validate-config", help="parse and validate a configuration file")
    p.add_argument("config", type=Path)
    return parser


def _load_config(path):
    return cfgmod.load(path if path is not None else cfgmod.default_config_path())


def _check_writable(out: Path) -> None:
    """Fail before simulating if results could not be written."""
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out, prefix=".probe"):
            pass
    except OSError as exc:
        raise SystemExit(f"cbfsim: error: output directory {out} is not writable: {exc.strerror}")


def _progress(r) -> None:
    status = "FAILED " + r.error if r.error else f"tx={r.transmissions} pdr={r.mean_pdr:.3f} ({r.wall_s:.0f}s)"
    print(f"  {r.algorithm:>4} density={r.density:<2} seed={r.seed}: {status}", file=sys.stderr, flush=True)


def _simulate(args, conf, algorithms, densities, seeds, workers: int) -> int:
    _check_writable(args.out)
    plans = plan_matrix(conf, algorithms, densities, seeds)
    trace_dir = args.out if args.trace else None
    results = sweep(plans, workers=workers, progress=_progress, trace_dir=trace_dir)
    table = ResultTable(results)
    files = table.write(args.out)
    print(table.format_text())
    for f in files:
        print(f"wrote {f}")
    if trace_dir is not None:
        for p in plans:
            print(f"wrote {trace_dir / trace_filename(p)}")
    failed = [r for r in results if r.error]
    for r in failed:
        print(f"run failed: {r.algorithm} density={r.density} seed={r.seed}: {r.error}", file=sys.stderr)
    return EXIT_FAILED if failed else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "golden":
            names = list(CHECKS) if args.all else args.check
            checks = run_golden(names)
            for c in checks:
                print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}")
                for line in c.lines:
                    print(f"       {line}")
            passed = sum(c.passed for c in checks)
            print(f"{passed}/{len(checks)} pathology checks passed")
            return 0 if passed == len(checks) else EXIT_FAILED

        conf = _load_config(args.config)
        if args.command == "validate-config":
            print(f"ok: algorithms={','.join(conf.algorithms)} densities={list(conf.densities)} "
                  f"seeds={list(conf.schedule.seeds)}")
            return 0
        if args.command == "run":
            seed = args.seed if args.seed is not None else conf.schedule.seeds[0]
            return _simulate(args, conf, [args.algorithm], [args.density], [seed], 1)
        return _simulate(args, conf, args.algorithm, args.density, args.seed, args.workers)
    except cfgmod.ConfigError as exc:
        print(f"cbfsim: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"cbfsim: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
