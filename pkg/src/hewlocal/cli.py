"""Command-line entry point: ``hewlocal <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, NumericalError, ParseError

log = logging.getLogger("hewlocal")


def _cmd_run(args) -> int:
    from .experiment import ExperimentConfig, run_experiment
    from .plotting import emit_plots

    cfg = ExperimentConfig.load(args.config)
    res = run_experiment(cfg, out_dir=args.out)
    print(f"results in {res.out_dir}")
    if not args.no_plots:
        for p in emit_plots(res.out_dir):
            print(f"wrote {p}")
    if res.failed:
        for f in res.failed:
            print(f"FAILED {f['method']} seed {f['seed']}: {f['error']}", file=sys.stderr)
        return 1
    return 0


def _cmd_sweep(args) -> int:
    from .experiment import ExperimentConfig, SweepGrid, hyperparameter_sweep

    cfg = ExperimentConfig.load(args.config)
    grid = SweepGrid(rounds=args.rounds, n_seeds=args.n_seeds)
    res = hyperparameter_sweep(cfg, grid)
    text = json.dumps(res, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(json.dumps(res["selected"], indent=2, sort_keys=True))
    return 0


def _cmd_verify(args) -> int:
    from .verify import dumps, format_report, run_suites

    report = run_suites(args.suite, quick=args.quick)
    print(format_report(report))
    if args.report:
        Path(args.report).write_text(dumps(report) + "\n")
    return 0 if report["passed"] else 1


def _cmd_plot(args) -> int:
    from .plotting import emit_plots

    paths = emit_plots(args.input, args.out)
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_fetch(args) -> int:
    from .data import fetch_dataset

    local = dict(item.split("=", 1) for item in args.local) if args.local else None
    expected = dict(item.split("=", 1) for item in args.sha256) if args.sha256 else None
    sums = fetch_dataset(args.dataset, args.out, local=local, expected=expected)
    for name, digest in sorted(sums.items()):
        print(f"{digest}  {name}")
    return 0


def _cmd_protocol(args) -> int:
    from .experiment import ExperimentConfig, SweepGrid, run_protocol

    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.data_dir:
        base = base.replace(data_dir=args.data_dir)
    grid = SweepGrid(rounds=args.sweep_rounds)
    report = run_protocol(base, tuple(args.datasets), grid=grid, out_dir=args.out, plot=not args.no_plots)
    print(json.dumps(report["observation"], indent=2, sort_keys=True))
    return 1 if report["failed"] else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hewlocal", description="Horizon-aware exact-weight local SGD: experiments, verification and plots.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every (method, seed) pair of a config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (default: run-<hash>/<regime> under the output dir)")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(fn=_cmd_run)

    s = sub.add_parser("sweep", help="short hyperparameter sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--rounds", type=int, default=20)
    s.add_argument("--n-seeds", type=int, default=3)
    s.add_argument("--out", default=None, help="write the full sweep table as JSON")
    s.set_defaults(fn=_cmd_sweep)

    v = sub.add_parser("verify", help="run property suites")
    v.add_argument("--suite", nargs="+", default=["all"])
    v.add_argument("--quick", action="store_true", help="smaller instance counts")
    v.add_argument("--report", default=None, help="write the JSON report here")
    v.set_defaults(fn=_cmd_verify)

    pl = sub.add_parser("plot", help="render SVGs from a run directory")
    pl.add_argument("--input", required=True)
    pl.add_argument("--out", default=None)
    pl.set_defaults(fn=_cmd_plot)

    f = sub.add_parser("fetch-data", help="place raw dataset files and record checksums")
    f.add_argument("--dataset", required=True, choices=["covertype", "mnist"])
    f.add_argument("--out", required=True)
    f.add_argument("--local", nargs="*", metavar="FILENAME=PATH", help="copy these files instead of downloading")
    f.add_argument("--sha256", nargs="*", metavar="FILENAME=DIGEST", help="expected digests")
    f.set_defaults(fn=_cmd_fetch)

    pr = sub.add_parser("protocol", help="tune, run and plot the full benchmark protocol")
    pr.add_argument("--config", default=None, help="base config (rounds, seeds, batch, ...)")
    pr.add_argument("--data-dir", default=None)
    pr.add_argument("--datasets", nargs="+", default=["covertype", "mnist"])
    pr.add_argument("--sweep-rounds", type=int, default=20)
    pr.add_argument("--out", default=None)
    pr.add_argument("--no-plots", action="store_true")
    pr.set_defaults(fn=_cmd_protocol)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigurationError, ParseError, NumericalError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
