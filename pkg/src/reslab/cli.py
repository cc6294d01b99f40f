"""Command-line entry point ``lab``.

Exit codes: 0 on success, 1 when an invariant check fails, 2 on a
configuration or input error.
"""

import argparse
import sys

from . import __version__
from .errors import ConfigError, LabError, ParseError
from .runner import ExperimentConfig, parse_seeds, run

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _emit(report, output):
    if output is None:
        print(report.to_json())
    else:
        print(f"wrote {output}.json and {output}.csv; "
              f"{report.summary['failed']} of {report.summary['entries']} entries failed")
    return EXIT_FAILED if report.failed else EXIT_OK


def _cmd_run(args):
    cfg = ExperimentConfig.from_file(args.config)
    if args.output:
        cfg.output, cfg.base_dir = args.output, "."
    report = run(cfg)
    return _emit(report, cfg.output)


def _cmd_prop1(args):
    cfg = ExperimentConfig(kind="prop1", rho=args.rho, output=args.output)
    cfg.validate()
    return _emit(run(cfg), args.output)


def _cmd_nonmonotone(args):
    cfg = ExperimentConfig(kind="nonmonotone", output=args.output)
    return _emit(run(cfg), args.output)


def _cmd_rademacher(args):
    M = args.M if len(args.M) == args.L else args.M * args.L if len(args.M) == 1 else None
    if M is None:
        raise ConfigError(f"--M needs 1 or {args.L} values, got {len(args.M)}")
    cfg = ExperimentConfig(kind="rademacher_sweep", L=args.L, M=M, n=args.n, d_x=args.d_x,
                           trials=args.trials, restarts=args.restarts,
                           seeds=parse_seeds(args.seeds), master_seed=args.master_seed,
                           output=args.output)
    cfg.validate()
    return _emit(run(cfg), args.output)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lab", description="Residual network landscape lab.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config file")
    r.add_argument("config")
    r.add_argument("--output", help="override the output path prefix")
    r.set_defaults(fn=_cmd_run)

    q = sub.add_parser("prop1", help="six-point example at a given rho")
    q.add_argument("--rho", type=float, default=1.0)
    q.add_argument("--output")
    q.set_defaults(fn=_cmd_prop1)

    m = sub.add_parser("nonmonotone", help="two-block example with a worse intermediate fit")
    m.add_argument("--output")
    m.set_defaults(fn=_cmd_nonmonotone)

    c = sub.add_parser("rademacher", help="estimate Rademacher complexity against the bound")
    c.add_argument("--L", type=int, required=True)
    c.add_argument("--M", type=float, nargs="+", required=True)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--d-x", dest="d_x", type=int, default=3)
    c.add_argument("--trials", type=int, default=30)
    c.add_argument("--restarts", type=int, default=8)
    c.add_argument("--seeds", default="0")
    c.add_argument("--master-seed", dest="master_seed", type=int, default=0)
    c.add_argument("--output")
    c.set_defaults(fn=_cmd_rademacher)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
