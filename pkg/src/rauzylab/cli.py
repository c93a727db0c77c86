"""Command-line front end.

Three subcommands: ``run`` executes an experiment described by a JSON
config, ``compare`` diffs two finished runs, ``validate-map`` builds
the configured map and searches for boundary-orbit collisions without
running an experiment.

Exit codes: 0 success, 2 config error, 3 the induction stops (a
connection), 4 precision exhausted (tiling, quadrature, or grid
certification failed at the working precision), 5 a built-in check
failed and --assert was passed.
"""

import argparse
import json
import sys

from .errors import (ConfigError, GridInadequate, IncompatibleRuns,
                     NonConvergent, NotRenormalizable, OutOfDomain,
                     SignConventionViolation, TilingViolation)
from .experiments import (compare_runs, config_from_file, build_map,
                          make_context, run)
from .rauzy import check_no_connection

_PRECISION_ERRORS = (TilingViolation, GridInadequate, NonConvergent,
                     SignConventionViolation, OutOfDomain)


def _fail(code, kind, message, **extra):
    report = {"status": "error", "error": kind, "message": message}
    report.update(extra)
    print(json.dumps(report, sort_keys=True), file=sys.stderr)
    return code


def _load_config(args):
    config = config_from_file(args.config)
    if getattr(args, "out", None):
        config.out = args.out
    if getattr(args, "depth", None):
        config.depth = args.depth
    if getattr(args, "bits", None):
        config.float_bits = args.bits
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config


def _cmd_run(args):
    try:
        config = _load_config(args)
    except ConfigError as exc:
        return _fail(2, "config", str(exc))
    try:
        record = run(config)
    except ConfigError as exc:
        return _fail(2, "config", str(exc))
    except NotRenormalizable as exc:
        return _fail(3, "not_renormalizable", str(exc),
                     suggestion="the family has a connection at this "
                                "depth; lower --depth or change lengths")
    except _PRECISION_ERRORS as exc:
        return _fail(4, "precision", str(exc),
                     suggestion="raise --bits (or loosen quad_tol / "
                                "raise grid_points)")
    print(json.dumps({
        "status": "ok",
        "out_dir": record.out_dir,
        "outputs": record.outputs,
        "summary": record.summary,
        "checks": record.checks,
    }, sort_keys=True))
    if args.assert_checks and record.failed_checks:
        print(json.dumps({
            "status": "checks_failed",
            "failed": record.failed_checks,
        }, sort_keys=True), file=sys.stderr)
        return 5
    return 0


def _cmd_compare(args):
    try:
        diffs = compare_runs(args.runs[0], args.runs[1])
    except (IncompatibleRuns, OSError, ValueError) as exc:
        return _fail(2, "compare", str(exc))
    print(json.dumps({"status": "ok", "diffs": diffs}, sort_keys=True))
    if args.assert_checks and diffs:
        return 5
    return 0


def _cmd_validate(args):
    try:
        config = _load_config(args)
        ctx = make_context(config)
        f = build_map(config.family, ctx)
    except ConfigError as exc:
        return _fail(2, "config", str(exc))
    except _PRECISION_ERRORS as exc:
        return _fail(4, "precision", str(exc))
    steps = args.steps or config.connection_depth
    report = check_no_connection(f, steps)
    print(json.dumps({
        "status": "ok" if not report.found else "connection",
        "family": f.family,
        "letters": list(f.pair.top),
        "checked_steps": report.checked_depth,
        "connection": None if not report.found else {
            "hit_time": report.hit_time,
            "source": report.source,
            "target": report.target,
        },
        "min_distance": float(report.min_distance),
    }, sort_keys=True))
    return 3 if report.found else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="rauzylab",
        description="Renormalization experiments on generalized interval "
                    "exchange maps")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("--config", required=True, help="JSON config path")
    p_run.add_argument("--out", help="override the output directory")
    p_run.add_argument("--depth", type=int, help="override the sweep depth")
    p_run.add_argument("--bits", type=int, help="override float_bits")
    p_run.add_argument("--seed", type=int, help="override the seed")
    p_run.add_argument("--assert", dest="assert_checks", action="store_true",
                       help="exit 5 if any built-in check fails")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="diff two finished runs")
    p_cmp.add_argument("runs", nargs=2,
                       help="two run directories (or run.json paths)")
    p_cmp.add_argument("--assert", dest="assert_checks", action="store_true",
                       help="exit 5 if any column differs")
    p_cmp.set_defaults(func=_cmd_compare)

    p_val = sub.add_parser("validate-map",
                           help="build the configured map and search for "
                                "boundary-orbit collisions")
    p_val.add_argument("--config", required=True, help="JSON config path")
    p_val.add_argument("--bits", type=int, help="override float_bits")
    p_val.add_argument("--steps", type=int,
                       help="how many iterates to search (default: "
                            "connection_depth from the config)")
    p_val.set_defaults(func=_cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
