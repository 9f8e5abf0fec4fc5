import argparse
import csv
import io
import logging
import os
import sys
import time
from dataclasses import asdict
from datetime import datetime
from itertools import product

import numpy as np

from . import __version__, database, selfcheck
from .exceptions import InvalidInputError, SpecFileError, WhitneyBundlesError
from .finiteness import finiteness_scan
from .glaeser import Status, decide, refine_bundle, select_section
from .problem import Report, digest, load_problem, write_atomic
from .whitney import extend

logger = logging.getLogger(__name__)

EXIT_CODES = {Status.SOLVABLE: 0, Status.UNSOLVABLE: 1, Status.INCONCLUSIVE: 2}
EXIT_USAGE = 3
EXIT_REFUSED = 4
EXIT_INTERNAL = 5

THREADS_ENV = "WHITNEY_BUNDLES_THREADS"
DEFAULT_GRID = 21
DEFAULT_SUBSET_BUDGET = 10000


# --- Logging Setup ---

def setup_logging(log_dir=None, verbose=False):
    """Stream logs to stderr and, with a log directory, to a dated file."""
    handlers = [logging.StreamHandler(sys.stderr)]
    log_file = None
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, f'whitney-bundles-{datetime.now().strftime("%Y%m%d")}.log')
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="[%(asctime)s] %(levelname)s: %(message)s",
        handlers=handlers,
        force=True,
    )
    return log_file


def _threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError:
        raise InvalidInputError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if threads < 1:
        raise InvalidInputError(f"{THREADS_ENV} must be >= 1, got {threads}")
    return threads


def _scales_arg(text):
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated radii, got {text!r}")


def _config_summary(cfg, scales):
    summary = asdict(cfg)
    summary.pop("threads")
    summary["scales"] = list(scales)
    return summary


# --- Commands ---

def _load(args):
    spec, text = load_problem(args.spec)
    cfg = spec.refinement_config(
        threads=_threads(), k_sharp=args.k_sharp, scales=args.scales, tol_min=args.tol, seed=args.seed
    )
    return spec, text, cfg


def _verdict_report(command, verdict, cfg, bundle):
    scales = cfg.resolve_scales(bundle)
    return Report(
        command,
        exit_code=EXIT_CODES[verdict.status],
        verdict=verdict.status.value,
        iterations=verdict.iterations,
        converged=verdict.converged,
        rounds=[list(record.dimensions) for record in verdict.rounds],
        scale_residuals=[asdict(entry) for entry in verdict.scale_report],
        finest_scale=scales[-1] if scales else None,
        first_empty_point=None if verdict.first_empty_point is None else verdict.first_empty_point.tolist(),
        unresolved_points=[point.tolist() for point in verdict.unresolved_points],
        config=_config_summary(cfg, scales),
    )


def run_decide(args):
    spec, text, cfg = _load(args)
    bundle = spec.build_bundle()
    logger.info(f"deciding a {spec.mode} instance: |E| = {bundle.size}, m = {spec.m}, n = {spec.n}, d = {spec.d}")
    verdict = decide(bundle, cfg)
    report = _verdict_report("decide", verdict, cfg, bundle)
    return report.exit_code, report, text


def run_refine(args):
    spec, text, cfg = _load(args)
    bundle = spec.build_bundle()
    refined = refine_bundle(bundle, cfg)
    scales = cfg.resolve_scales(bundle)
    report = Report(
        "refine",
        iterations=1,
        rounds=[bundle.dimensions(), refined.dimensions()],
        first_empty_point=None if not refined.has_empty else refined.points[refined.first_empty_index()].tolist(),
        finest_scale=scales[-1] if scales else None,
        config=_config_summary(cfg, scales),
    )
    return 0, report, text


def grid_points(lower, upper, count):
    if count <= 0:
        return np.zeros((0, len(lower)))
    axes = [np.linspace(lo, hi, count) for lo, hi in zip(lower, upper)]
    return np.array(list(product(*axes)))


def extension_rows(function, points):
    """CSV rows (x1..xn, component, alpha, value) of every derivative."""
    for y in points:
        derivatives = function.jet_at(y).derivatives()
        for j, row in enumerate(derivatives):
            for alpha, value in enumerate(row):
                yield [*(repr(float(c)) for c in y), j, alpha, repr(float(value))]


def run_extend(args):
    spec, text, cfg = _load(args)
    bundle = spec.build_bundle()
    verdict = decide(bundle, cfg)
    report = _verdict_report("extend", verdict, cfg, bundle)
    if verdict.status is Status.UNSOLVABLE and not args.force:
        logger.error("instance is UNSOLVABLE; refusing to extend (use --force to override)")
        report.exit_code = EXIT_REFUSED
        return EXIT_REFUSED, report, text
    source = verdict.stabilized_bundle if not verdict.stabilized_bundle.has_empty else bundle
    if source.has_empty:
        logger.error("the data bundle has an EMPTY fiber; no section to extend")
        report.exit_code = EXIT_REFUSED
        return EXIT_REFUSED, report, text

    field = select_section(source)
    lower, upper = spec.extension_box()
    function = extend(field, (lower, upper))
    points = grid_points(lower, upper, args.grid)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([f"x{i + 1}" for i in range(spec.n)] + ["component", "alpha", "value"])
    rows = 0
    for row in extension_rows(function, points):
        writer.writerow(row)
        rows += 1
    if args.out:
        write_atomic(args.out, buffer.getvalue())
    else:
        sys.stdout.write(buffer.getvalue())
    logger.info(f"wrote {rows} grid rows for {len(points)} points")
    report.grid_rows = rows
    report.exit_code = 0
    return 0, report, text


def run_finiteness(args):
    spec, text = load_problem(args.spec)
    omega = spec.omega()
    if omega is None:
        raise SpecFileError("finiteness needs a config.omega block", 1, "$.config.omega")
    k_sharp = args.k_sharp or spec.config.get("k_sharp", 2)
    budget = args.budget or spec.config.get("subset_budget", DEFAULT_SUBSET_BUDGET)
    seed = spec.config.get("seed", 0) if args.seed is None else args.seed
    result = finiteness_scan(spec.problem(), omega, k_sharp, budget, m=spec.m, seed=seed, threads=_threads())
    certificate = result.certificate
    finite = bool(np.isfinite(result.sup))
    report = Report(
        "finiteness",
        exit_code=0 if finite else 1,
        sup_m_s=float(result.sup),
        argmax_subset=list(certificate.subset),
        argmax_points=[spec.points[k].tolist() for k in certificate.subset],
        witness=[jet.coeffs.tolist() for jet in certificate.witness],
        subsets_examined=result.examined,
        exhaustive=result.exhaustive,
        config={"k_sharp": k_sharp, "subset_budget": budget, "seed": seed, "omega": omega.to_dict()},
    )
    return report.exit_code, report, text


def run_selfcheck(args):
    results = selfcheck.run_all(seed=args.seed or 0, trials=args.trials)
    passed = all(result.passed for result in results)
    report = Report(
        "selfcheck",
        exit_code=0 if passed else 1,
        checks={result.name: result.to_dict() for result in results},
    )
    return report.exit_code, report, None


def run_history(args):
    db_path = args.db or database.default_db_path()
    if not db_path:
        raise InvalidInputError("history needs --db or WHITNEY_BUNDLES_DB")
    if args.show is not None:
        run = database.get_run(db_path, args.show)
        if run is None:
            raise InvalidInputError(f"no run with id {args.show}")
        sys.stdout.write(run["report"])
        return 0
    if args.delete is not None:
        if not database.delete_run(db_path, args.delete):
            raise InvalidInputError(f"no run with id {args.delete}")
        print(f"deleted run {args.delete}")
        return 0
    runs = database.get_runs(db_path, args.limit)
    print(f"{'id':>5}  {'command':<11} {'exit':>4}  {'verdict':<13} {'created':<32} spec")
    for run in runs:
        print(
            f"{run['id']:>5}  {run['command']:<11} {run['exit_code']:>4}  "
            f"{run['verdict'] or '-':<13} {run['created_at']:<32} {run['spec_path'] or '-'}"
        )
    return 0


COMMANDS = {
    "decide": run_decide,
    "refine": run_refine,
    "extend": run_extend,
    "finiteness": run_finiteness,
    "selfcheck": run_selfcheck,
}


# --- Argument parsing ---

class _Parser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_USAGE instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--db", default=None,
                        help="sqlite run history (default: $WHITNEY_BUNDLES_DB, none when unset)")
    common.add_argument("--log-dir", default=None, help="also write logs to a dated file in this directory")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--timing", action="store_true", help="include wall-clock seconds in the report")

    instance = _Parser(add_help=False)
    instance.add_argument("--spec", required=True, help="problem instance (JSON)")
    instance.add_argument("--out", default=None, help="output path (default: stdout)")

    refinement = _Parser(add_help=False)
    refinement.add_argument("--k-sharp", type=int, default=None, help="max tuple size (default: config or 2)")
    refinement.add_argument("--scales", type=_scales_arg, default=None,
                            help="comma separated decreasing radii (default: config or 4r,2r,r)")
    refinement.add_argument("--tol", type=float, default=None, help="MIN zero tolerance (default: config or 1e-6)")
    refinement.add_argument("--seed", type=int, default=None, help="tuple sampling seed (default: config or 0)")

    parser = _Parser(
        prog="whitney-bundles",
        description="Decide C^m solvability of Whitney and BHK problems on finite sets",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", "-v", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("decide", parents=[common, instance, refinement],
                   formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                   help="refine to a fixpoint and print the verdict (exit 0/1/2)")
    sub.add_parser("refine", parents=[common, instance, refinement],
                   formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                   help="run a single refinement pass")

    extend_parser = sub.add_parser("extend", parents=[common, instance, refinement],
                                   formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                                   help="write a CSV grid of a Whitney extension")
    extend_parser.add_argument("--grid", type=int, default=DEFAULT_GRID, help="grid points per axis (0: header only)")
    extend_parser.add_argument("--force", action="store_true", help="extend even when the verdict is UNSOLVABLE")
    extend_parser.add_argument("--report", default=None, help="where to write the JSON report (default: none)")

    finite_parser = sub.add_parser("finiteness", parents=[common, instance],
                                   formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                                   help="sup of M_S over small subsets (exit 0 finite, 1 infinite)")
    finite_parser.add_argument("--k-sharp", type=int, default=None, help="max subset size (default: config or 2)")
    finite_parser.add_argument("--budget", type=int, default=None,
                               help=f"exhaustive subset budget (default: config or {DEFAULT_SUBSET_BUDGET})")
    finite_parser.add_argument("--seed", type=int, default=None, help="subset sampling seed (default: config or 0)")

    check_parser = sub.add_parser("selfcheck", parents=[common],
                                  formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                                  help="randomized checks of the jet and lift algebra")
    check_parser.add_argument("--out", default=None, help="output path (default: stdout)")
    check_parser.add_argument("--trials", type=int, default=None, help="case count scale (default: full size)")
    check_parser.add_argument("--seed", type=int, default=0, help="random seed")

    history_parser = sub.add_parser("history", parents=[common],
                                    formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                                    help="list recorded runs")
    history_parser.add_argument("--limit", type=int, default=20, help="number of runs to list")
    history_parser.add_argument("--show", type=int, default=None, help="print the report of one run")
    history_parser.add_argument("--delete", type=int, default=None, help="delete one run")
    return parser


def _record(args, code, report, text):
    db_path = args.db or database.default_db_path()
    if not db_path:
        return
    flags = {k: v for k, v in vars(args).items() if k not in ("db", "log_dir", "verbose", "command")}
    run_id = database.record_run(
        db_path,
        args.command,
        code,
        report.dumps(),
        spec_path=getattr(args, "spec", None),
        spec_digest=digest(text) if text is not None else None,
        verdict=report.verdict,
        flags={k: list(v) if isinstance(v, tuple) else v for k, v in flags.items()},
    )
    logger.debug(f"recorded run {run_id} in {db_path}")


def main(argv=None):
    """Main entry point for the whitney-bundles command."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_dir, args.verbose)

    started = time.perf_counter()
    try:
        if args.command == "history":
            return run_history(args)
        code, report, text = COMMANDS[args.command](args)
    except (SpecFileError, InvalidInputError) as exc:
        logger.error(f"{exc}")
        return EXIT_USAGE
    except WhitneyBundlesError as exc:
        logger.error(f"{exc}")
        return EXIT_INTERNAL
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_INTERNAL

    if args.timing:
        report.timing_seconds = time.perf_counter() - started
    target = args.report if args.command == "extend" else args.out
    if target:
        write_atomic(target, report.dumps())
    elif args.command != "extend":
        sys.stdout.write(report.dumps())
    _record(args, code, report, text)
    return code


if __name__ == "__main__":
    sys.exit(main())
