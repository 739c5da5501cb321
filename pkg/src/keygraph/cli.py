"""Command-line interface entry point."""

from __future__ import annotations

import argparse
import configparser
import logging
import os
from pathlib import Path
import sys
from typing import Callable

from . import combinatorics as comb
from .audit import AuditGrid, run_audit
from .model import Seed, Theta
from .montecarlo import (
    SWEEP_COLUMNS,
    BudgetExceededError,
    ER_KINDS,
    ER_STREAM,
    EventSelector,
    ExperimentSpec,
    brute_force,
    er_simulate,
    run_trials,
    sweep,
    union_bound_check,
)
from .output import OutputRecord, render, write_output
from .scaling import (
    AlphaRing,
    LinearPool,
    PowerAlphaRing,
    Scaling,
    classify,
    equivalence_ratio,
    er_deviation,
    deviation,
    reduce_scaling,
)

logger = logging.getLogger(__name__)

CONFIG_SECTION = "keygraph"
WORKERS_ENV = "KEYGRAPH_WORKERS"
DEFAULT_SEED = 0
DEFAULT_TRIALS = 10_000
DEFAULT_EVENTS = ("connected", "no-isolated")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3

# Flags that never change results and stay out of the parameter echo.
_NOT_ECHOED = {"config", "format", "out", "verbose", "workers", "command", "exact_command"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="keygraph",
        description="Exact probabilities, bounds and simulations for random key graphs.",
    )
    parser.add_argument(
        "--config",
        type=Path,
        metavar="PATH",
        help="INI config file (section: [keygraph]).",
    )
    parser.add_argument(
        "--format",
        choices=("json", "csv"),
        help="Output format (default: csv for sweep, json otherwise).",
    )
    parser.add_argument("--out", type=Path, metavar="PATH", help="Write output to PATH.")
    parser.add_argument(
        "--exact-threshold",
        type=int,
        help=f"Largest pool size computed with rationals (default: {comb.EXACT_THRESHOLD}).",
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Log progress to stderr.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    _add_exact_parser(subparsers)

    simulate_parser = subparsers.add_parser(
        "simulate",
        help="Estimate event probabilities over sampled key graphs.",
    )
    _add_theta_args(simulate_parser, n=True)
    _add_run_args(simulate_parser)
    simulate_parser.add_argument(
        "--event",
        dest="events",
        action="append",
        metavar="SELECTOR",
        help=(
            "Event to estimate; repeatable (connected, no-isolated, disconnected-no-isolated, "
            "subset-connected:0,1, subset-isolated:0,1, tree:0,1,2:path, a-event:R, degree)."
        ),
    )
    simulate_parser.add_argument(
        "--er-matched",
        action="store_true",
        help="Also simulate the Erdos-Renyi graph with p = 1 - q(theta).",
    )

    sweep_parser = subparsers.add_parser(
        "sweep",
        help="Estimate connectivity over an (n, alpha) grid.",
    )
    _add_scaling_args(sweep_parser)
    sweep_parser.add_argument("--n-values", required=True, help="Comma-separated node counts.")
    sweep_parser.add_argument(
        "--alpha-values", required=True, help="Comma-separated target deviations."
    )
    sweep_parser.add_argument(
        "--no-er",
        action="store_true",
        help="Skip the matched Erdos-Renyi column.",
    )
    _add_run_args(sweep_parser)

    oracle_parser = subparsers.add_parser(
        "oracle",
        help="Exact probabilities by enumerating every ring assignment.",
    )
    _add_theta_args(oracle_parser, n=True)
    oracle_parser.add_argument(
        "--no-events",
        action="store_true",
        help="Skip the per-prefix C_r, B_{n,r} and A_{n,r} probabilities.",
    )

    audit_parser = subparsers.add_parser(
        "audit",
        help="Check every bound over a parameter grid.",
    )
    audit_parser.add_argument("--k-max", type=int, default=6)
    audit_parser.add_argument("--l-min", type=int, default=0)
    audit_parser.add_argument("--l-max", type=int, default=6)
    audit_parser.add_argument("--p-min", type=int, default=2)
    audit_parser.add_argument("--p-max", type=int, default=40)
    audit_parser.add_argument("--r-max", type=int, default=6)
    audit_parser.add_argument(
        "--mc-theta",
        action="append",
        metavar="K,P",
        help="Theta for the Monte Carlo checks; repeatable (default: 2,10).",
    )
    audit_parser.add_argument(
        "--all-rows",
        action="store_true",
        help="Emit every audit row, not only violations.",
    )
    _add_run_args(audit_parser, trials_help="Monte Carlo trials per theta (0 disables).")

    union_parser = subparsers.add_parser(
        "union-check",
        help="Compare P(disconnected, no isolated node) with its union bound.",
    )
    _add_theta_args(union_parser, n=True)
    union_parser.add_argument("--max-nodes", type=int, default=20)
    _add_run_args(union_parser)

    classify_parser = subparsers.add_parser(
        "classify",
        help="Admissibility flags and window trends of a scaling.",
    )
    _add_scaling_args(classify_parser, ring=True)
    classify_parser.add_argument("--n-values", help="Comma-separated node counts.")
    classify_parser.add_argument("--sigma", type=float, help="Check P_n >= sigma * n.")

    reduce_parser = subparsers.add_parser(
        "reduce",
        help="Cap a scaling's deviation at log n and compare ring sizes.",
    )
    _add_scaling_args(reduce_parser, ring=True)
    reduce_parser.add_argument("--n-values", help="Comma-separated node counts.")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        _configure_logging(args.verbose)
        handler = _HANDLERS[args.command]
        record = handler(args)
        fmt = args.format or ("csv" if args.command == "sweep" else "json")
        columns = SWEEP_COLUMNS if args.command == "sweep" else None
        write_output(render(record, fmt, columns), args.out)
    except BudgetExceededError as exc:
        print(f"keygraph: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"keygraph: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "audit" and record.results["summary"]["violations"]:
        return EXIT_VIOLATION
    return EXIT_OK


def _add_exact_parser(subparsers: argparse._SubParsersAction) -> None:
    exact_parser = subparsers.add_parser(
        "exact",
        help="Closed-form probabilities and bounds.",
    )
    exact = exact_parser.add_subparsers(dest="exact_command", required=True)

    _add_theta_args(exact.add_parser("q", help="q(theta), the ring disjointness probability."))

    avoid = exact.add_parser("avoid", help="C(p-l, k) / C(p, k).")
    avoid.add_argument("--p", type=int, required=True)
    avoid.add_argument("--l", type=int, required=True)
    avoid.add_argument("--k", type=int, required=True)

    bounds = exact.add_parser(
        "bounds",
        help="Bounds on the avoidance ratio (with --l) or on 1 - q(theta).",
    )
    _add_theta_args(bounds)
    bounds.add_argument("--l", type=int)

    ur = exact.add_parser("ur", help="Exact distribution of U_r.")
    _add_theta_args(ur, r=True)

    isolation = exact.add_parser("isolation", help="P(B_{n,r}), isolation of r fixed nodes.")
    _add_theta_args(isolation, n=True, r=True)

    tree = exact.add_parser("tree", help="(1 - q)^(r-1).")
    _add_theta_args(tree, r=True)

    cayley = exact.add_parser("cayley", help="Cayley bound on P(C_r).")
    _add_theta_args(cayley, r=True)

    tail = exact.add_parser("tail", help="Upper bounds on P(U_r <= x).")
    _add_theta_args(tail, r=True)
    tail.add_argument("--x", type=int, required=True)
    tail.add_argument("--n", type=int, help="With --sigma, also report the scaled bound.")
    tail.add_argument("--sigma", type=float)

    threshold = exact.add_parser("threshold", help="r(theta) and r_n(theta).")
    _add_theta_args(threshold, n=True)

    decomposition = exact.add_parser("decomposition", help="Bound on P(A_{n,r}).")
    _add_theta_args(decomposition, n=True, r=True)
    decomposition.add_argument("--x", type=int, required=True)
    decomposition.add_argument(
        "--prob-cr",
        type=float,
        help="Upper bound on P(C_r) (default: the Cayley bound).",
    )

    crude = exact.add_parser("crude", help="Cayley-based bound on P(A_{n,r}).")
    _add_theta_args(crude, n=True, r=True)

    one_key = exact.add_parser("one-key", help="P(connected) when every ring holds one key.")
    one_key.add_argument("--n", type=int, required=True)
    one_key.add_argument("--p", type=int, required=True)

    dev = exact.add_parser("deviation", help="Deviation, ER deviation and equivalence ratio.")
    _add_theta_args(dev, n=True)


def _add_theta_args(parser: argparse.ArgumentParser, n: bool = False, r: bool = False) -> None:
    if n:
        parser.add_argument("--n", type=int, required=True, help="Number of nodes.")
    parser.add_argument("--k", type=int, required=True, help="Key ring size.")
    parser.add_argument("--p", type=int, required=True, help="Key pool size.")
    if r:
        parser.add_argument("--r", type=int, required=True, help="Subset size.")


def _add_run_args(parser: argparse.ArgumentParser, trials_help: str = "Number of trials.") -> None:
    parser.add_argument("--trials", type=int, help=trials_help)
    parser.add_argument("--seed", type=int, help=f"Master seed (default: {DEFAULT_SEED}).")
    parser.add_argument(
        "--workers",
        type=int,
        help=f"Worker processes (default: ${WORKERS_ENV} or the CPU count).",
    )


def _add_scaling_args(parser: argparse.ArgumentParser, ring: bool = False) -> None:
    parser.add_argument(
        "--scaling",
        type=Path,
        metavar="PATH",
        help="JSON scaling file with 'pool' and 'ring' rules.",
    )
    parser.add_argument(
        "--pool-c",
        type=float,
        default=2.0,
        help="Linear pool rule P_n = ceil(c * n) when no scaling file is given.",
    )
    if ring:
        parser.add_argument("--alpha", type=float, default=0.0, help="Constant deviation.")
        parser.add_argument(
            "--alpha-exponent",
            type=float,
            help="Use alpha_n = alpha * n**exponent instead of a constant.",
        )


def _apply_config(args: argparse.Namespace) -> None:
    if not args.config:
        return
    if not args.config.is_file():
        raise ValueError(f"config file {args.config} does not exist")
    config = configparser.ConfigParser()
    try:
        config.read(args.config)
    except configparser.Error as exc:
        raise ValueError(f"config file {args.config} is malformed: {exc}") from exc
    section = config[CONFIG_SECTION] if CONFIG_SECTION in config else None
    if section is None:
        return
    if hasattr(args, "seed") and args.seed is None and "seed" in section:
        args.seed = section.getint("seed")
    if hasattr(args, "trials") and args.trials is None and "trials" in section:
        args.trials = section.getint("trials")
    if hasattr(args, "workers") and args.workers is None and "workers" in section:
        args.workers = section.getint("workers")
    if args.format is None and "format" in section:
        args.format = section.get("format")
    if args.exact_threshold is None and "exact_threshold" in section:
        args.exact_threshold = section.getint("exact_threshold")
    if args.verbose is False and "verbose" in section:
        args.verbose = section.getboolean("verbose")
    if args.out is None and "out" in section:
        args.out = Path(section.get("out"))


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _record(args: argparse.Namespace, command: str, results: dict) -> OutputRecord:
    parameters = {
        key: value for key, value in vars(args).items() if key not in _NOT_ECHOED
    }
    parameters["exact_threshold"] = _threshold(args)
    return OutputRecord(command=command, parameters=parameters, results=results)


def _threshold(args: argparse.Namespace) -> int:
    return comb.EXACT_THRESHOLD if args.exact_threshold is None else args.exact_threshold


def _seed(args: argparse.Namespace) -> Seed:
    return Seed(DEFAULT_SEED if args.seed is None else args.seed)


def _trials(args: argparse.Namespace, default: int = DEFAULT_TRIALS) -> int:
    trials = default if args.trials is None else args.trials
    if trials < 0:
        raise ValueError(f"trials={trials} must be non-negative")
    return trials


def _workers(args: argparse.Namespace) -> int:
    workers = args.workers
    if workers is None and os.environ.get(WORKERS_ENV):
        raw = os.environ[WORKERS_ENV]
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ValueError(f"{WORKERS_ENV}={raw!r} is not an integer") from exc
    if workers is None:
        workers = os.cpu_count() or 1
    if workers < 1:
        raise ValueError(f"workers={workers} must be at least 1")
    return workers


def _theta(args: argparse.Namespace) -> Theta:
    return Theta(args.k, args.p)


def _int_list(text: str | None, flag: str) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(token) for token in text.split(",") if token.strip()]
    except ValueError as exc:
        raise ValueError(f"{flag} must be a comma-separated list of integers") from exc


def _float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(token) for token in text.split(",") if token.strip()]
    except ValueError as exc:
        raise ValueError(f"{flag} must be a comma-separated list of numbers") from exc


def _scaling(args: argparse.Namespace) -> Scaling:
    if args.scaling is not None:
        return Scaling.load(args.scaling)
    if args.pool_c <= 0:
        raise ValueError(f"pool coefficient c={args.pool_c} must be positive")
    alpha = getattr(args, "alpha", 0.0)
    exponent = getattr(args, "alpha_exponent", None)
    ring = AlphaRing(alpha) if exponent is None else PowerAlphaRing(alpha, exponent)
    return Scaling(pool_rule=LinearPool(args.pool_c), ring_rule=ring)


def _cmd_exact(args: argparse.Namespace) -> OutputRecord:
    threshold = _threshold(args)
    sub = args.exact_command
    if sub == "q":
        results = _prob(comb.q_theta(_theta(args), threshold))
    elif sub == "avoid":
        results = _prob(comb.ring_avoid_prob(args.p, args.l, args.k, threshold))
    elif sub == "bounds":
        results = _exact_bounds(args, threshold)
    elif sub == "ur":
        dist = comb.ur_distribution(_theta(args), args.r, threshold)
        results = {"support": dist.support, "pmf": dist.pmf, "total": dist.total()}
    elif sub == "isolation":
        results = _prob(comb.isolation_prob(args.n, args.r, _theta(args), threshold))
    elif sub == "tree":
        results = _prob(comb.tree_prob(_theta(args), args.r, threshold))
    elif sub == "cayley":
        results = _log_bound(comb.cayley_bound(_theta(args), args.r, threshold))
    elif sub == "tail":
        results = _exact_tail(args, threshold)
    elif sub == "threshold":
        results = comb.r_threshold(_theta(args), args.n)._asdict()
    elif sub == "decomposition":
        results = _exact_decomposition(args, threshold)
    elif sub == "crude":
        results = _log_bound(comb.crude_a_bound(args.n, args.r, _theta(args), threshold))
    elif sub == "one-key":
        results = _prob(comb.one_key_connect_prob(args.n, args.p))
    else:
        theta = _theta(args)
        results = {
            "alpha": deviation(args.n, theta),
            "er_alpha": er_deviation(args.n, theta, threshold),
            "equivalence_ratio": equivalence_ratio(theta),
            "matched_er_p": comb.edge_prob(theta, threshold),
        }
    return _record(args, f"exact {sub}", results)


def _prob(value: comb.ExactProb) -> dict:
    return {"rational": value.rational, "float": value.value, "log": value.log_value}


def _log_bound(log_value: float) -> dict:
    return {"log": log_value, "float": comb.exp_or_inf(log_value)}


def _exact_bounds(args: argparse.Namespace, threshold: int) -> dict:
    if args.l is not None:
        bounds = comb.ratio_bounds(args.p, args.l, args.k)
        value = comb.ring_avoid_prob(args.p, args.l, args.k, threshold)
        return {**bounds._asdict(), "value": value}
    theta = _theta(args)
    bounds = comb.one_minus_q_bounds(theta)
    return {
        **bounds._asdict(),
        "middle": comb.one_minus_q_middle_bound(theta),
        "value": comb.edge_prob(theta, threshold),
    }


def _exact_tail(args: argparse.Namespace, threshold: int) -> dict:
    theta = _theta(args)
    bounds = comb.ur_tail_bound(theta, args.r, args.x)
    results = {
        "tight_log": bounds.tight,
        "loose_log": bounds.loose,
        "tight": comb.exp_or_inf(bounds.tight),
        "loose": comb.exp_or_inf(bounds.loose),
        "exact": comb.ur_distribution(theta, args.r, threshold).cdf(args.x),
    }
    if args.sigma is not None:
        if args.n is None:
            raise ValueError("--sigma needs --n")
        scaled = comb.scaled_tail_bound(theta, args.n, args.r, args.x, args.sigma)
        results["scaled_log"] = scaled
    return results


def _exact_decomposition(args: argparse.Namespace, threshold: int) -> dict:
    theta = _theta(args)
    prob_er = comb.ur_distribution(theta, args.r, threshold).cdf(args.x)
    if args.prob_cr is not None:
        prob_cr, source = args.prob_cr, "given"
    elif args.r == 1:
        prob_cr, source = 1.0, "single-node"
    else:
        prob_cr = min(1.0, comb.exp_or_inf(comb.cayley_bound(theta, args.r, threshold)))
        source = "cayley"
    bound = comb.decomposition_bound(args.n, args.r, theta, args.x, prob_er, prob_cr)
    return {"bound": bound, "prob_er": prob_er, "prob_cr": prob_cr, "prob_cr_source": source}


def _cmd_simulate(args: argparse.Namespace) -> OutputRecord:
    theta = _theta(args)
    args.trials = _trials(args)
    args.seed = _seed(args).master
    args.events = args.events or list(DEFAULT_EVENTS)
    events = tuple(EventSelector.parse(text) for text in args.events)
    spec = ExperimentSpec(args.n, theta, args.trials, Seed(args.seed), events)
    workers = _workers(args)
    results = run_trials(spec, workers)
    payload: dict = {"estimates": results.estimates}
    if results.degree is not None:
        payload["degree"] = results.degree
        payload["degree_expected"] = (args.n - 1) * comb.edge_prob(theta).value
    if args.er_matched:
        er_events = tuple(event for event in events if event.kind in ER_KINDS)
        matched = er_simulate(
            args.n,
            comb.edge_prob(theta).value,
            args.trials,
            Seed(args.seed).child(ER_STREAM),
            er_events or (EventSelector("connected"),),
            workers,
        )
        payload["er"] = {"p": comb.edge_prob(theta), "estimates": matched.estimates}
        if matched.degree is not None:
            payload["er"]["degree"] = matched.degree
        if "connected" in results.estimates and "connected" in matched.estimates:
            payload["er"]["connected_gap"] = (
                results.estimates["connected"].point - matched.estimates["connected"].point
            )
    return _record(args, "simulate", payload)


def _cmd_sweep(args: argparse.Namespace) -> OutputRecord:
    scaling = _scaling(args)
    n_values = _int_list(args.n_values, "--n-values")
    alpha_values = _float_list(args.alpha_values, "--alpha-values")
    args.trials = _trials(args, default=1_000)
    args.seed = _seed(args).master
    rows = sweep(
        scaling,
        n_values,
        alpha_values,
        args.trials,
        Seed(args.seed),
        workers=_workers(args),
        er=not args.no_er,
    )
    return _record(args, "sweep", {"rows": [row.csv_row() for row in rows]})


def _cmd_oracle(args: argparse.Namespace) -> OutputRecord:
    result = brute_force(args.n, _theta(args), with_events=not args.no_events)
    payload: dict = {
        "assignments": result.assignments,
        "p_connected": result.p_connected,
        "p_no_isolated": result.p_no_isolated,
    }
    if result.p_events is not None:
        payload["p_events"] = {
            r: {"C_r": events.connected, "B_nr": events.isolated, "A_nr": events.both}
            for r, events in result.p_events.items()
        }
    return _record(args, "oracle", payload)


def _cmd_audit(args: argparse.Namespace) -> OutputRecord:
    thetas = tuple(_parse_theta(text) for text in (args.mc_theta or ["2,10"]))
    args.trials = _trials(args, default=0)
    args.seed = _seed(args).master
    grid = AuditGrid(
        k_values=range(1, args.k_max + 1),
        l_values=range(args.l_min, args.l_max + 1),
        p_values=range(args.p_min, args.p_max + 1),
        r_values=range(1, args.r_max + 1),
        mc_thetas=thetas,
        mc_trials=args.trials,
        seed=Seed(args.seed),
        workers=_workers(args) if args.trials else 1,
    )
    report = run_audit(grid)
    rows = report.rows if args.all_rows else report.violations
    for row in report.violations:
        logger.warning("violated %s at %s: %r > %r", row.check, row.params, row.lhs, row.rhs)
    return _record(args, "audit", {"summary": report.summary(), "rows": rows})


def _cmd_union_check(args: argparse.Namespace) -> OutputRecord:
    args.trials = _trials(args)
    args.seed = _seed(args).master
    report = union_bound_check(
        args.n,
        _theta(args),
        args.trials,
        Seed(args.seed),
        workers=_workers(args),
        max_nodes=args.max_nodes,
    )
    return _record(args, "union-check", {"report": report})


def _cmd_classify(args: argparse.Namespace) -> OutputRecord:
    n_values = _int_list(args.n_values, "--n-values")
    scaling = _scaling(args)
    kwargs = {} if n_values is None else {"n_values": n_values}
    result = classify(scaling, sigma=args.sigma, **kwargs)
    return _record(
        args,
        "classify",
        {"scaling": scaling.to_dict(), "trends": result.trends, "rows": result.rows},
    )


def _cmd_reduce(args: argparse.Namespace) -> OutputRecord:
    n_values = _int_list(args.n_values, "--n-values")
    scaling = _scaling(args)
    result = reduce_scaling(scaling, *(() if n_values is None else (n_values,)))
    return _record(
        args,
        "reduce",
        {"scaling": result.scaling.to_dict(), "rows": result.reports},
    )


def _parse_theta(text: str) -> Theta:
    k, _, p = text.partition(",")
    try:
        return Theta(int(k), int(p))
    except ValueError as exc:
        raise ValueError(f"theta {text!r} must look like K,P with K <= P") from exc


_HANDLERS: dict[str, Callable[[argparse.Namespace], OutputRecord]] = {
    "exact": _cmd_exact,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "oracle": _cmd_oracle,
    "audit": _cmd_audit,
    "union-check": _cmd_union_check,
    "classify": _cmd_classify,
    "reduce": _cmd_reduce,
}


if __name__ == "__main__":
    raise SystemExit(main())
