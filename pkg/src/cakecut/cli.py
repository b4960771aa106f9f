"""Command-line entry point: ``cakecut <subcommand> ...``.

Exit codes: 0 success, 1 domain/config error (including bad flags and failed
audits), 2 singular witness matrix, 3 resource cap exceeded.
"""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

from . import harness
from .errors import CakeError, ResourceError, SingularWitnessMatrix
from .linalg import SIGMA_BOUND_MIN_N, matrix_from_dict, sigma_query_bound, tail_exponent, webb_query_bound
from .measure import load_measures, make_oracles
from .models import ModelConfig, measures_from_matrix, sample, trial_rng
from .protocols import (
    Allocation,
    NearExactConfig,
    audit_envy_free,
    audit_proportional,
    audit_super_envy_free,
    envy_free,
    value_matrix,
)

HELP_WIDTH = 88


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _trials_map(text: str) -> dict[int, int]:
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        try:
            n, t = item.split(":")
            out[int(n)] = int(t)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected N:TRIALS pairs, got {item!r}")
    return out


def _add_model(p, with_n=True):
    p.add_argument("--model", choices=["h1", "h2"], required=True, help="witness model")
    if with_n:
        p.add_argument("--n", type=int, required=True, help="number of players")
    p.add_argument("--epsilon", type=float, help="H2 noise half-width, in (0, 1)")
    p.add_argument("--base", help="H2 base matrix JSON file {\"n\": .., \"rows\": [..]}")
    p.add_argument("--noise", choices=["uniform", "triangular", "zero"], default="uniform",
                   help="H2 noise law (default: uniform)")


def _add_seed(p):
    p.add_argument("--seed", type=int, required=True, help="experiment seed (required)")


def _add_out(p, what):
    p.add_argument("--out", help=f"write {what} here instead of standard output")


def _add_protocol(p):
    p.add_argument("--epsilon-mode", choices=["fast", "paper"], default="fast",
                   help="near-exact tolerance: delta/(2(n-1)) or delta/n^2 (default: fast)")
    p.add_argument("--assignment", choices=["greedy", "random"], default="greedy",
                   help="near-exact piece assignment strategy (default: greedy)")
    p.add_argument("--k-cap", type=int, default=2 ** 20,
                   help="largest per-player quantile count before giving up (default: 1048576)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cakecut", formatter_class=_formatter,
                     description="Envy-free cake cutting with Webb's algorithm on random witness models.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("sample", help="draw one witness matrix", formatter_class=_formatter)
    _add_model(p)
    _add_seed(p)
    p.add_argument("--trial", type=int, default=0, help="trial index within the seed (default: 0)")
    _add_out(p, "the sample JSON")

    p = sub.add_parser("run", help="run the envy-free protocol on one sampled instance",
                       formatter_class=_formatter)
    _add_model(p)
    _add_seed(p)
    p.add_argument("--trial", type=int, default=0, help="trial index within the seed (default: 0)")
    _add_protocol(p)
    _add_out(p, "the report JSON")
    p.add_argument("--measures-out", help="also write the players' measures JSON here")

    p = sub.add_parser("audit", help="re-check a report's allocation against measures",
                       formatter_class=_formatter)
    p.add_argument("--report", required=True, help="report JSON written by 'run'")
    p.add_argument("--measures", required=True, help="measures JSON (a run report also works)")
    _add_out(p, "the audit JSON")

    p = sub.add_parser("bound", help="evaluate the query-count bound calculators",
                       formatter_class=_formatter)
    p.add_argument("--n", type=int, required=True, help="number of players")
    p.add_argument("--t", type=float, required=True, help="minimum entry of the inverse witness matrix")
    p.add_argument("--sigma", type=float, help="smallest singular value of the witness matrix")
    p.add_argument("--b", type=Fraction, help="tail exponent parameter, b > 4")
    _add_out(p, "the bounds JSON")

    for name, what in (("mc-sigma", "singular-value tail frequencies"),
                       ("mc-queries", "query counts of full protocol runs")):
        p = sub.add_parser(name, help=f"Monte Carlo: {what}", formatter_class=_formatter)
        _add_model(p, with_n=False)
        p.add_argument("--n-grid", type=_int_list, required=True, help="comma-separated player counts")
        p.add_argument("--b", type=float, default=5.0, help="threshold exponent (default: 5)")
        p.add_argument("--trials", type=int, required=True, help="trials per grid point")
        p.add_argument("--trials-by-n", type=_trials_map, default={},
                       help="per-n overrides as N:TRIALS,N:TRIALS")
        _add_seed(p)
        p.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")
        if name == "mc-queries":
            _add_protocol(p)
        _add_out(p, "the CSV table")
        p.add_argument("--json", dest="json_out", help="also write the JSON report here")
    return parser


def _model(args, n) -> ModelConfig:
    base = None
    if args.base:
        with open(args.base) as fh:
            base = matrix_from_dict(json.load(fh))
    return ModelConfig(args.model, n, epsilon=args.epsilon, base=base, noise=args.noise)


def _emit(text: str, out) -> None:
    if out:
        harness.atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _cmd_sample(args):
    cfg = _model(args, args.n)
    rec = sample(cfg, trial_rng(args.seed, args.trial), seed_path=(args.seed, args.trial))
    _emit(harness.json_text({"model": cfg.to_dict(), **rec.to_dict()}), args.out)
    return 0


def _cmd_run(args):
    cfg = _model(args, args.n)
    rec = sample(cfg, trial_rng(args.seed, args.trial), seed_path=(args.seed, args.trial))
    measures = measures_from_matrix(rec.M)
    ne = NearExactConfig(epsilon_mode=args.epsilon_mode, assignment=args.assignment,
                         k_cap=args.k_cap, seed=args.seed, key=(args.trial,))
    report = envy_free(make_oracles(measures), ne)
    body = {
        "model": cfg.to_dict(),
        "sample": rec.to_dict(),
        **report.to_dict(),
        "measures": [m.to_dict() for m in measures],
    }
    if args.measures_out:
        harness.atomic_write(args.measures_out, harness.json_text({"measures": body["measures"]}))
    _emit(harness.json_text(body), args.out)
    return 0


def _cmd_audit(args):
    with open(args.report) as fh:
        report = json.load(fh)
    measures = load_measures(args.measures)
    alloc = Allocation.from_list(report["allocation"])
    if len(measures) != len(alloc.pieces):
        raise CakeError(f"{len(measures)} measures but {len(alloc.pieces)} pieces")
    alloc.check()
    audits = {
        "envy_free": audit_envy_free(measures, alloc).to_dict(),
        "super_envy_free": audit_super_envy_free(measures, alloc).to_dict(),
        "proportional": audit_proportional(measures, alloc).to_dict(),
    }
    passed = all(a["passed"] for a in audits.values())
    out = {"passed": passed, "audits": audits, "values": value_matrix(measures, alloc).tolist()}
    _emit(harness.json_text(out), args.out)
    return 0 if passed else 1


def _cmd_bound(args):
    n, t = args.n, args.t
    out = {"n": n, "t": t, "webb_query_bound": webb_query_bound(n, t)}
    out["sigma_bound_in_range"] = n >= SIGMA_BOUND_MIN_N
    if n < SIGMA_BOUND_MIN_N:
        out["sigma_bound_note"] = f"n = {n} < {SIGMA_BOUND_MIN_N}: the sigma bound is not established here"
    if args.sigma is not None:
        out["sigma_query_bound"] = sigma_query_bound(n, args.sigma).value
    if args.b is not None:
        b = args.b.limit_denominator(10 ** 6)
        e = tail_exponent(b)
        out["b"] = str(b)
        out["tail_exponent"] = str(e)
        out["tail_exponent_float"] = float(e)
        out["query_threshold"] = float(n) ** (7 + float(b))
    _emit(harness.json_text(out), args.out)
    return 0


def _cmd_mc(args):
    mode = "sigma" if args.command == "mc-sigma" else "queries"
    first = args.n_grid[0] if args.n_grid else 1
    spec = harness.ExperimentSpec(
        model=_model(args, first), n_grid=args.n_grid, b=args.b, trials=args.trials,
        trials_by_n=args.trials_by_n, seed=args.seed, threads=args.threads, mode=mode,
        **({"epsilon_mode": args.epsilon_mode, "assignment": args.assignment, "k_cap": args.k_cap}
           if mode == "queries" else {}),
    )
    summary = harness.mc_sigma(spec) if mode == "sigma" else harness.mc_queries(spec)
    _emit(harness.csv_text(summary.rows, summary.columns), args.out)
    if args.json_out:
        harness.write_json(summary, args.json_out)
    for v in summary.violations:
        print(f"invariant violation: {v}", file=sys.stderr)
    return 1 if summary.violations else 0


COMMANDS = {
    "sample": _cmd_sample,
    "run": _cmd_run,
    "audit": _cmd_audit,
    "bound": _cmd_bound,
    "mc-sigma": _cmd_mc,
    "mc-queries": _cmd_mc,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except SingularWitnessMatrix as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ResourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CakeError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
