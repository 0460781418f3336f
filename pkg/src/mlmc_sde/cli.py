"""Command-line interface: ``mlmc-sde {mc,mlmc,reference,diagnose,experiment}``.

Every subcommand prints CSV with a header row to stdout (``experiment``
writes to ``--out`` as well).  The seed comes from ``--seed``, then the
``MLMC_SEED`` environment variable, then the package default.
"""

from __future__ import annotations

import argparse
import math
import re
import sys

from .diagnostics import diagnose_rows
from .estimators import EstimatorReport, mlmc, monte_carlo_euler
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment, write_csv
from .problems import Payoff, build_problem
from .randomness import derive_seed, resolve_seed
from .reference import QuadratureSpec, gl_reference_value, x5_expectation

_POWER = re.compile(r"^\s*(\d+)\s*\^\s*(\d+)\s*$")


def _parse_int(token: str) -> int:
    m = _POWER.match(token)
    if m:
        return int(m.group(1)) ** int(m.group(2))
    return int(token.strip(), 0)


def parse_steps_list(text: str) -> list[int]:
    """``"2^4..2^16"`` (every power of two in the range), ``"16,32,64"`` or a mix."""
    out = []
    for part in text.split(","):
        if ".." in part:
            lo_s, hi_s = part.split("..", 1)
            lo, hi = _parse_int(lo_s), _parse_int(hi_s)
            if lo < 1 or hi < lo or lo & (lo - 1) or hi & (hi - 1):
                raise argparse.ArgumentTypeError(f"bad power-of-two range {part!r}")
            n = lo
            while n <= hi:
                out.append(n)
                n *= 2
        elif part.strip():
            out.append(_parse_int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty steps list")
    return out


def _steps_list(text):
    try:
        return parse_steps_list(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _payoff(name: str, problem) -> Payoff:
    if name == "supnorm2":
        return Payoff.path_sup_square_norm()
    return Payoff.terminal_power(2.0) if problem.d == 1 else Payoff.terminal_square_norm()


def _add_problem_args(p, problems=("x5", "ginzburg-landau", "langevin")):
    p.add_argument("--problem", choices=problems, default="x5")
    p.add_argument("--sigma-bar", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--horizon", type=float, default=1.0)


def _add_seed(p):
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                   help="master seed (default: $MLMC_SEED, else 42)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlmc-sde",
        description="Multilevel and plain Monte Carlo for SDEs with superlinear coefficients.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("mc", "mlmc"):
        p = sub.add_parser(name, help=f"{'plain Monte Carlo' if name == 'mc' else 'multilevel'} estimate")
        _add_problem_args(p)
        p.add_argument("--steps", type=_parse_int, required=True)
        p.add_argument("--scheme", choices=("euler", "tamed", "implicit"), default="euler")
        p.add_argument("--payoff", choices=("p2", "supnorm2"), default="p2")
        _add_seed(p)
        p.add_argument("--replicates", type=int, default=1)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--no-timing", action="store_true",
                       help="write nan in the runtime column so output is reproducible byte for byte")

    p = sub.add_parser("reference", help="reference value of E[X_T^2]")
    _add_problem_args(p, ("x5", "ginzburg-landau"))
    p.add_argument("--rule", choices=("adaptive_simpson", "gauss_hermite"), default="adaptive_simpson")
    p.add_argument("--samples", type=_parse_int, default=10**6)
    p.add_argument("--fine-steps", type=_parse_int, default=2**14)
    _add_seed(p)

    p = sub.add_parser("diagnose", help="level statistics of the x^5 initial-value array")
    p.add_argument("--sigma-bar", type=float, default=1.0)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--steps-list", type=_steps_list, default=parse_steps_list("2^4..2^16"))
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--delta", type=float, default=0.25)
    _add_seed(p)

    p = sub.add_parser("experiment", help="run a named experiment and write its CSV")
    p.add_argument("--name", choices=EXPERIMENTS, required=True)
    p.add_argument("--out", default=None)
    _add_seed(p)
    p.add_argument("--replicates", type=int, default=4)
    p.add_argument("--steps-list", type=_steps_list, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--gl-reference-samples", type=_parse_int, default=10**5)
    p.add_argument("--gl-reference-steps", type=_parse_int, default=2**12)
    p.add_argument("--langevin-reference-steps", type=_parse_int, default=2**16)
    p.add_argument("--langevin-reference-runs", type=int, default=16)
    return parser


def _cmd_estimate(args, out) -> None:
    problem = build_problem(args.problem, args.sigma_bar, args.dim, args.horizon)
    payoff = _payoff(args.payoff, problem)
    seed = resolve_seed(args.seed)
    seeds = [seed] if args.replicates == 1 else [derive_seed(seed, r) for r in range(args.replicates)]
    rows = []
    for s in seeds:
        if args.command == "mlmc":
            rep = mlmc(problem, args.scheme, payoff, args.steps, s, workers=args.workers)
        else:
            rep = monte_carlo_euler(problem, payoff, args.steps, s, scheme=args.scheme,
                                    workers=args.workers)
        row = list(rep.csv_row())
        if args.no_timing:
            row[-1] = math.nan
        rows.append(row)
    write_csv(out, EstimatorReport.CSV_HEADER, rows)


def _cmd_reference(args, out) -> None:
    header = ("problem", "sigma_bar", "horizon", "value", "standard_error", "method")
    if args.problem == "x5":
        spec = QuadratureSpec(rule=args.rule)
        value = x5_expectation(args.sigma_bar, args.horizon, 2.0, spec)
        method = (f"gauss_hermite(nodes={spec.nodes})" if spec.rule == "gauss_hermite" else
                  f"adaptive_simpson(abs_tol={spec.abs_tol:g};range={spec.range_multiplier:g}sigma)")
        row = ("x5", args.sigma_bar, args.horizon, value, math.nan, method)
    else:
        value, se = gl_reference_value(args.samples, args.fine_steps, args.seed)
        method = (f"monte_carlo(samples={args.samples};fine_steps={args.fine_steps};"
                  f"seed={resolve_seed(args.seed)})")
        row = ("ginzburg-landau", math.nan, 1.0, value, math.nan if se is None else se, method)
    write_csv(out, header, [row])


def _cmd_diagnose(args, out) -> None:
    header = ("N", "replicate", "L_N", "eta_N", "theta_N", "A1", "A2", "A3", "A4")
    rows = diagnose_rows(args.sigma_bar, args.horizon, args.steps_list, args.replicates,
                         args.seed, args.delta)
    write_csv(out, header, rows)


def _cmd_experiment(args, out) -> None:
    cfg = ExperimentConfig(args.name, args.seed, args.replicates,
                           tuple(args.steps_list) if args.steps_list else None, args.out,
                           timing=not args.no_timing, workers=args.workers,
                           gl_reference_samples=args.gl_reference_samples,
                           gl_reference_steps=args.gl_reference_steps,
                           langevin_reference_N=args.langevin_reference_steps,
                           langevin_reference_runs=args.langevin_reference_runs)
    text = run_experiment(cfg)
    if args.out is None:
        out.write(text)


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"mc": _cmd_estimate, "mlmc": _cmd_estimate, "reference": _cmd_reference,
                "diagnose": _cmd_diagnose, "experiment": _cmd_experiment}
    try:
        handlers[args.command](args, out)
    except (ValueError, OSError) as exc:
        print(f"mlmc-sde: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
