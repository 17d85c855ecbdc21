"""Command-line interface: ``markov-dro <command> [options]``.

Exit codes: 0 on success, 1 when a solver did not converge or failed
numerically (results are still written and flagged), 2 on invalid input.
Errors are reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidInput, MarkovDROError
from .experiments import (
    BENCH_FIELDS,
    DISAPPOINTMENT_FIELDS,
    RISK_FIELDS,
    ExperimentConfig,
    RevenueProblem,
    disappointment_table,
    run_risk_experiment,
    run_scalability_bench,
    stream,
    synth_problem,
    write_metadata,
)
from .hypotest import HypothesisPair, coin_pair, error_rates_is, error_rates_mc
from .io import (
    atomic_write_text,
    matrix_record,
    matrix_to_csv,
    read_matrix,
    read_trajectory,
    read_vector,
    rows_to_csv,
    trajectory_to_text,
)
from .markov_core import (
    DoubletMatrix,
    check_transition,
    estimate_doublet,
    ghost_balance,
    make_positive,
    simulate,
)
from .wc_solver import AmbiguitySpec, FWConfig

DEFAULT_SEED = 2024
HYPOTEST_FIELDS = ("T", "alpha_hat", "beta_hat", "rate_estimate")

log = logging.getLogger("markov_dro")


class UsageError(Exception):
    """Bad command line; reported like any other input error."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"master random seed (default {DEFAULT_SEED})")
    g.add_argument("--format", choices=("csv", "json"), default=None,
                   help="output format when the file extension does not decide it")
    g.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="markov-dro", description="Distributionally robust decisions for Markov chain data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", parents=[common], help="sample a trajectory from a transition matrix")
    p.add_argument("--P", required=True, metavar="FILE", help="transition matrix (CSV or JSON)")
    p.add_argument("--T", required=True, type=int, help="number of transitions")
    p.add_argument("--xi0", type=int, default=1, help="initial state, 1-based (default 1)")
    p.add_argument("--out", metavar="FILE", help="trajectory file (default stdout)")

    p = sub.add_parser("estimate", parents=[common], help="empirical doublet matrix of a trajectory")
    p.add_argument("--trajectory", required=True, metavar="FILE", help="trajectory file, first line xi_0")
    p.add_argument("--d", required=True, type=int, help="number of states")
    p.add_argument("--ghost", action="store_true", help="add the closing transition xi_T -> xi_0")
    p.add_argument("--delta", type=float, default=None, help="also positivize with this weight")
    p.add_argument("--out", metavar="FILE", help="doublet file (default stdout)")

    p = sub.add_parser("worst-case", parents=[common], help="worst-case expected loss around a doublet")
    p.add_argument("--loss", required=True, metavar="FILE", help="loss vector, d numbers")
    p.add_argument("--doublet", required=True, metavar="FILE", help="estimated doublet matrix")
    p.add_argument("--radius", required=True, type=float, help="ambiguity radius r > 0")
    p.add_argument("--kind", choices=("cre", "kl", "wass"), default="cre", help="divergence (default cre)")
    p.add_argument("--gap-tol", type=float, default=1e-6, help="Frank-Wolfe gap tolerance (default 1e-6)")
    p.add_argument("--max-iters", type=int, default=10_000, help="Frank-Wolfe iteration cap (default 10000)")
    p.add_argument("--starts", choices=("center", "columns"), default="center",
                   help="Frank-Wolfe starting points (default center)")
    p.add_argument("--delta", type=float, default=1e-6, help="positivization weight (default 1e-6)")
    p.add_argument("--out", metavar="FILE", help="result JSON (default stdout)")

    p = sub.add_parser("prescribe", parents=[common], help="robust decision for a revenue problem")
    p.add_argument("--problem", required=True, metavar="FILE", help="problem JSON")
    p.add_argument("--radius", required=True, type=float, help="ambiguity radius r > 0")
    p.add_argument("--kind", choices=("cre", "kl", "wass", "saa"), default="cre", help="method (default cre)")
    p.add_argument("--strategy", choices=("auto", "enumerate", "dfo"), default="auto",
                   help="decision search (default auto)")
    p.add_argument("--gap-tol", type=float, default=1e-7, help="Frank-Wolfe gap tolerance (default 1e-7)")
    p.add_argument("--starts", choices=("center", "columns"), default="columns",
                   help="Frank-Wolfe starting points (default columns)")
    p.add_argument("--delta", type=float, default=1e-6, help="positivization weight (default 1e-6)")
    p.add_argument("--out", metavar="FILE", help="result JSON (default stdout)")

    p = sub.add_parser("hypotest", parents=[common], help="error rates of the two-chain test")
    p.add_argument("--pair", required=True, help="'coin:EPS' or a JSON file with theta1 and theta2")
    p.add_argument("--T", required=True, type=int, nargs="+", help="trajectory lengths")
    p.add_argument("--trials", type=int, default=1000, help="trajectories per model and T (default 1000)")
    p.add_argument("--method", choices=("plain", "importance"), default="plain",
                   help="Monte Carlo estimator (default plain)")
    p.add_argument("--xi0", type=int, default=1, help="initial state, 1-based (default 1)")
    p.add_argument("--out", metavar="FILE", help="CSV file (default stdout)")

    p = sub.add_parser("experiment", parents=[common], help="synthetic studies writing CSV and metadata")
    p.add_argument("study", choices=("risk", "disappointment", "bench"), help="which study to run")
    p.add_argument("--config", metavar="FILE", help="config JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _emit(text: str, out) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _fmt(args, out, default="csv") -> str:
    if out and str(out).lower().endswith(".json"):
        return "json"
    if out and str(out).lower().endswith(".csv"):
        return "csv"
    return args.format or default


def _rows_text(rows, fields, fmt) -> str:
    if fmt == "json":
        return json.dumps([{k: r[k] for k in fields} for r in rows], indent=2, default=_num) + "\n"
    return rows_to_csv(rows, fields)


def _num(o):
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _json_finite(o):
    """Replace non-finite floats so the output is strict JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _json_finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_json_finite(v) for v in o]
    return o


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: invalid JSON ({exc.msg})") from exc


def _state(xi0: int, d: int) -> int:
    if not 1 <= xi0 <= d:
        raise InvalidInput(f"--xi0 must lie in 1..{d}")
    return xi0 - 1


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    P = check_transition(read_matrix(args.P), tol=1e-9)
    traj = simulate(P, _state(args.xi0, P.shape[0]), args.T, np.random.default_rng(args.seed))
    _emit(trajectory_to_text(traj), args.out)
    return 0


def cmd_estimate(args) -> int:
    traj = read_trajectory(args.trajectory)
    theta = estimate_doublet(traj, args.d)
    if args.ghost:
        theta = ghost_balance(theta, traj)
    if args.delta is not None:
        theta = make_positive(theta, args.delta)
    if _fmt(args, args.out) == "json":
        _emit(json.dumps(matrix_record(theta)) + "\n", args.out)
    else:
        _emit(matrix_to_csv(theta), args.out)
    return 0


def cmd_worst_case(args) -> int:
    from .baselines import worst_case_solution

    spec = AmbiguitySpec(args.radius, args.kind)
    loss = read_vector(args.loss)
    theta = DoubletMatrix(read_matrix(args.doublet)).entries
    cfg = FWConfig(gap_tol=args.gap_tol, max_iters=args.max_iters, warn=False, starts=args.starts)
    sol = worst_case_solution(spec.kind, loss, theta, spec.radius, cfg, args.delta)
    out = sol.to_dict()
    out.update(kind=spec.kind, radius=spec.radius)
    _emit(json.dumps(_json_finite(out), indent=2) + "\n", args.out)
    if not sol.converged:
        log.warning("Frank-Wolfe stopped (%s) with gap %.3g", sol.status, sol.final_gap)
        return 1
    return 0


def _load_problem(path):
    from .prescriptor import BinaryPolytope

    data = _load_json(path)
    base = Path(path).parent
    missing = [k for k in ("prices", "weights", "C", "b") if k not in data]
    if missing:
        raise InvalidInput(f"problem JSON lacks {missing}")
    if "doublets" in data:
        thetas = [DoubletMatrix(read_matrix(base / p)).entries for p in data["doublets"]]
    elif "thetas" in data:
        thetas = [DoubletMatrix(np.asarray(t, dtype=float)).entries for t in data["thetas"]]
    else:
        raise InvalidInput("problem JSON needs 'doublets' (CSV paths) or inline 'thetas'")
    prices = np.asarray(data["prices"], dtype=float)
    weights = np.asarray(data["weights"], dtype=float)
    if len(thetas) != weights.size:
        raise InvalidInput("one doublet per weight is required")
    if any(t.shape != (prices.size, prices.size) for t in thetas):
        raise InvalidInput("doublet dimensions must match the number of prices")
    if np.any(prices <= 0) or abs(weights.sum() - 1) > 1e-9 or np.any(weights < 0):
        raise InvalidInput("prices must be positive and weights must lie in the simplex")
    space = BinaryPolytope(data["C"], data["b"])
    if space.n != prices.size:
        raise InvalidInput("constraint matrix width must equal the number of prices")

    def losses(x):
        return np.tile(-prices * np.asarray(x, dtype=float), (weights.size, 1))

    return losses, thetas, weights, space


def cmd_prescribe(args) -> int:
    from .prescriptor import prescriptor_solve

    if args.kind != "saa":
        AmbiguitySpec(args.radius, args.kind)
    elif not args.radius > 0:
        raise InvalidInput(f"radius must satisfy r > 0, got {args.radius}")
    losses, thetas, weights, space = _load_problem(args.problem)
    cfg = FWConfig(gap_tol=args.gap_tol, warn=False, starts=args.starts)
    res = prescriptor_solve(
        losses, thetas, weights, space, args.kind, args.radius, cfg, strategy=args.strategy, delta=args.delta
    )
    out = {
        "x": res.x.astype(int).tolist(),
        "in_sample_risk": res.in_sample_risk,
        "method": args.kind,
        "radius": args.radius,
        "strategy": res.method,
        "worst_case_solves": res.evaluations,
        "candidates": res.candidates,
    }
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def _load_pair(spec: str) -> HypothesisPair:
    if spec.startswith("coin:"):
        try:
            eps = float(spec[5:])
        except ValueError:
            raise InvalidInput(f"bad coin parameter in {spec!r}") from None
        return coin_pair(eps)
    data = _load_json(spec)
    if "theta1" not in data or "theta2" not in data:
        raise InvalidInput("pair JSON needs 'theta1' and 'theta2'")
    return HypothesisPair(np.asarray(data["theta1"], dtype=float), np.asarray(data["theta2"], dtype=float))


def cmd_hypotest(args) -> int:
    pair = _load_pair(args.pair)
    xi0 = _state(args.xi0, pair.d)
    if args.trials < 1 or any(T < 1 for T in args.T):
        raise InvalidInput("--T and --trials must be positive")
    fn = error_rates_is if args.method == "importance" else error_rates_mc
    rows = []
    for T in args.T:
        er = fn(pair, T, args.trials, stream(args.seed, 5, T), xi0)
        rate = 0.0 - math.log(er.alpha_hat) / T if er.alpha_hat > 0 else ""
        rows.append({"T": T, "alpha_hat": er.alpha_hat, "beta_hat": er.beta_hat, "rate_estimate": rate})
    _emit(_rows_text(rows, HYPOTEST_FIELDS, _fmt(args, args.out)), args.out)
    return 0


BENCH_KEYS = {"d_list", "T", "r", "trials", "seed", "gap_tol", "time_limit"}


def _problem_from(data, seed: int) -> RevenueProblem:
    if data is None:
        return synth_problem(rng=stream(seed, 0))
    if "chains" in data:
        return RevenueProblem.from_dict(data)
    extra = set(data) - {"n", "d", "seed"}
    if extra:
        raise InvalidInput(f"unknown problem keys: {sorted(extra)}")
    return synth_problem(data.get("n", 5), data.get("d", 10), stream(data.get("seed", seed), 0))


def cmd_experiment(args) -> int:
    data = _load_json(args.config) if args.config else {}
    if not isinstance(data, dict):
        raise InvalidInput("config JSON must be an object")
    out = Path(args.out)
    ext = "json" if args.format == "json" else "csv"
    if args.study == "bench":
        extra = set(data) - BENCH_KEYS
        if extra:
            raise InvalidInput(f"unknown bench config keys: {sorted(extra)}")
        kw = dict(data)
        kw.setdefault("d_list", [10, 50, 100, 200])
        kw.setdefault("seed", args.seed)
        rows = run_scalability_bench(**kw)
        atomic_write_text(out / f"bench.{ext}", _rows_text(rows, BENCH_FIELDS, ext))
        write_metadata(out / "metadata.json", kw, {"study": "bench"})
        return 0 if all(r["converged"] for r in rows) else 1
    data = dict(data)
    problem_spec = data.pop("problem", None)
    data.setdefault("seed", args.seed)
    cfg = ExperimentConfig.from_dict(data)
    problem = _problem_from(problem_spec, cfg.seed)
    rows = run_risk_experiment(problem, cfg)
    if args.study == "risk":
        atomic_write_text(out / f"risk.{ext}", _rows_text(rows, RISK_FIELDS, ext))
    else:
        table = disappointment_table(rows)
        atomic_write_text(out / f"disappointment.{ext}", _rows_text(table, DISAPPOINTMENT_FIELDS, ext))
    write_metadata(out / "metadata.json", cfg, {"study": args.study, "problem": problem.to_dict()})
    failed = sum(1 for r in rows if not math.isfinite(r["out_of_sample_risk"]))
    if failed:
        log.warning("%d solves failed and were recorded as NaN", failed)
        return 1
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "worst-case": cmd_worst_case,
    "prescribe": cmd_prescribe,
    "hypotest": cmd_hypotest,
    "experiment": cmd_experiment,
}


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(2, exc)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except (InvalidInput, UsageError, ValueError, OSError) as exc:
        return _fail(2, exc)
    except (MarkovDROError, ArithmeticError) as exc:
        return _fail(1, exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
