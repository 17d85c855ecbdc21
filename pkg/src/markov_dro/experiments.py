"""Synthetic experiment harness: revenue problem, risk and disappointment
studies, consistency and scalability runs.

Every trial draws from its own random stream, keyed by (study, trial, T,
group) under the master seed, so changing the number of trials or the T grid
leaves the draws of the other cells untouched.  Risks are losses (negative
revenue), so lower is better throughout.
"""
from __future__ import annotations

import json
import math
import platform
import time
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .baselines import METHODS
from .errors import InvalidInput, MarkovDROError
from .io import atomic_write_text
from .markov_core import (
    estimate_doublet,
    make_positive,
    simulate,
    stationary_from_transition,
)
from .prescriptor import BinaryPolytope, prescriptor_solve
from .wc_solver import AmbiguitySpec, FWConfig, frank_wolfe_worst_case, predictor

RISK_FIELDS = ("method", "r", "T", "trial", "out_of_sample_risk", "in_sample_risk", "disappointed")
DISAPPOINTMENT_FIELDS = ("method", "r", "T", "trials", "disappointment_frequency")
BENCH_FIELDS = ("d", "trial", "wall_seconds", "iterations", "value", "converged")
ASSUMPTIONS = {
    "constraint": "sum_j x_j <= ceil(d/2) unless the config overrides C and b",
    "loss": "loss_k(x)_j = -a_j x_j for every group k (negative revenue)",
    "initial_state": "trajectories start in state 1 unless overridden",
    "positivization": "estimates are mixed with the uniform doublet with weight delta (config)",
    "worst_case_starts": "Frank-Wolfe also restarts from one oracle point per state (config 'starts')",
}


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one logical task under a master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def synth_chain(d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random matrix with two distinct entries raised to 4 and 5, rows normalized."""
    if d < 2:
        raise InvalidInput("d must be >= 2")
    M = rng.uniform(0.0, 1.0, size=(d, d))
    i, j = rng.choice(d * d, size=2, replace=False)
    M.flat[i] = 4.0
    M.flat[j] = 5.0
    M[M <= 0] = np.finfo(float).tiny  # a uniform draw of exactly 0 would break positivity
    return M / M.sum(axis=1, keepdims=True)


@dataclass
class RevenueProblem:
    weights: np.ndarray
    prices: np.ndarray
    C: np.ndarray
    b: np.ndarray
    chains: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.prices = np.asarray(self.prices, dtype=float)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.chains = [np.asarray(P, dtype=float) for P in self.chains]
        if abs(self.weights.sum() - 1) > 1e-9 or np.any(self.weights < 0):
            raise InvalidInput("weights must lie in the simplex")
        if np.any(self.prices <= 0):
            raise InvalidInput("prices must be positive")
        if len(self.chains) != self.weights.size:
            raise InvalidInput("one chain per group is required")
        if self.C.shape[1] != self.d:
            raise InvalidInput("constraint matrix has the wrong width")

    @property
    def n_groups(self) -> int:
        return self.weights.size

    @property
    def d(self) -> int:
        return self.prices.size

    @property
    def space(self) -> BinaryPolytope:
        return BinaryPolytope(self.C, self.b)

    def losses(self, x) -> np.ndarray:
        return np.tile(-self.prices * np.asarray(x, dtype=float), (self.n_groups, 1))

    def stationary(self) -> list:
        return [stationary_from_transition(P) for P in self.chains]

    def true_risk(self, x, pis=None) -> float:
        pis = self.stationary() if pis is None else pis
        L = self.losses(x)
        return float(sum(w * L[k] @ pis[k] for k, w in enumerate(self.weights)))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "prices": self.prices.tolist(),
            "C": self.C.tolist(),
            "b": self.b.tolist(),
            "chains": [P.tolist() for P in self.chains],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RevenueProblem":
        return cls(data["weights"], data["prices"], data["C"], data["b"], data["chains"])


def synth_problem(n: int = 5, d: int = 10, rng: np.random.Generator | None = None) -> RevenueProblem:
    """Random revenue problem: uniform weights on the simplex, integer prices 1..10."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if n < 1 or d < 2:
        raise InvalidInput("need n >= 1 and d >= 2")
    w = rng.dirichlet(np.ones(n))
    a = rng.integers(1, 11, size=d).astype(float)
    chains = [synth_chain(d, rng) for _ in range(n)]
    return RevenueProblem(w, a, np.ones((1, d)), [math.ceil(d / 2)], chains)


@dataclass
class ExperimentConfig:
    T_grid: Sequence[int] = (10, 100, 300, 500)
    r_grid: Sequence[float] = tuple(float(x) for x in np.logspace(-4, 1, 6))
    trials: int = 20
    seed: int = 2024
    methods: Sequence[str] = ("cre", "kl", "wass", "saa")
    xi0: int = 0
    delta: float = 1e-6
    gap_tol: float = 1e-7
    starts: str = "columns"
    out_dir: str | None = None

    def __post_init__(self):
        if not self.T_grid or not self.r_grid:
            raise InvalidInput("T_grid and r_grid must be nonempty")
        if self.trials < 1:
            raise InvalidInput("trials must be positive")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InvalidInput(f"unknown methods {bad}; choose from {METHODS}")
        if any(T < 1 for T in self.T_grid):
            raise InvalidInput("every T must be positive")
        if any(not r > 0 for r in self.r_grid):
            raise InvalidInput("every r must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise InvalidInput(f"unknown config keys: {sorted(extra)}")
        return cls(**data)


def _estimates(problem: RevenueProblem, T: int, trial: int, cfg: ExperimentConfig, study: int):
    out = []
    for k, P in enumerate(problem.chains):
        traj = simulate(P, cfg.xi0, T, stream(cfg.seed, study, trial, T, k))
        out.append(estimate_doublet(traj, problem.d))
    return out


def run_risk_experiment(problem: RevenueProblem, cfg: ExperimentConfig) -> list[dict]:
    """Out-of-sample and in-sample risk of each method's prescriptor.

    Rows are ordered by (method, r, T, trial).  SAA ignores r but is
    reported once per r so every (method, r) cell is complete.  A failed
    solve yields a row of NaNs rather than a missing row.
    """
    pis = problem.stationary()
    fw = FWConfig(gap_tol=cfg.gap_tol, warn=False, starts=cfg.starts)
    cells = {}
    for T in cfg.T_grid:
        for trial in range(cfg.trials):
            thetas = _estimates(problem, T, trial, cfg, study=1)
            for method in cfg.methods:
                radii = cfg.r_grid
                saa_cache = None
                for r in radii:
                    if method == "saa" and saa_cache is not None:
                        cells[(method, r, T, trial)] = saa_cache
                        continue
                    try:
                        res = prescriptor_solve(
                            problem.losses, thetas, problem.weights, problem.space, method, r, fw, delta=cfg.delta
                        )
                        oos = problem.true_risk(res.x, pis)
                        ins = res.in_sample_risk
                    except (MarkovDROError, ArithmeticError, ValueError):
                        oos = ins = float("nan")
                    cells[(method, r, T, trial)] = (oos, ins)
                    if method == "saa":
                        saa_cache = (oos, ins)
    rows = []
    for method in cfg.methods:
        for r in cfg.r_grid:
            for T in cfg.T_grid:
                for trial in range(cfg.trials):
                    oos, ins = cells[(method, r, T, trial)]
                    rows.append(
                        {
                            "method": method,
                            "r": r,
                            "T": T,
                            "trial": trial,
                            "out_of_sample_risk": oos,
                            "in_sample_risk": ins,
                            "disappointed": int(oos > ins) if np.isfinite(oos) else "",
                        }
                    )
    return rows


def disappointment_table(risk_rows: Iterable[dict]) -> list[dict]:
    """Fraction of trials where the true risk exceeded the in-sample risk."""
    groups: dict[tuple, list] = {}
    for row in risk_rows:
        if row["disappointed"] == "":
            continue
        groups.setdefault((row["method"], row["r"], row["T"]), []).append(int(row["disappointed"]))
    return [
        {
            "method": m,
            "r": r,
            "T": T,
            "trials": len(v),
            "disappointment_frequency": float(np.mean(v)),
        }
        for (m, r, T), v in groups.items()
    ]


def run_disappointment_experiment(problem: RevenueProblem, cfg: ExperimentConfig) -> list[dict]:
    return disappointment_table(run_risk_experiment(problem, cfg))


def predictor_disappointment(
    P, loss, r: float, T_grid: Sequence[int], trials: int, seed: int, xi0: int = 0
) -> list[dict]:
    """Frequency with which the robust predictor underestimates the true cost.

    For a fixed loss vector and known chain P, each trial simulates a path,
    computes the predictor at radius r and checks <loss, pi(P)> > prediction.
    """
    loss = np.asarray(loss, dtype=float)
    truth = float(loss @ stationary_from_transition(P))
    spec = AmbiguitySpec(r)
    fw = FWConfig(gap_tol=1e-9, warn=False)
    d = loss.size
    rows = []
    for T in T_grid:
        hits = 0
        for trial in range(trials):
            th = estimate_doublet(simulate(P, xi0, T, stream(seed, 2, trial, T)), d)
            hits += truth > predictor(loss, th, spec, fw).value
        rows.append({"T": T, "trials": trials, "disappointment_frequency": hits / trials})
    return rows


def consistency_experiment(
    P, loss, T_grid: Sequence[int], seeds: int, seed: int = 0, xi0: int = 0, scale: float | None = None
) -> list[dict]:
    """|predictor - true cost| with the radius shrinking like d / T."""
    loss = np.asarray(loss, dtype=float)
    d = loss.size
    truth = float(loss @ stationary_from_transition(P))
    fw = FWConfig(gap_tol=1e-9, warn=False)
    rows = []
    for T in T_grid:
        r = (d if scale is None else scale) / T
        for s in range(seeds):
            th = estimate_doublet(simulate(P, xi0, T, stream(seed, 3, s, T)), d)
            val = predictor(loss, th, AmbiguitySpec(r), fw).value
            rows.append({"T": T, "seed": s, "r": r, "error": abs(val - truth)})
    return rows


def run_scalability_bench(
    d_list: Sequence[int],
    T: int = 5000,
    r: float = 1.0,
    trials: int = 10,
    seed: int = 0,
    gap_tol: float = 1e-6,
    time_limit: float | None = None,
) -> list[dict]:
    """Wall time of single worst-case solves on synthetic data of growing size."""
    if list(d_list) != sorted(d_list):
        raise InvalidInput("d_list must be ascending")
    rows = []
    for d in d_list:
        for trial in range(trials):
            rng = stream(seed, 4, d, trial)
            P = synth_chain(d, rng)
            x = rng.integers(0, 2, size=d)
            a = rng.integers(1, 11, size=d)
            loss = -(a * x).astype(float)
            th = make_positive(estimate_doublet(simulate(P, 0, T, rng), d))
            cfg = FWConfig(gap_tol=gap_tol, warn=False)
            t0 = time.monotonic()
            sol = frank_wolfe_worst_case(loss, th, AmbiguitySpec(r), cfg)
            wall = time.monotonic() - t0
            timed_out = time_limit is not None and wall > time_limit
            rows.append(
                {
                    "d": d,
                    "trial": trial,
                    "wall_seconds": wall,
                    "iterations": sol.iterations,
                    "value": sol.value,
                    "converged": int(sol.converged and not timed_out),
                }
            )
    return rows


# ---------------------------------------------------------------------------
# output


def metadata(cfg=None, extra: dict | None = None) -> dict:
    meta = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "assumptions": ASSUMPTIONS,
        "sign_convention": "risks are expected losses = negative revenue; lower is better",
    }
    if cfg is not None:
        meta["config"] = asdict(cfg) if hasattr(cfg, "__dataclass_fields__") else cfg
    if extra:
        meta.update(extra)
    return meta


def write_metadata(path, cfg=None, extra: dict | None = None) -> None:
    atomic_write_text(path, json.dumps(metadata(cfg, extra), indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")
