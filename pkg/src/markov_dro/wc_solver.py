"""Worst-case expected loss over a conditional-relative-entropy ball.

Writing a model as (pi, P) and using pi = pi(P), the worst case becomes

    max  Psi(P) = <loss, pi(P)>
    s.t. P row-stochastic,  sum_i pi'_i D(P'_i. || P_i.) <= r,

a nonconvex objective over a convex set.  :func:`frank_wolfe_worst_case`
runs a conditional-gradient method on it: each step linearizes Psi, asks a
linear oracle for the best feasible direction and does an exact-type line
search.  The oracle is pluggable, so the same loop serves other ambiguity
sets whose linear subproblem is cheap (see :mod:`markov_dro.baselines`).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .errors import InvalidInput, NotConvergedWarning, SingularSystem
from .markov_core import as_doublet, doublet_to_chain, make_positive, check_transition
from .oracle import OracleProblem, SGDConfig, solve_dual

KINDS = ("cre", "kl", "wass")
_KIND_ALIASES = {
    "cre": "cre",
    "conditionalrelativeentropy": "cre",
    "kl": "kl",
    "klstationary": "kl",
    "wass": "wass",
    "wassersteinrows": "wass",
}

# An oracle maps a gradient matrix to (S, slack): a feasible maximizer of
# <S, C> and an upper bound on how far <S, C> is from the true maximum.
LinearOracle = Callable[[np.ndarray], "tuple[np.ndarray, float]"]


def as_loss(loss) -> np.ndarray:
    L = np.asarray(loss, dtype=float).reshape(-1)
    if L.size < 1 or not np.all(np.isfinite(L)):
        raise InvalidInput("loss vector must be nonempty and finite")
    return L


@dataclass(frozen=True)
class AmbiguitySpec:
    radius: float
    kind: str = "cre"

    def __post_init__(self):
        try:
            r = float(self.radius)
        except (TypeError, ValueError):
            raise InvalidInput(f"radius must be a number, got {self.radius!r}") from None
        if not (np.isfinite(r) and r > 0):
            raise InvalidInput(f"radius must satisfy r > 0, got {self.radius}")
        key = str(self.kind).lower().replace("_", "").replace("-", "")
        if key not in _KIND_ALIASES:
            raise InvalidInput(f"kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "radius", r)
        object.__setattr__(self, "kind", _KIND_ALIASES[key])


@dataclass(frozen=True)
class FWConfig:
    gap_tol: float = 1e-6
    max_iters: int = 10_000
    line_search_tol: float = 1e-8
    n_scan: int = 16
    oracle: SGDConfig = field(default_factory=SGDConfig)
    warn: bool = True
    starts: str = "center"

    def __post_init__(self):
        if self.starts not in ("center", "columns"):
            raise InvalidInput("starts must be 'center' or 'columns'")
        if not self.gap_tol > 0:
            raise InvalidInput("gap_tol must be positive")
        if self.max_iters < 1:
            raise InvalidInput("max_iters must be a positive integer")
        if not self.line_search_tol > 0:
            raise InvalidInput("line_search_tol must be positive")
        if self.n_scan < 2:
            raise InvalidInput("n_scan must be at least 2")


@dataclass
class WorstCaseSolution:
    """Result of a worst-case solve.

    ``trace`` holds one (objective, gap, step) triple per iteration, where the
    objective and gap are evaluated at the iterate before the step.
    """

    value: float
    P_star: np.ndarray
    final_gap: float
    iterations: int
    trace: list = field(default_factory=list)
    converged: bool = True
    status: str = "converged"

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "gap": self.final_gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "status": self.status,
            "P_star": np.asarray(self.P_star).tolist(),
            "trace": [list(map(float, t)) for t in self.trace],
        }


def psi(loss, P) -> float:
    """<loss, pi(P)> from one solve with A_d(P)."""
    L = as_loss(loss)
    P = np.ascontiguousarray(P, dtype=float)
    if P.shape != (L.size, L.size):
        raise InvalidInput("loss and P dimensions disagree")
    val, ok = _kernels.psi_value(L, P)
    if not ok:
        raise SingularSystem("A_d(P) is singular")
    return float(val)


def grad_psi(loss, P) -> np.ndarray:
    """Gradient of Psi with respect to all entries of P (last column is zero)."""
    L = as_loss(loss)
    P = np.ascontiguousarray(P, dtype=float)
    if P.shape != (L.size, L.size):
        raise InvalidInput("loss and P dimensions disagree")
    _, G, _, ok = _kernels.psi_and_grad(L, P)
    if not ok:
        raise SingularSystem("A_d(P) is singular")
    return G


def line_search(loss, P, S, tol: float = 1e-8, n_scan: int = 16) -> float:
    """Step in [0, 1] maximizing Psi on the segment from P to S."""
    L = as_loss(loss)
    g, _ = _kernels.line_search(
        L, np.ascontiguousarray(P, dtype=float), np.ascontiguousarray(S, dtype=float), tol, n_scan
    )
    return float(g)


def entropy_oracle(pi_prime, P_prime, r: float, cfg: SGDConfig | None = None) -> LinearOracle:
    cfg = cfg or SGDConfig()

    def oracle(C):
        sol = solve_dual(OracleProblem(C, pi_prime, P_prime, r), cfg)
        return sol.S, sol.duality_gap

    return oracle


def _oracle_for(spec: AmbiguitySpec, pi_prime, P_prime, cfg: FWConfig) -> LinearOracle:
    if spec.kind == "cre":
        return entropy_oracle(pi_prime, P_prime, spec.radius, cfg.oracle)
    if spec.kind == "wass":
        from .baselines import wasserstein_oracle

        return wasserstein_oracle(P_prime, spec.radius)
    raise InvalidInput("the 'kl' kind has no transition-matrix form; use baselines.kl_dro_value")


def frank_wolfe_worst_case(
    loss,
    theta_prime,
    spec: AmbiguitySpec,
    cfg: FWConfig | None = None,
    *,
    oracle: LinearOracle | None = None,
    P0=None,
) -> WorstCaseSolution:
    """Frank-Wolfe ascent on Psi over the ambiguity set around theta'.

    Starts at P_theta', which is always feasible, or at ``P0``.  With
    ``cfg.starts == "columns"`` it also restarts from one oracle point per
    state and keeps the best run, since Psi is not concave.  Stops when the gap
    <S - P, grad Psi> drops to ``gap_tol`` (plus the oracle's own
    suboptimality bound) or after ``max_iters`` steps, in which case the
    last iterate is returned with ``converged=False``.
    """
    cfg = cfg or FWConfig()
    L = as_loss(loss)
    th = as_doublet(theta_prime)
    if th.shape != (L.size, L.size):
        raise InvalidInput("loss and doublet dimensions disagree")
    if not np.all(th > 0):
        raise InvalidInput("theta' must be strictly positive; apply make_positive first")
    pi_p, P_p = doublet_to_chain(th)
    if oracle is None:
        oracle = _oracle_for(spec, pi_p, P_p, cfg)
    if P0 is not None:
        starts = [check_transition(P0, tol=1e-9)]
    else:
        starts = [P_p]
        if cfg.starts == "columns":
            starts += _column_starts(oracle, L.size)
    best = None
    for P_start in starts:
        run = _fw_run(L, np.ascontiguousarray(P_start, dtype=float), oracle, cfg)
        if best is None or run[0] > best[0]:
            best = run
    value, P, trace, gap, status = best
    converged = status == "converged"
    if not converged and cfg.warn:
        warnings.warn(
            f"Frank-Wolfe stopped ({status}) with gap {gap:.3g} > {cfg.gap_tol:.3g}",
            NotConvergedWarning,
            stacklevel=2,
        )
    return WorstCaseSolution(
        value=value,
        P_star=P,
        final_gap=gap,
        iterations=len(trace),
        trace=trace,
        converged=converged,
        status=status,
    )


def _column_starts(oracle: LinearOracle, d: int) -> list[np.ndarray]:
    """Feasible models pushing as much mass as the set allows into each state.

    Psi is not concave in P, and from the center Frank-Wolfe can settle on a
    local maximum when the estimate is sparse; the adversary's better optima
    typically make one state nearly absorbing, which these points seed.
    """
    out = []
    for j in range(d):
        C = np.zeros((d, d))
        C[:, j] = 1.0
        out.append(oracle(C)[0])
    return out


def _fw_run(L, P, oracle: LinearOracle, cfg: FWConfig):
    trace = []
    gap = np.inf
    status = "max_iters"
    for m in range(cfg.max_iters):
        val, G, _, ok = _kernels.psi_and_grad(L, P)
        if not ok:
            raise SingularSystem(f"A_d(P) became singular at iteration {m}")
        S, slack = oracle(G)
        gap = float(np.sum((S - P) * G))
        if gap <= cfg.gap_tol + slack:
            trace.append((val, gap, 0.0))
            status = "converged"
            break
        gamma, _ = _kernels.line_search(L, P, np.ascontiguousarray(S), cfg.line_search_tol, cfg.n_scan)
        trace.append((val, gap, gamma))
        if gamma == 0.0:
            status = "stalled"
            break
        P = P + gamma * (S - P)
    return psi(L, P), P, trace, gap, status


def predictor(
    loss,
    theta_prime_raw,
    spec: AmbiguitySpec,
    cfg: FWConfig | None = None,
    delta: float = 1e-6,
) -> WorstCaseSolution:
    """Distributionally robust predictor for a raw (possibly sparse) estimate.

    After positivization the center P_theta' is always feasible, so the
    fallback for an empty ambiguity set never applies.
    """
    th = make_positive(theta_prime_raw, delta)
    assert np.all(th > 0)
    if spec.kind == "kl":
        from .baselines import kl_dro_solution

        return kl_dro_solution(loss, th.sum(axis=1), spec.radius)
    return frank_wolfe_worst_case(loss, th, spec, cfg)


def nominal_value(loss, theta) -> float:
    """Model-based predictor c(x, theta) = <loss, row marginals of theta>."""
    return float(as_loss(loss) @ as_doublet(theta).sum(axis=1))
