"""Comparison methods: sample average, KL-DRO on the stationary law, and
row-wise 1-Wasserstein DRO.

All of them, together with the conditional-relative-entropy predictor, are
reachable through :func:`method_value` so experiment code can loop over
method names.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import InvalidInput, LPFailure
from .markov_core import as_doublet, doublet_to_chain, make_positive
from .oracle import single_row_oracle
from .wc_solver import (
    AmbiguitySpec,
    FWConfig,
    LinearOracle,
    WorstCaseSolution,
    as_loss,
    frank_wolfe_worst_case,
    predictor,
)

METHODS = ("cre", "kl", "wass", "saa")
W1_FEAS_TOL = 1e-8


def saa_value(loss, theta_hat) -> float:
    """Sample average: <loss, row marginals of theta_hat>."""
    L = as_loss(loss)
    th = as_doublet(theta_hat)
    if th.shape != (L.size, L.size):
        raise InvalidInput("loss and doublet dimensions disagree")
    return float(L @ th.sum(axis=1))


def kl_dro_solution(loss, pi_hat, r: float) -> WorstCaseSolution:
    """max <loss, p> over the simplex with D(pi_hat || p) <= r.

    The maximizer p is reported as the rank-one transition matrix whose
    rows all equal p; its stationary distribution is p itself.
    """
    L = as_loss(loss)
    pi = np.asarray(pi_hat, dtype=float).reshape(-1)
    if pi.shape != L.shape:
        raise InvalidInput("loss and pi_hat dimensions disagree")
    if np.any(pi <= 0) or abs(pi.sum() - 1) > 1e-9:
        raise InvalidInput("pi_hat must be a strictly positive probability vector")
    AmbiguitySpec(r, "kl")
    p, value = single_row_oracle(L, pi, r)
    return WorstCaseSolution(
        value=float(L @ p), P_star=np.tile(p, (L.size, 1)), final_gap=0.0, iterations=1
    )


def kl_dro_value(loss, pi_hat, r: float) -> float:
    return kl_dro_solution(loss, pi_hat, r).value


def w1_distance(p, q) -> float:
    """1-Wasserstein distance for ground cost |j - k| on states 0..d-1."""
    diff = np.cumsum(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    return float(np.abs(diff[:-1]).sum())


@dataclass(frozen=True)
class RowWassersteinOracleProblem:
    C: np.ndarray
    P_prime: np.ndarray
    radius: float

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        Pp = np.asarray(self.P_prime, dtype=float)
        if C.ndim != 2 or C.shape != Pp.shape:
            raise InvalidInput("C and P' must have the same square shape")
        if not (np.isfinite(self.radius) and self.radius >= 0):
            raise InvalidInput("radius must be >= 0")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "P_prime", Pp)


class _RowLP:
    """Transport-plan LP for one row, sharing constraint matrices across rows.

    Variables g_jk >= 0 move mass from state j of p' to state k of p:
        sum_k g_jk = p'_j,   sum_jk |j - k| g_jk <= r,
    maximizing sum_k c_k sum_j g_jk.
    """

    def __init__(self, d: int):
        self.d = d
        j, k = np.divmod(np.arange(d * d), d)
        self.k = k
        self.A_eq = sparse.csr_matrix(
            (np.ones(d * d), (j, np.arange(d * d))), shape=(d, d * d)
        )
        self.A_ub = np.abs(j - k).astype(float)[None, :]

    def solve(self, c, p_prime, r):
        res = linprog(
            -np.asarray(c)[self.k],
            A_ub=self.A_ub,
            b_ub=[r],
            A_eq=self.A_eq,
            b_eq=p_prime,
            bounds=(0, None),
            method="highs",
        )
        if res.status != 0:
            raise LPFailure(f"transport LP failed: {res.message}")
        p = np.bincount(self.k, weights=np.maximum(res.x, 0.0), minlength=self.d)
        return p / p.sum()


def wasserstein_row_oracle(problem: RowWassersteinOracleProblem) -> np.ndarray:
    """Row-by-row maximizer of <C, S> over the product of W1 balls."""
    C, Pp, r = problem.C, problem.P_prime, problem.radius
    d = C.shape[1]
    if r == 0:
        return Pp.copy()
    lp = _RowLP(d)
    return np.vstack([lp.solve(C[i], Pp[i], r) for i in range(C.shape[0])])


def wasserstein_oracle(P_prime, r: float) -> LinearOracle:
    Pp = np.asarray(P_prime, dtype=float)
    lp = _RowLP(Pp.shape[1])

    def oracle(C):
        S = np.vstack([lp.solve(C[i], Pp[i], r) for i in range(C.shape[0])])
        return S, 1e-9 * max(1.0, float(np.abs(C).max()))

    return oracle


def wasserstein_dro_value(loss, theta_hat, r: float, fw_cfg: FWConfig | None = None) -> WorstCaseSolution:
    """Worst case of Psi over P with every row within W1 distance r of P_theta_hat."""
    return frank_wolfe_worst_case(loss, theta_hat, AmbiguitySpec(r, "wass"), fw_cfg)


def method_value(
    method: str, loss, theta_raw, r: float, cfg: FWConfig | None = None, delta: float = 1e-6
) -> float:
    """In-sample objective of a data-driven method for one loss vector.

    ``saa`` uses the raw estimate; the robust methods positivize it first.
    """
    if method == "saa":
        return saa_value(loss, theta_raw)
    if method not in METHODS:
        raise InvalidInput(f"method must be one of {METHODS}, got {method!r}")
    return predictor(loss, theta_raw, AmbiguitySpec(r, method), cfg, delta).value


def worst_case_solution(
    method: str, loss, theta_raw, r: float, cfg: FWConfig | None = None, delta: float = 1e-6
) -> WorstCaseSolution:
    """Like :func:`method_value` but returns the full solution object."""
    if method == "saa":
        th = as_doublet(theta_raw)
        pi, P = doublet_to_chain(make_positive(th, delta))
        return WorstCaseSolution(saa_value(loss, th), P, 0.0, 0)
    if method not in METHODS:
        raise InvalidInput(f"method must be one of {METHODS}, got {method!r}")
    return predictor(loss, theta_raw, AmbiguitySpec(r, method), cfg, delta)
