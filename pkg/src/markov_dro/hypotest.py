"""Deciding between two Markov chains from one trajectory.

The test predicts model 1 when the empirical doublet is strictly closer to
theta1 than to theta2 in conditional relative entropy, and model 2 otherwise.
Because D_c(h || t1) - D_c(h || t2) = sum_ij h_ij log(P2_ij / P1_ij) is linear
in h, the set of doublets misclassified under model 1 is a half-space, and
the decay rate of the type I error is a convex program over balanced
doublets.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .errors import InvalidInput, TooLarge
from .markov_core import (
    DoubletMatrix,
    as_doublet,
    conditional_relative_entropy,
    doublet_to_chain,
)

MAX_RATE_DIM = 3


@dataclass(frozen=True)
class HypothesisPair:
    theta1: np.ndarray
    theta2: np.ndarray

    def __post_init__(self):
        t1 = DoubletMatrix(self.theta1)
        t2 = DoubletMatrix(self.theta2)
        if t1.d != t2.d:
            raise InvalidInput("the two models have different state counts")
        for name, t in (("theta1", t1), ("theta2", t2)):
            if not t.in_model_set():
                raise InvalidInput(f"{name} must be strictly positive with balanced marginals")
        object.__setattr__(self, "theta1", t1.entries)
        object.__setattr__(self, "theta2", t2.entries)

    @property
    def d(self) -> int:
        return self.theta1.shape[0]

    @property
    def log_ratio(self) -> np.ndarray:
        """log P2 - log P1 entrywise; the test statistic's coefficients."""
        _, P1 = doublet_to_chain(self.theta1)
        _, P2 = doublet_to_chain(self.theta2)
        return np.log(P2) - np.log(P1)

    def swapped(self) -> "HypothesisPair":
        return HypothesisPair(self.theta2, self.theta1)


@dataclass(frozen=True)
class ErrorRates:
    alpha_hat: float
    beta_hat: float
    T: int
    trials: int
    method: str = "plain"


def coin_pair(epsilon: float) -> HypothesisPair:
    """The two Markov coins with flip parameter epsilon."""
    e = float(epsilon)
    if not 0 < e < 1:
        raise InvalidInput("epsilon must lie in (0, 1)")
    t1 = np.array([[(1 - e) / 2, e / 2], [e / 2, (1 - e) / 2]])
    t2 = np.array([[e * e, e * (1 - e)], [e * (1 - e), (1 - e) ** 2]])
    return HypothesisPair(t1, t2)


def coin_entropy(epsilon: float) -> float:
    """Closed form of D_c(theta2 || theta1) for the coin pair."""
    e = float(epsilon)
    if not 0 < e < 1:
        raise InvalidInput("epsilon must lie in (0, 1)")
    return e * (1 - 2 * e) * np.log((1 - e) / e)


def statistic(theta_hat, pair: HypothesisPair) -> float:
    """D_c(theta_hat || theta1) - D_c(theta_hat || theta2) for positive models."""
    return float(np.sum(as_doublet(theta_hat) * pair.log_ratio))


def decide(theta_hat, pair: HypothesisPair) -> int:
    """1 if theta_hat is strictly closer to theta1, else 2 (ties go to 2)."""
    th = as_doublet(theta_hat)
    if th.shape != pair.theta1.shape:
        raise InvalidInput("estimate and models have different dimensions")
    d1 = conditional_relative_entropy(th, pair.theta1)
    d2 = conditional_relative_entropy(th, pair.theta2)
    if np.isfinite(d1) and np.isfinite(d2):
        # the linear form is exact on ties that the two logs would blur
        return 1 if statistic(th, pair) < 0 else 2
    return 1 if d1 < d2 else 2


def _counts(P, xi0: int, T: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    # one child stream per trial: adding trials never changes earlier ones
    children = rng.spawn(trials)
    U = np.vstack([g.random(T) for g in children])
    return _kernels.walk_counts(np.cumsum(P, axis=1), int(xi0), U)


def _misclassified(counts: np.ndarray, pair: HypothesisPair, truth: int) -> np.ndarray:
    stat = np.einsum("nij,ij->n", counts, pair.log_ratio)
    return stat >= 0 if truth == 1 else stat < 0


def error_rates_mc(
    pair: HypothesisPair, T: int, trials: int, rng: np.random.Generator, xi0: int = 0
) -> ErrorRates:
    """Plain Monte Carlo estimates of the type I and type II error rates."""
    if T < 1 or trials < 1:
        raise InvalidInput("T and trials must be >= 1")
    r1, r2 = rng.spawn(2)
    out = []
    for truth, theta, g in ((1, pair.theta1, r1), (2, pair.theta2, r2)):
        _, P = doublet_to_chain(theta)
        out.append(float(_misclassified(_counts(P, xi0, T, trials, g), pair, truth).mean()))
    return ErrorRates(out[0], out[1], T, trials, "plain")


def error_rates_is(
    pair: HypothesisPair, T: int, trials: int, rng: np.random.Generator, xi0: int = 0
) -> ErrorRates:
    """Importance-sampled error rates for rare-event regimes.

    Trajectories are drawn from the chain of the rate-optimal boundary model
    and reweighted by the path likelihood ratio, which depends on the path
    only through its transition counts.
    """
    if T < 1 or trials < 1:
        raise InvalidInput("T and trials must be >= 1")
    r1, r2 = rng.spawn(2)
    out = []
    for truth, p, g in ((1, pair, r1), (2, pair.swapped(), r2)):
        _, P_true = doublet_to_chain(p.theta1)
        _, theta_star = _rate_problem(p, 40)
        theta_star = 0.999 * theta_star + 0.001 * p.theta1  # keep the proposal positive
        _, Q = doublet_to_chain(theta_star)
        counts = _counts(Q, xi0, T, trials, g)
        logw = np.einsum("nij,ij->n", counts, np.log(P_true) - np.log(Q))
        hit = _misclassified(counts, pair, truth)
        out.append(float(np.mean(np.where(hit, np.exp(logw), 0.0))))
    return ErrorRates(out[0], out[1], T, trials, "importance")


def _balanced_basis(d: int):
    """Equality constraints for d x d doublets: balance and unit total."""
    rows = []
    for i in range(d - 1):
        M = np.zeros((d, d))
        M[i, :] += 1
        M[:, i] -= 1
        rows.append(M.ravel())
    rows.append(np.ones(d * d))
    return np.array(rows), np.r_[np.zeros(d - 1), 1.0]


def _rate_problem(pair: HypothesisPair, grid_resolution: int) -> tuple[float, np.ndarray]:
    """min D_c(h || theta1) over balanced h with D_c(h||theta1) >= D_c(h||theta2)."""
    d = pair.d
    if d > MAX_RATE_DIM:
        raise TooLarge(f"decay_rate is limited to d <= {MAX_RATE_DIM}")
    if np.allclose(pair.theta1, pair.theta2, atol=1e-15):
        return 0.0, pair.theta1.copy()
    A, b = _balanced_basis(d)
    ell = pair.log_ratio.ravel()

    def f(v):
        return conditional_relative_entropy(np.maximum(v, 0).reshape(d, d), pair.theta1)

    # coarse search: mixtures theta1 -> theta2 and a grid of balanced doublets
    cands = []
    for t in np.linspace(0, 1, 4 * grid_resolution + 1):
        cands.append(((1 - t) * pair.theta1 + t * pair.theta2).ravel())
    cands.extend(_balanced_grid(d, grid_resolution))
    best_v, best_f = None, np.inf
    for v in cands:
        if v @ ell >= 0:
            fv = f(v)
            if fv < best_f:
                best_v, best_f = v, fv
    if best_v is None:  # pragma: no cover - theta2 itself is always feasible
        best_v = pair.theta2.ravel()
        best_f = f(best_v)
    cons = [
        {"type": "eq", "fun": lambda v: A @ v - b, "jac": lambda v: A},
        {"type": "ineq", "fun": lambda v: np.array([v @ ell]), "jac": lambda v: ell[None, :]},
    ]
    with warnings.catch_warnings():
        # SLSQP clips steps to the bounds and says so; the result is checked below
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(
            f,
            np.maximum(best_v, 1e-9),
            method="SLSQP",
            bounds=[(1e-12, 1.0)] * (d * d),
            constraints=cons,
            options={"ftol": 1e-14, "maxiter": 500},
        )
    v = np.maximum(res.x, 0)
    v /= v.sum()
    if v @ ell >= -1e-12 and np.max(np.abs(A[:-1] @ v)) < 1e-9 and f(v) < best_f:
        best_v, best_f = v, f(v)
    return float(best_f), best_v.reshape(d, d)


def _balanced_grid(d: int, k: int):
    """Balanced doublets on a lattice with spacing 1/k."""
    if d == 2:
        out = []
        for i in range(k + 1):
            for j in range(0, (k - i) // 2 + 1):
                l = k - i - 2 * j
                out.append(np.array([i, j, j, l], dtype=float) / k)
        return out
    # d == 3: every balanced matrix is a diagonal part plus a circulation,
    # which decomposes into 2-cycles and the two 3-cycles
    k = min(k, 12)
    cyc = []
    for a, c in ((0, 1), (0, 2), (1, 2)):
        M = np.zeros((3, 3))
        M[a, c] = M[c, a] = 1
        cyc.append(M / 2)
    for perm in ((1, 2, 0), (2, 0, 1)):
        M = np.zeros((3, 3))
        M[np.arange(3), perm] = 1
        cyc.append(M / 3)
    for i in range(3):
        M = np.zeros((3, 3))
        M[i, i] = 1
        cyc.append(M)
    out = []
    _compositions(k, len(cyc), [], out)
    return [sum(c * m for c, m in zip(comp, cyc)).ravel() / k for comp in out]


def _compositions(k, parts, prefix, out):
    if parts == 1:
        out.append(prefix + [k])
        return
    for i in range(k + 1):
        _compositions(k - i, parts - 1, prefix + [i], out)


def decay_rate(pair: HypothesisPair, grid_resolution: int = 200) -> float:
    """Exponential decay rate of the type I error of the test.

    Minimizes D_c(h || theta1) over balanced doublets h that the test assigns
    to model 2, by a lattice search followed by SLSQP refinement.  Only
    balanced h can be limits of empirical doublets, so unbalanced ones are
    excluded.  Limited to d <= 3.
    """
    if grid_resolution < 1:
        raise InvalidInput("grid_resolution must be positive")
    return _rate_problem(pair, grid_resolution)[0]
