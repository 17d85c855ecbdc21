"""Linearized direction-finding subproblem and its low-dimensional dual.

For a gradient matrix C, anchor weights alpha = pi' and anchor rows P', the
oracle solves

    max  <C, S>   over row-stochastic S
    s.t. sum_i alpha_i D(P'_i. || S_i.) <= r.

Its dual lives in d variables eta (one per row) plus a scalar multiplier
lambda that can be minimized out in closed form:

    lambda*(eta) = exp( sum_ij alpha_i P'_ij log((eta_i - C_ij) / alpha_i) - r )
    Q(eta)       = sum_i eta_i - lambda*(eta),

and a primal maximizer is S_ij = lambda alpha_i P'_ij / (eta_i - C_ij).

Three solvers are offered.  ``exact`` (default) fixes lambda, solves the d
decoupled scalar row equations and root-finds lambda on the entropy
constraint; it is accurate to machine precision in a few dozen steps.
``full_gradient`` and ``per_coordinate`` are projected gradient descent on Q
over the box [eta_lo, eta_hi] with step K / sqrt(N), as in the classical
subgradient scheme.  They are kept for comparison; Q is badly conditioned
near its minimizer, so they need many steps for tight tolerances.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateBox, DomainViolation, InvalidInput

log = logging.getLogger(__name__)

MODES = ("exact", "full_gradient", "per_coordinate")
DERIVATIVES = ("exact", "printed")
ROW_VIOLATION_LIMIT = 1e-4


@dataclass(frozen=True)
class OracleProblem:
    """Data of one oracle call: gradient C, weights pi', anchor rows P', radius r."""

    C: np.ndarray
    pi_prime: np.ndarray
    P_prime: np.ndarray
    radius: float

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        a = np.asarray(self.pi_prime, dtype=float).reshape(-1)
        Pp = np.asarray(self.P_prime, dtype=float)
        if C.ndim != 2 or Pp.shape != C.shape or a.shape[0] != C.shape[0]:
            raise InvalidInput(
                f"shape mismatch: C {C.shape}, pi' {a.shape}, P' {Pp.shape}"
            )
        if not np.all(np.isfinite(C)):
            raise InvalidInput("C must be finite")
        if not (np.all(a > 0) and np.all(Pp > 0)):
            raise InvalidInput("pi' and P' must be strictly positive")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise InvalidInput(f"radius must be > 0, got {self.radius}")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "pi_prime", a)
        object.__setattr__(self, "P_prime", Pp)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def d(self) -> int:
        return self.C.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return self.pi_prime[:, None] * self.P_prime


@dataclass(frozen=True)
class DualBox:
    lower: np.ndarray
    upper: np.ndarray

    def clamp(self, eta: np.ndarray) -> np.ndarray:
        # the lower face is outside the open domain; stay a hair inside it
        floor = self.lower + 1e-12 * (self.upper - self.lower)
        return np.minimum(np.maximum(eta, floor), self.upper)

    def contains(self, eta, tol: float = 1e-9) -> bool:
        return bool(np.all(eta >= self.lower - tol) and np.all(eta <= self.upper + tol))


@dataclass(frozen=True)
class SGDConfig:
    """Settings for :func:`solve_dual`.

    ``K`` is the step constant of the projected gradient schemes; when None it
    defaults to the largest box width.
    """

    N: int = 10_000
    K: float | None = None
    mode: str = "exact"
    tol: float = 1e-6
    derivative: str = "exact"
    rtol: float = 1e-12

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInput(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.derivative not in DERIVATIVES:
            raise InvalidInput(f"derivative must be one of {DERIVATIVES}")
        if self.N < 1:
            raise InvalidInput("N must be >= 1")
        if self.K is not None and not self.K > 0:
            raise InvalidInput("K must be positive")
        if not self.tol >= 0:
            raise InvalidInput("tol must be nonnegative")


@dataclass
class OracleSolution:
    S: np.ndarray
    eta_star: np.ndarray
    lambda_star: float
    dual_value: float
    primal_value: float
    entropy: float
    converged: bool = True
    iterations: int = 0
    row_violation: float = 0.0
    trace: list = field(default_factory=list)

    @property
    def duality_gap(self) -> float:
        return max(self.dual_value - self.primal_value, 0.0)


def dual_bounds(problem: OracleProblem) -> DualBox:
    """Box known to contain every dual optimum."""
    C, Pp, r, d = problem.C, problem.P_prime, problem.radius, problem.d
    lower = C.max(axis=1)
    er = np.exp(-r)
    head = (d * C.max() - er * np.sum(C * Pp)) / (1.0 - er)
    upper = head - (lower.sum() - lower)
    # widths at rounding level mean the box has collapsed to a point
    tol = 1e-12 * d * max(1.0, float(np.abs(C).max())) / (1.0 - er)
    if np.any(upper - lower <= tol):
        raise DegenerateBox(
            "dual box is empty or a point (upper <= lower); the objective is "
            "constant on the feasible set or r is too small"
        )
    return DualBox(lower, upper)


def _check_domain(eta, problem: OracleProblem) -> np.ndarray:
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if eta.shape[0] != problem.C.shape[0]:
        raise InvalidInput("eta has the wrong length")
    t = eta[:, None] - problem.C
    if np.any(t <= 0):
        raise DomainViolation("eta_i must exceed max_j C_ij for every row")
    return t


def lambda_star(eta, problem: OracleProblem) -> float:
    """Minimizer over lambda >= 0 of the dual function at fixed eta."""
    t = _check_domain(eta, problem)
    a = problem.pi_prime[:, None]
    return float(np.exp(np.sum(problem.weights * np.log(t / a)) - problem.radius))


def dual_objective(eta, problem: OracleProblem) -> float:
    """Q(eta) = sum(eta) - lambda*(eta)."""
    lam = lambda_star(eta, problem)
    return float(np.sum(eta) - lam)


def dual_function(lam: float, eta, problem: OracleProblem) -> float:
    """The two-block dual J(lambda, eta) before minimizing out lambda."""
    t = _check_domain(eta, problem)
    if lam == 0:
        return float(np.sum(eta))
    a = problem.pi_prime[:, None]
    r = problem.radius
    return float(
        lam * (r - 1.0) + np.sum(eta) + lam * np.sum(problem.weights * np.log(lam * a / t))
    )


def dual_gradient(eta, problem: OracleProblem, derivative: str = "exact") -> np.ndarray:
    """Gradient of Q.

    ``exact`` differentiates through lambda*(eta).  ``printed`` is the
    simplified expression d - alpha_i sum_j P'_ij / (eta_i - C_ij), kept only
    for comparison; it is not the gradient of Q.
    """
    t = _check_domain(eta, problem)
    inner = np.sum(problem.P_prime / t, axis=1)
    if derivative == "exact":
        lam = lambda_star(eta, problem)
        return 1.0 - lam * problem.pi_prime * inner
    if derivative == "printed":
        return problem.d - problem.pi_prime * inner
    raise InvalidInput(f"unknown derivative variant {derivative!r}")


def recover_primal(eta, problem: OracleProblem, lam: float | None = None) -> np.ndarray:
    """S_ij = lambda alpha_i P'_ij / (eta_i - C_ij), not row-normalized."""
    t = _check_domain(eta, problem)
    if lam is None:
        lam = lambda_star(eta, problem)
    return lam * problem.weights / t


def weighted_entropy(S, problem: OracleProblem) -> float:
    """sum_i alpha_i D(P'_i. || S_i.) for row-stochastic S (inf off support)."""
    S = np.asarray(S, dtype=float)
    Pp = problem.P_prime
    if np.any(S <= 0):
        return float("inf")
    delta = S / Pp - 1.0
    return float(np.sum(problem.weights * -np.log1p(delta)))


def primal_value(S, problem: OracleProblem) -> float:
    return float(np.sum(problem.C * S))


def _normalize_rows(S: np.ndarray) -> tuple[np.ndarray, float]:
    rows = S.sum(axis=1)
    viol = float(np.max(np.abs(rows - 1.0)))
    return S / rows[:, None], viol


def pull_into_ball(S: np.ndarray, problem: OracleProblem) -> np.ndarray:
    """Largest step from P' toward S that keeps the entropy within r.

    The entropy is convex in S and zero at P', so bisection on the mixing
    weight finds the feasible point on the segment closest to S.
    """
    r = problem.radius
    if weighted_entropy(S, problem) <= r:
        return S
    Pp = problem.P_prime
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if weighted_entropy(Pp + mid * (S - Pp), problem) <= r:
            lo = mid
        else:
            hi = mid
    return Pp + lo * (S - Pp)


def _finish(problem, S_raw, eta, lam, dual_value, iterations, converged, trace):
    S, viol = _normalize_rows(S_raw)
    if viol > ROW_VIOLATION_LIMIT:
        log.warning("oracle rows off by %.3g before renormalization", viol)
        converged = False
    S = pull_into_ball(S, problem)
    pv = primal_value(S, problem)
    ent = weighted_entropy(S, problem)
    return OracleSolution(
        S=S,
        eta_star=eta,
        lambda_star=float(lam),
        dual_value=float(dual_value),
        primal_value=pv,
        entropy=ent,
        converged=converged,
        iterations=iterations,
        row_violation=viol,
        trace=trace,
    )


def _solve_exact(problem: OracleProblem, rtol: float) -> OracleSolution:
    S, eta, s, lam, status = _kernels.oracle_exact(
        np.ascontiguousarray(problem.C),
        problem.pi_prime,
        np.ascontiguousarray(problem.P_prime),
        problem.radius,
        rtol,
    )
    if status < 0:
        raise ArithmeticError("could not bracket the entropy multiplier")
    if status == 2:
        return _finish(problem, S, eta, 0.0, float(eta.sum()), 0, True, [])
    # dual function evaluated through t = eta - C, which stays accurate even
    # when eta rounds onto the row maxima
    cmax = problem.C.max(axis=1)
    t = s[:, None] + (cmax[:, None] - problem.C)
    a = problem.pi_prime[:, None]
    r = problem.radius
    dv = lam * (r - 1.0) + eta.sum() + lam * np.sum(problem.weights * np.log(lam * a / t))
    return _finish(problem, S, eta, lam, dv, 1, True, [])


def _projected_gradient(problem: OracleProblem, cfg: SGDConfig) -> OracleSolution:
    try:
        box = dual_bounds(problem)
    except DegenerateBox:
        # every feasible S has the same value, so the anchor itself is optimal
        S = problem.P_prime.copy()
        v = primal_value(S, problem)
        return OracleSolution(S, problem.C.max(axis=1), 0.0, v, v, 0.0)
    width = box.upper - box.lower
    K = float(np.max(width)) if cfg.K is None else cfg.K
    step = K / np.sqrt(cfg.N)
    eta = box.clamp(box.lower + 0.1 * width)
    best_eta, best_q = eta.copy(), dual_objective(eta, problem)
    trace = []
    it = 0
    check_every = max(1, cfg.N // 100)
    converged = False
    for it in range(1, cfg.N + 1):
        if cfg.mode == "full_gradient":
            eta = box.clamp(eta - step * dual_gradient(eta, problem, cfg.derivative))
        else:
            for i in range(eta.shape[0]):
                g = dual_gradient(eta, problem, cfg.derivative)[i]
                eta[i] = min(max(eta[i] - step * g, box.lower[i] + 1e-12 * width[i]), box.upper[i])
        q = dual_objective(eta, problem)
        if q < best_q:
            best_q, best_eta = q, eta.copy()
        if it % check_every == 0 or it == cfg.N:
            S, _ = _normalize_rows(recover_primal(best_eta, problem))
            lb = primal_value(pull_into_ball(S, problem), problem)
            gap = best_q - lb
            trace.append((it, best_q, gap))
            if gap <= cfg.tol:
                converged = True
                break
    lam = lambda_star(best_eta, problem)
    sol = _finish(
        problem, recover_primal(best_eta, problem, lam), best_eta, lam, best_q, it, converged, trace
    )
    if sol.duality_gap > cfg.tol:
        sol.converged = False
    return sol


def solve_dual(problem: OracleProblem, cfg: SGDConfig | None = None) -> OracleSolution:
    """Solve the oracle subproblem and return a feasible primal maximizer.

    The returned S is always row-stochastic and inside the entropy ball.
    ``converged`` is False when the duality gap exceeds ``cfg.tol`` or the
    raw recovered rows missed unit sums by more than 1e-4.
    """
    cfg = cfg or SGDConfig()
    if cfg.mode == "exact":
        return _solve_exact(problem, cfg.rtol)
    return _projected_gradient(problem, cfg)


def single_row_oracle(c, p_prime, r: float, rtol: float = 1e-12) -> tuple[np.ndarray, float]:
    """max <c, p> over the simplex subject to D(p' || p) <= r."""
    prob = OracleProblem(
        np.asarray(c, dtype=float)[None, :], np.ones(1), np.asarray(p_prime, dtype=float)[None, :], r
    )
    sol = _solve_exact(prob, rtol)
    return sol.S[0], sol.primal_value
