"""Finite-state Markov chain algebra.

Doublet matrices theta (joint law of consecutive states), transition matrices
P, stationary distributions pi, trajectory simulation and estimation, and the
conditional relative entropy

    D_c(theta' || theta) = sum_i pi'_i  KL(P'_i. || P_i.).

States are 0-based everywhere inside the library.  The 1-based convention of
the file formats is handled in :mod:`markov_dro.io`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import InvalidInput, SingularSystem, ZeroRowMarginal

SUM_TOL = 1e-12
BALANCE_TOL = 1e-12
DEFAULT_DELTA = 1e-6


@dataclass(frozen=True)
class DoubletMatrix:
    """A d x d nonnegative matrix summing to one."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InvalidInput(f"doublet must be a square matrix, got shape {a.shape}")
        if np.any(~np.isfinite(a)) or np.any(a < 0):
            raise InvalidInput("doublet entries must be finite and nonnegative")
        if abs(a.sum() - 1.0) > SUM_TOL * max(1, a.size):
            raise InvalidInput(f"doublet entries must sum to 1 (got {a.sum():.17g})")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def is_balanced(self, tol: float = BALANCE_TOL) -> bool:
        return bool(np.max(np.abs(self.entries.sum(1) - self.entries.sum(0))) <= tol)

    def is_strictly_positive(self) -> bool:
        return bool(np.all(self.entries > 0))

    def in_model_set(self) -> bool:
        """Membership in the open model set: positive and balanced."""
        return self.is_strictly_positive() and self.is_balanced()


@dataclass(frozen=True)
class Trajectory:
    """A path xi_0, xi_1, ..., xi_T with 0-based states."""

    initial_state: int
    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "initial_state", int(self.initial_state))
        if s.size < 1:
            raise InvalidInput("trajectory needs at least one transition")

    @property
    def T(self) -> int:
        return int(self.states.size)

    @property
    def path(self) -> np.ndarray:
        return np.concatenate(([self.initial_state], self.states))

    def check_states(self, d: int) -> None:
        p = self.path
        if p.min() < 0 or p.max() >= d:
            raise InvalidInput(f"trajectory states must lie in 0..{d - 1}")


def as_doublet(theta) -> np.ndarray:
    return np.array(theta.entries if isinstance(theta, DoubletMatrix) else theta, dtype=float)


def check_transition(P, tol: float = SUM_TOL) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidInput(f"transition matrix must be square, got shape {P.shape}")
    if np.any(~np.isfinite(P)) or np.any(P < 0):
        raise InvalidInput("transition matrix entries must be finite and nonnegative")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > tol * P.shape[0]:
        raise InvalidInput("transition matrix rows must sum to 1")
    return P


def doublet_to_chain(theta) -> tuple[np.ndarray, np.ndarray]:
    """Split a doublet matrix into (pi, P) with pi_i = row sum, P = theta / pi."""
    th = as_doublet(theta)
    pi = th.sum(axis=1)
    if np.any(pi <= 0):
        raise ZeroRowMarginal(
            f"states {np.flatnonzero(pi <= 0).tolist()} have zero row marginal"
        )
    return pi, th / pi[:, None]


def chain_to_doublet(pi, P) -> np.ndarray:
    return np.asarray(pi, dtype=float)[:, None] * np.asarray(P, dtype=float)


def stationary_from_transition(P) -> np.ndarray:
    """Stationary distribution of P from the linear system A_d(P) pi = e_d.

    A_d(P) is P^T - I with its last row replaced by ones; it is nonsingular
    for every ergodic P.
    """
    P = check_transition(P, tol=1e-9)
    pi, ok = _kernels.stationary(np.ascontiguousarray(P))
    if not ok:
        raise SingularSystem("A_d(P) is singular; the chain is not ergodic")
    return pi


def ad_matrix(P) -> np.ndarray:
    return _kernels.build_ad(np.ascontiguousarray(P, dtype=float))


def simulate(P, xi0: int, T: int, rng: np.random.Generator) -> Trajectory:
    """Sample xi_1..xi_T of the chain P started from the fixed state xi0."""
    P = check_transition(P, tol=1e-9)
    d = P.shape[0]
    if T < 1:
        raise InvalidInput("T must be >= 1")
    if not 0 <= xi0 < d:
        raise InvalidInput(f"initial state {xi0} outside 0..{d - 1}")
    cdf = np.cumsum(P, axis=1)
    states = _kernels.walk(cdf, int(xi0), rng.random(T))
    return Trajectory(int(xi0), states)


def transition_counts(traj: Trajectory, d: int) -> np.ndarray:
    traj.check_states(d)
    p = traj.path
    counts = np.zeros((d, d), dtype=np.int64)
    np.add.at(counts, (p[:-1], p[1:]), 1)
    return counts


def estimate_doublet(traj: Trajectory, d: int) -> np.ndarray:
    """Empirical doublet distribution: transition counts divided by T."""
    return transition_counts(traj, d) / traj.T


def ghost_balance(theta_hat, traj: Trajectory) -> np.ndarray:
    """Empirical doublet with one extra transition from xi_T back to xi_0.

    The closed walk has equal in- and out-degrees at every state, so the
    result has balanced marginals.  Weight 1/(T+1) per transition.
    """
    th = as_doublet(theta_hat)
    d = th.shape[0]
    counts = np.rint(th * traj.T).astype(np.int64)
    if counts.sum() != traj.T or not np.allclose(counts, th * traj.T, atol=1e-6):
        raise InvalidInput("theta_hat is not the empirical doublet of this trajectory")
    traj.check_states(d)
    counts[traj.states[-1], traj.initial_state] += 1
    return counts / (traj.T + 1)


def make_positive(theta, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """(theta + delta * J) / (1 + delta d^2), J the all-ones matrix."""
    th = as_doublet(theta)
    if delta < 0:
        raise InvalidInput("delta must be nonnegative")
    d = th.shape[0]
    return (th + delta) / (1.0 + delta * d * d)


def _xlogy_ratio(p, q):
    """Elementwise p log(p/q) with 0 log(0/q) = 0 and p log(p/0) = inf."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = np.zeros(np.broadcast(p, q).shape)
    pos = p > 0
    with np.errstate(divide="ignore"):
        out[pos] = np.where(
            np.broadcast_to(q, out.shape)[pos] > 0,
            np.broadcast_to(p, out.shape)[pos]
            * np.log(np.broadcast_to(p, out.shape)[pos] / np.broadcast_to(q, out.shape)[pos]),
            np.inf,
        )
    return out


def kl_divergence(p, q) -> float:
    """Relative entropy D(p || q) of two probability vectors (may be inf)."""
    return float(_xlogy_ratio(p, q).sum())


def conditional_relative_entropy(theta_prime, theta) -> float:
    """D_c(theta' || theta), returned as +inf when the support condition fails."""
    tp = as_doublet(theta_prime)
    th = as_doublet(theta)
    if tp.shape != th.shape:
        raise InvalidInput("doublet dimensions differ")
    rp = tp.sum(axis=1, keepdims=True)
    rq = th.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        Pp = np.where(rp > 0, tp / np.where(rp > 0, rp, 1.0), 0.0)
        Pq = np.where(rq > 0, th / np.where(rq > 0, rq, 1.0), 0.0)
    terms = tp * 0.0
    pos = tp > 0
    bad = pos & (Pq <= 0)
    if np.any(bad):
        return float("inf")
    terms[pos] = tp[pos] * (np.log(Pp[pos]) - np.log(Pq[pos]))
    return max(float(terms.sum()), 0.0)


def cond_entropy_vs_transition(pi_prime, P_prime, P) -> float:
    """sum_i pi'_i D(P'_i. || P_i.); rows with pi'_i = 0 are skipped."""
    pi_prime = np.asarray(pi_prime, dtype=float)
    P_prime = np.asarray(P_prime, dtype=float)
    P = np.asarray(P, dtype=float)
    if not (pi_prime.shape[0] == P_prime.shape[0] == P.shape[0]) or P_prime.shape != P.shape:
        raise InvalidInput("dimensions of pi', P', P disagree")
    total = 0.0
    for i in np.flatnonzero(pi_prime > 0):
        kl = kl_divergence(P_prime[i], P[i])
        if np.isinf(kl):
            return float("inf")
        total += pi_prime[i] * kl
    return max(total, 0.0)


def random_ergodic(d: int, rng: np.random.Generator, floor: float = 0.0) -> np.ndarray:
    """Row-normalized uniform [floor, 1) matrix; strictly positive, hence ergodic."""
    M = rng.uniform(floor, 1.0, size=(d, d)) + 1e-12
    return M / M.sum(axis=1, keepdims=True)


def power_iteration(P, steps: int = 10_000) -> np.ndarray:
    """Stationary distribution by repeated multiplication; a test oracle only."""
    P = np.asarray(P, dtype=float)
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(steps):
        pi = pi @ P
    return pi / pi.sum()


def states_to_array(states: Sequence[int]) -> np.ndarray:
    return np.asarray(states, dtype=np.int64)
