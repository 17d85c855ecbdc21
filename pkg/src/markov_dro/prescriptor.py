"""Choosing a decision: derivative-free direct search and exact enumeration.

Decision spaces are either a box in R^n or the binary points of a polytope
{x in {0,1}^n : Cx <= b}.  Infeasible points score +inf (extreme barrier).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInput, NoFeasiblePoint, SingularSystem, TooLarge
from .markov_core import stationary_from_transition
from .wc_solver import FWConfig

MAX_ENUM_BITS = 20


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise InvalidInput("box needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return self.lower.size

    def feasible(self, x) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def default_start(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class BinaryPolytope:
    C: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if C.shape[0] != b.size:
            raise InvalidInput("constraint rows and b length differ")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.C.shape[1]

    def feasible(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all((x == 0) | (x == 1)) and np.all(self.C @ x <= self.b + 1e-9))

    def points(self) -> np.ndarray:
        """All feasible binary points, in lexicographic order."""
        if self.n > MAX_ENUM_BITS:
            raise TooLarge(f"enumeration limited to n <= {MAX_ENUM_BITS}, got n={self.n}")
        X = np.array(list(itertools.product((0, 1), repeat=self.n)), dtype=float).reshape(-1, self.n)
        keep = np.all(X @ self.C.T <= self.b + 1e-9, axis=1)
        return X[keep]

    def default_start(self) -> np.ndarray:
        x = np.zeros(self.n)
        if self.feasible(x):
            return x
        pts = self.points()
        if pts.shape[0] == 0:
            raise NoFeasiblePoint("the binary polytope has no feasible point")
        return pts[0]


DecisionSpace = Box | BinaryPolytope


@dataclass(frozen=True)
class DFOConfig:
    """Direct-search settings.

    ``directions`` overrides the default spanning set: +-coordinate
    directions, plus the pairwise exchanges e_i - e_j on binary spaces.  With
    ``search_samples > 0`` each iteration first tries that many random
    feasible points (a search step) before polling.
    """

    alpha0: float = 1.0
    beta1: float = 0.5
    beta2: float = 0.5
    gamma: float = 2.0
    max_iters: int = 500
    directions: Sequence[Sequence[float]] | None = None
    search_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise InvalidInput("alpha0 must be positive")
        if not 0 < self.beta1 <= self.beta2 < 1:
            raise InvalidInput("need 0 < beta1 <= beta2 < 1")
        if not self.gamma >= 1:
            raise InvalidInput("gamma must be >= 1")
        if self.max_iters < 1:
            raise InvalidInput("max_iters must be positive")


@dataclass
class DFOResult:
    x: np.ndarray
    value: float
    iterations: int
    evaluations: int
    alphas: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    values: list = field(default_factory=list)


class MemoObjective:
    """Wraps an objective with memoization and the extreme barrier."""

    def __init__(self, fn: Callable[[np.ndarray], float], space):
        self.fn = fn
        self.space = space
        self.cache: dict[bytes, float] = {}
        self.calls = 0

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if not self.space.feasible(x):
            return np.inf
        key = np.round(x, 12).tobytes()
        if key not in self.cache:
            self.calls += 1
            self.cache[key] = float(self.fn(x))
        return self.cache[key]


def _directions(space, cfg: DFOConfig) -> np.ndarray:
    if cfg.directions is not None:
        D = np.asarray(cfg.directions, dtype=float)
        if D.ndim != 2 or D.shape[1] != space.n:
            raise InvalidInput("custom directions must be an (m, n) array")
        return D
    eye = np.eye(space.n)
    D = [eye, -eye]
    if isinstance(space, BinaryPolytope) and space.n > 1:
        # exchanges e_i - e_j swap one chosen item for another, which single
        # flips cannot do once a budget constraint is tight
        i, j = np.nonzero(~np.eye(space.n, dtype=bool))
        D.append(eye[i] - eye[j])
    return np.vstack(D)


def direct_search(objective, space, cfg: DFOConfig | None = None, x0=None) -> DFOResult:
    """Directional direct search with sufficient decrease alpha^2.

    On a box the poll points are x + alpha d.  On a binary polytope the
    step is snapped to one, so polls flip single bits; alpha then only
    enters through the forcing term, and once alpha^2 is below the
    resolution of the objective a failed poll can never succeed again and
    the loop ends early.
    """
    cfg = cfg or DFOConfig()
    f = objective if isinstance(objective, MemoObjective) else MemoObjective(objective, space)
    binary = isinstance(space, BinaryPolytope)
    x = np.asarray(space.default_start() if x0 is None else x0, dtype=float)
    fx = f(x)
    if not np.isfinite(fx):
        raise InvalidInput("x0 must be feasible")
    D = _directions(space, cfg)
    rng = np.random.default_rng(cfg.seed)
    alpha = cfg.alpha0
    alphas, accepted, values = [alpha], [], [fx]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        force = alpha * alpha
        success = False
        for _ in range(cfg.search_samples):
            y = _random_point(space, rng)
            fy = f(y)
            if fy < fx - force:
                x, fx, success = y, fy, True
                break
        if not success:
            for dvec in D:
                # +e_i sets bit i and -e_i clears it; other bit moves hit the barrier
                y = x + (dvec if binary else alpha * dvec)
                fy = f(y)
                if fy < fx - force:
                    x, fx, success = y, fy, True
                    break
        accepted.append(success)
        values.append(fx)
        alpha = cfg.gamma * alpha if success else cfg.beta2 * alpha
        alphas.append(alpha)
        if binary and not success and alpha * alpha < 1e-15 * max(1.0, abs(fx)):
            break
    return DFOResult(x=x, value=fx, iterations=it, evaluations=f.calls, alphas=alphas, accepted=accepted, values=values)


def _random_point(space, rng) -> np.ndarray:
    if isinstance(space, Box):
        return rng.uniform(space.lower, space.upper)
    return rng.integers(0, 2, size=space.n).astype(float)


def enumerate_binary(objective, space: BinaryPolytope) -> tuple[np.ndarray, float]:
    """Exact minimizer over the feasible binary points (first one on ties)."""
    if not isinstance(space, BinaryPolytope):
        raise InvalidInput("enumeration needs a BinaryPolytope")
    pts = space.points()
    if pts.shape[0] == 0:
        raise NoFeasiblePoint("the binary polytope has no feasible point")
    vals = np.array([objective(x) for x in pts])
    k = int(np.argmin(vals))
    return pts[k], float(vals[k])


# ---------------------------------------------------------------------------
# the robust prescriptor over several customer groups


@dataclass
class PrescriptorResult:
    x: np.ndarray
    in_sample_risk: float
    evaluations: int
    candidates: int
    method: str


class GroupObjective:
    """x -> sum_k w_k * value_k(loss_k(x)) with per-group worst-case solves.

    ``losses(x)`` returns an (n_groups, d) array.  Each group's value is the
    chosen method's in-sample objective for that group's estimate.  Every
    worst-case solution seen is recorded: its stationary distribution lies in
    the group's ambiguity set, so <loss, pi> bounds that group's worst case
    from below for any other decision.
    """

    def __init__(
        self,
        losses,
        thetas,
        weights,
        method: str,
        r: float,
        fw_cfg: FWConfig | None = None,
        delta: float = 1e-6,
    ):
        from .baselines import worst_case_solution

        self._solve = worst_case_solution
        self.losses = losses
        self.thetas = [np.asarray(t, dtype=float) for t in thetas]
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.size != len(self.thetas):
            raise InvalidInput("one weight per group is required")
        self.method = method
        self.r = r
        self.delta = delta
        self.fw_cfg = fw_cfg or FWConfig(gap_tol=1e-7, warn=False)
        self.witness: list[list[np.ndarray]] = [[] for _ in self.thetas]
        self.solves = 0

    def group_values(self, x) -> np.ndarray:
        Lx = np.asarray(self.losses(x), dtype=float)
        out = np.empty(len(self.thetas))
        for k, th in enumerate(self.thetas):
            sol = self._solve(self.method, Lx[k], th, self.r, self.fw_cfg, self.delta)
            self.solves += 1
            out[k] = sol.value
            if self.method != "saa":
                try:
                    self.witness[k].append(stationary_from_transition(sol.P_star))
                except SingularSystem:
                    pass
        return out

    def __call__(self, x) -> float:
        return float(self.weights @ self.group_values(x))


def prescriptor_solve(
    losses,
    thetas,
    weights,
    space,
    method: str = "cre",
    r: float = 0.1,
    fw_cfg: FWConfig | None = None,
    dfo_cfg: DFOConfig | None = None,
    strategy: str = "auto",
    delta: float = 1e-6,
) -> PrescriptorResult:
    """Robust prescriptor: minimize the weighted worst-case risk over X.

    ``strategy`` is ``enumerate`` (exact, binary spaces with n <= 20),
    ``dfo`` (direct search) or ``auto``.  Enumeration visits candidates in
    order of a running lower bound built from the worst-case models found so
    far and skips those whose bound already exceeds the incumbent; the result
    equals brute force whenever each solve returns its group's maximum.
    ``delta`` is the positivization floor applied to each estimate.
    """
    obj = GroupObjective(losses, thetas, weights, method, r, fw_cfg, delta)
    binary = isinstance(space, BinaryPolytope)
    if strategy == "auto":
        strategy = "enumerate" if binary and space.n <= MAX_ENUM_BITS else "dfo"
    if strategy == "dfo":
        res = direct_search(obj, space, dfo_cfg)
        return PrescriptorResult(res.x, res.value, obj.solves, res.evaluations, "dfo")
    if strategy != "enumerate":
        raise InvalidInput(f"unknown strategy {strategy!r}")
    if not binary:
        raise InvalidInput("enumeration needs a BinaryPolytope")
    pts = space.points()
    if pts.shape[0] == 0:
        raise NoFeasiblePoint("the binary polytope has no feasible point")
    if method == "saa":
        vals = np.array([obj(x) for x in pts])
        k = int(np.argmin(vals))
        return PrescriptorResult(pts[k], float(vals[k]), obj.solves, len(pts), "enumerate")
    return _pruned_enumeration(obj, pts)


def _pruned_enumeration(obj: GroupObjective, pts: np.ndarray) -> PrescriptorResult:
    n_pts = pts.shape[0]
    Ltab = np.stack([np.asarray(obj.losses(x), dtype=float) for x in pts])  # (N, K, d)
    K = Ltab.shape[1]
    # bound_k[i] = max over recorded pi of <loss_k(x_i), pi>
    bound = np.full((n_pts, K), -np.inf)
    seen = [0] * K

    def refresh():
        for k in range(K):
            new = obj.witness[k][seen[k]:]
            if new:
                vals = Ltab[:, k, :] @ np.array(new).T
                bound[:, k] = np.maximum(bound[:, k], vals.max(axis=1))
                seen[k] = len(obj.witness[k])

    done = np.zeros(n_pts, dtype=bool)
    best_val, best_i = np.inf, -1
    while True:
        lb = np.where(done, np.inf, bound @ obj.weights)
        i = int(np.argmin(lb))
        if done[i] or lb[i] >= best_val:
            break
        v = obj(pts[i])
        done[i] = True
        if v < best_val or (v == best_val and i < best_i):
            best_val, best_i = v, i
        refresh()
    return PrescriptorResult(pts[best_i], float(best_val), obj.solves, n_pts, "enumerate")
