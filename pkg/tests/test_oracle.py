from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markov_dro.errors import DegenerateBox, DomainViolation, InvalidInput
from markov_dro.markov_core import random_ergodic, stationary_from_transition
from markov_dro.oracle import (
    OracleProblem,
    SGDConfig,
    dual_bounds,
    dual_function,
    dual_gradient,
    dual_objective,
    lambda_star,
    single_row_oracle,
    solve_dual,
    weighted_entropy,
)


def random_problem(d, seed, r=0.3, scale=1.0):
    rng = np.random.default_rng(seed)
    P = random_ergodic(d, rng, floor=0.02)
    pi = stationary_from_transition(P)
    return OracleProblem(scale * rng.normal(size=(d, d)), pi, P, r)


def grid_max_d2(problem, step=1e-3):
    """Brute force over the two free entries of a 2x2 row-stochastic S."""
    g = np.arange(step, 1.0, step)
    a, b = np.meshgrid(g, g, indexing="ij")
    al, Pp, C = problem.pi_prime, problem.P_prime, problem.C

    def kl(p, q):
        return p[0] * np.log(p[0] / q) + p[1] * np.log(p[1] / (1 - q))

    ent = al[0] * kl(Pp[0], a) + al[1] * kl(Pp[1], b)
    val = C[0, 0] * a + C[0, 1] * (1 - a) + C[1, 0] * b + C[1, 1] * (1 - b)
    return float(np.max(np.where(ent <= problem.radius, val, -np.inf)))


def interior_eta(problem, rng):
    return problem.C.max(axis=1) + rng.uniform(0.05, 3.0, size=problem.C.shape[0])


# ---------------------------------------------------------------- problem data


def test_problem_validation():
    P = np.full((2, 2), 0.5)
    with pytest.raises(InvalidInput):
        OracleProblem(np.zeros((2, 2)), [0.5, 0.5], P, 0.0)
    with pytest.raises(InvalidInput):
        OracleProblem(np.zeros((2, 2)), [1.0, 0.0], P, 0.1)
    with pytest.raises(InvalidInput):
        OracleProblem(np.zeros((3, 3)), [0.5, 0.5], P, 0.1)
    with pytest.raises(InvalidInput):
        SGDConfig(mode="newton")
    with pytest.raises(InvalidInput):
        SGDConfig(N=0)


# ---------------------------------------------------------------- dual_bounds


def test_bounds_constant_cost_collapse():
    prob = OracleProblem(np.full((3, 3), 2.0), np.ones(3) / 3, np.full((3, 3), 1 / 3), 0.5)
    with pytest.raises(DegenerateBox):
        dual_bounds(prob)


def test_bounds_printed_example():
    prob = OracleProblem(np.eye(2), [0.5, 0.5], np.full((2, 2), 0.5), 1.0)
    box = dual_bounds(prob)
    np.testing.assert_allclose(box.lower, [1.0, 1.0])
    e = np.exp(-1.0)
    np.testing.assert_allclose(box.upper, (2 - e) / (1 - e) - 1, rtol=1e-14)
    assert box.upper[0] == pytest.approx(1.582, abs=1e-3)


@pytest.mark.parametrize("seed", range(8))
def test_bounds_contain_dual_optimum(seed):
    prob = random_problem(2, seed)
    box = dual_bounds(prob)
    sol = solve_dual(prob)
    assert box.contains(sol.eta_star)
    # dense scan of Q over the box confirms the optimum sits inside it
    g0 = np.linspace(box.lower[0], box.upper[0], 400)[1:]
    g1 = np.linspace(box.lower[1], box.upper[1], 400)[1:]
    q = min(dual_objective(np.array([x, y]), prob) for x in g0[::8] for y in g1[::8])
    assert sol.dual_value <= q + 1e-9


# ---------------------------------------------------------------- lambda_star


def test_lambda_star_closed_form():
    d, r = 4, 0.3
    prob = OracleProblem(np.zeros((d, d)), np.ones(d) / d, np.full((d, d), 1 / d), r)
    assert lambda_star(np.ones(d), prob) == pytest.approx(d * np.exp(-r), rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_lambda_star_stationarity(d, seed):
    prob = random_problem(d, seed)
    eta = interior_eta(prob, np.random.default_rng(seed))
    lam = lambda_star(eta, prob)
    assert lam > 0
    t = eta[:, None] - prob.C
    cond = prob.radius + np.sum(prob.weights * np.log(lam * prob.pi_prime[:, None] / t))
    assert abs(cond) < 1e-10
    h = 1e-6 * lam
    dJ = (dual_function(lam + h, eta, prob) - dual_function(lam - h, eta, prob)) / (2 * h)
    assert abs(dJ) < 1e-8 * max(1.0, abs(dual_function(lam, eta, prob)))
    assert dual_objective(eta, prob) == pytest.approx(dual_function(lam, eta, prob), rel=1e-12)


def test_lambda_star_domain():
    prob = random_problem(3, 0)
    with pytest.raises(DomainViolation):
        lambda_star(prob.C.max(axis=1), prob)


# ---------------------------------------------------------------- dual_objective


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_dual_objective_midpoint_convex(d, seed):
    prob = random_problem(d, seed)
    rng = np.random.default_rng(seed + 1)
    a, b = interior_eta(prob, rng), interior_eta(prob, rng)
    qa, qb = dual_objective(a, prob), dual_objective(b, prob)
    assert dual_objective((a + b) / 2, prob) <= 0.5 * (qa + qb) + 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_exact_gradient_matches_finite_differences(d, seed):
    prob = random_problem(d, seed)
    eta = interior_eta(prob, np.random.default_rng(seed))
    g = dual_gradient(eta, prob)
    h = 1e-6
    fd = np.array(
        [(dual_objective(eta + h * e, prob) - dual_objective(eta - h * e, prob)) / (2 * h) for e in np.eye(d)]
    )
    assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_printed_derivative_is_not_the_gradient():
    prob = random_problem(3, 5)
    eta = interior_eta(prob, np.random.default_rng(0))
    assert not np.allclose(dual_gradient(eta, prob, "printed"), dual_gradient(eta, prob, "exact"), atol=1e-3)


def test_constant_cost_dual_value():
    c, d = 1.7, 3
    prob = OracleProblem(np.full((d, d), c), np.ones(d) / d, np.full((d, d), 1 / d), 0.4)
    for mode in ("exact", "full_gradient"):
        sol = solve_dual(prob, SGDConfig(mode=mode))
        assert sol.primal_value == pytest.approx(c * d, abs=1e-12)
        assert sol.dual_value == pytest.approx(c * d, abs=1e-12)
        np.testing.assert_allclose(sol.S.sum(axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------- solve_dual


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("r", [0.05, 0.5])
def test_exact_oracle_matches_grid(seed, r):
    prob = random_problem(2, seed, r=r)
    sol = solve_dual(prob)
    grid = grid_max_d2(prob)
    assert sol.primal_value >= grid - 1e-9
    assert abs(sol.primal_value - grid) <= 1e-3
    assert abs(sol.dual_value - grid) <= 1e-3


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.sampled_from([1e-3, 0.1, 1.0, 5.0]))
def test_exact_oracle_invariants(d, seed, r):
    prob = random_problem(d, seed, r=r)
    sol = solve_dual(prob)
    assert sol.converged
    assert np.all(sol.S > 0)
    np.testing.assert_allclose(sol.S.sum(axis=1), 1.0, atol=1e-12)
    assert sol.row_violation <= 1e-6
    assert weighted_entropy(sol.S, prob) <= r + 1e-6
    assert sol.duality_gap <= 1e-8 * max(1.0, abs(sol.dual_value))
    assert sol.primal_value <= sol.dual_value + 1e-8
    assert dual_bounds(prob).contains(sol.eta_star, tol=1e-8)
    # weak duality against arbitrary dual points
    eta = interior_eta(prob, np.random.default_rng(seed))
    assert sol.primal_value <= dual_objective(eta, prob) + 1e-8


def test_large_radius_concentrates_on_row_maxima():
    prob = random_problem(4, 3, r=50.0)
    sol = solve_dual(prob)
    assert abs(sol.primal_value - prob.C.max(axis=1).sum()) <= 1e-3


@pytest.mark.parametrize("mode", ["full_gradient", "per_coordinate"])
@pytest.mark.parametrize("seed", range(3))
def test_projected_gradient_modes_agree_with_exact(mode, seed):
    prob = random_problem(3, seed, r=0.5)
    exact = solve_dual(prob)
    sol = solve_dual(prob, SGDConfig(N=20_000, mode=mode, tol=1e-7))
    assert abs(sol.primal_value - exact.primal_value) <= 1e-4
    assert weighted_entropy(sol.S, prob) <= prob.radius + 1e-6
    np.testing.assert_allclose(sol.S.sum(axis=1), 1.0, atol=1e-12)
    assert sol.primal_value <= exact.dual_value + 1e-8


def _hard_instance(seed):
    rng = np.random.default_rng(seed)
    P = random_ergodic(10, rng, 0.0)
    return OracleProblem(rng.normal(size=(10, 10)), stationary_from_transition(P), P, 0.1)


@pytest.mark.slow
@pytest.mark.parametrize(
    "mode, seed",
    [
        ("full_gradient", 7),
        ("per_coordinate", 2),
        ("per_coordinate", 7),
        pytest.param(
            "full_gradient",
            2,
            marks=pytest.mark.xfail(strict=True, reason="measured ratio 0.61; asymptotic ratio about 0.55"),
        ),
    ],
)
def test_projected_gradient_rate_band(mode, seed):
    prob = _hard_instance(seed)
    best = solve_dual(prob).primal_value
    g1 = solve_dual(prob, SGDConfig(N=10_000, mode=mode, tol=0.0)).dual_value - best
    g4 = solve_dual(prob, SGDConfig(N=40_000, mode=mode, tol=0.0)).dual_value - best
    assert g1 > 1e-7
    assert g4 <= 0.6 * g1


def test_gap_stop_triggers_early():
    prob = random_problem(3, 1, r=0.5)
    sol = solve_dual(prob, SGDConfig(N=50_000, mode="full_gradient", tol=1e-3))
    assert sol.converged and sol.iterations < 50_000


# ---------------------------------------------------------------- single row


def test_single_row_oracle_grid():
    p_prime = np.array([0.5, 0.5])
    c = np.array([0.0, 1.0])
    p, v = single_row_oracle(c, p_prime, 0.1)
    q = np.linspace(1e-6, 1 - 1e-6, 200_001)
    kl = 0.5 * np.log(0.5 / (1 - q)) + 0.5 * np.log(0.5 / q)
    assert abs(v - q[kl <= 0.1].max()) < 1e-4
    assert p.sum() == pytest.approx(1.0)
