from __future__ import annotations

import json
import math

import numpy as np
import pytest

from markov_dro.errors import InvalidInput
from markov_dro.experiments import (
    ExperimentConfig,
    RevenueProblem,
    consistency_experiment,
    disappointment_table,
    metadata,
    predictor_disappointment,
    run_disappointment_experiment,
    run_risk_experiment,
    run_scalability_bench,
    stream,
    synth_chain,
    synth_problem,
    write_metadata,
)
from markov_dro.hypotest import coin_pair
from markov_dro.markov_core import doublet_to_chain, stationary_from_transition


# ---------------------------------------------------------------- generators


@pytest.mark.parametrize("d", [2, 5, 10])
def test_synth_chain_rows(d):
    P = synth_chain(d, np.random.default_rng(d))
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(P > 0)


@pytest.mark.parametrize("seed", range(5))
def test_synth_chain_has_boosted_entries(seed):
    # rebuild from the same draws: uniform matrix, two distinct cells set to 4 and 5
    rng = np.random.default_rng(seed)
    M = rng.uniform(size=(6, 6))
    i, j = rng.choice(36, size=2, replace=False)
    assert i != j
    M.flat[i], M.flat[j] = 4.0, 5.0
    P = synth_chain(6, np.random.default_rng(seed))
    np.testing.assert_allclose(P, M / M.sum(axis=1, keepdims=True), rtol=1e-15)


def test_synth_chain_deterministic():
    a = synth_chain(6, np.random.default_rng(3))
    b = synth_chain(6, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_synth_chain_rejects_small_d():
    with pytest.raises(InvalidInput):
        synth_chain(1, np.random.default_rng(0))


def test_synth_chain_ergodic_thousand_draws():
    for s in range(1000):
        P = synth_chain(10, stream(s, 9))
        pi = stationary_from_transition(P)
        assert np.all(pi > 0)


def test_synth_problem_shape():
    prob = synth_problem(5, 10, np.random.default_rng(1))
    assert prob.n_groups == 5 and prob.d == 10
    assert prob.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(prob.prices == np.round(prob.prices))
    assert prob.prices.min() >= 1 and prob.prices.max() <= 10
    assert prob.space.feasible(np.r_[np.ones(5), np.zeros(5)])
    assert not prob.space.feasible(np.r_[np.ones(6), np.zeros(4)])


def test_problem_round_trip():
    prob = synth_problem(2, 4, np.random.default_rng(2))
    again = RevenueProblem.from_dict(json.loads(json.dumps(prob.to_dict())))
    np.testing.assert_array_equal(again.prices, prob.prices)
    np.testing.assert_array_equal(again.chains[1], prob.chains[1])


def test_problem_validation():
    P = np.full((2, 2), 0.5)
    with pytest.raises(InvalidInput):
        RevenueProblem([0.4, 0.4], [1, 2], [[1, 1]], [1], [P, P])
    with pytest.raises(InvalidInput):
        RevenueProblem([1.0], [0, 2], [[1, 1]], [1], [P])
    with pytest.raises(InvalidInput):
        RevenueProblem([1.0], [1, 2], [[1, 1, 1]], [1], [P])


def test_true_risk_formula():
    prob = synth_problem(3, 4, np.random.default_rng(4))
    x = np.array([1, 0, 1, 0])
    pis = prob.stationary()
    expected = sum(w * (-prob.prices * x) @ pis[k] for k, w in enumerate(prob.weights))
    assert prob.true_risk(x) == pytest.approx(expected, abs=1e-14)


def test_stream_independent_of_other_keys():
    a = stream(1, 2, 3).random(4)
    b = stream(1, 2, 3).random(4)
    c = stream(1, 2, 4).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(InvalidInput):
        ExperimentConfig(T_grid=())
    with pytest.raises(InvalidInput):
        ExperimentConfig(methods=("cre", "bogus"))
    with pytest.raises(InvalidInput):
        ExperimentConfig(r_grid=(0.0,))
    with pytest.raises(InvalidInput):
        ExperimentConfig.from_dict({"trials": 2, "colour": "red"})
    assert ExperimentConfig.from_dict({"trials": 2}).trials == 2


# ---------------------------------------------------------------- studies


def tiny_setup(methods=("cre", "saa"), r_grid=(0.05, 0.5)):
    prob = synth_problem(2, 4, np.random.default_rng(5))
    cfg = ExperimentConfig(T_grid=(20, 60), r_grid=r_grid, trials=3, seed=11, methods=methods)
    return prob, cfg


def test_risk_experiment_deterministic_and_ordered():
    prob, cfg = tiny_setup()
    a = run_risk_experiment(prob, cfg)
    b = run_risk_experiment(prob, cfg)
    assert a == b
    keys = [(r["method"], r["r"], r["T"], r["trial"]) for r in a]
    assert len(keys) == 2 * 2 * 2 * 3 == len(set(keys))
    order = {m: i for i, m in enumerate(cfg.methods)}
    assert keys == sorted(keys, key=lambda k: (order[k[0]], k[1], k[2], k[3]))


def test_saa_rows_independent_of_radius():
    prob, cfg = tiny_setup()
    rows = run_risk_experiment(prob, cfg)
    saa = {}
    for r in rows:
        if r["method"] == "saa":
            saa.setdefault((r["T"], r["trial"]), set()).add((r["out_of_sample_risk"], r["in_sample_risk"]))
    assert all(len(v) == 1 for v in saa.values())


def test_in_sample_risk_grows_with_radius():
    prob, cfg = tiny_setup(methods=("cre",), r_grid=(0.01, 0.1, 1.0))
    rows = run_risk_experiment(prob, cfg)
    by = {}
    for r in rows:
        by.setdefault((r["T"], r["trial"]), []).append(r["in_sample_risk"])
    for vals in by.values():
        assert all(b >= a - 1e-8 for a, b in zip(vals, vals[1:]))


def test_out_of_sample_risk_is_exact():
    prob, cfg = tiny_setup(methods=("saa",), r_grid=(0.1,))
    rows = run_risk_experiment(prob, cfg)
    # every decision is feasible, so the true risk lies between the extremes
    lo = min(prob.true_risk(x) for x in prob.space.points())
    assert all(lo - 1e-12 <= r["out_of_sample_risk"] <= 0.0 for r in rows)


def test_failed_solves_become_nan_rows(monkeypatch):
    import markov_dro.experiments as ex

    def boom(*a, **k):
        raise ArithmeticError("singular")

    monkeypatch.setattr(ex, "prescriptor_solve", boom)
    prob, cfg = tiny_setup()
    rows = run_risk_experiment(prob, cfg)
    assert len(rows) == 24
    assert all(math.isnan(r["out_of_sample_risk"]) and r["disappointed"] == "" for r in rows)
    assert disappointment_table(rows) == []


def test_disappointment_frequencies():
    prob, cfg = tiny_setup()
    table = run_disappointment_experiment(prob, cfg)
    assert len(table) == 2 * 2 * 2
    assert all(0.0 <= t["disappointment_frequency"] <= 1.0 and t["trials"] == 3 for t in table)


def test_disappointment_vanishes_at_large_radius():
    _, P = doublet_to_chain(coin_pair(0.3).theta1)
    rows = predictor_disappointment(P, [1.0, 0.0], 10.0, [50], 30, seed=0)
    assert rows[0]["disappointment_frequency"] == 0.0


def test_consistency_rows():
    _, P = doublet_to_chain(coin_pair(0.3).theta1)
    rows = consistency_experiment(P, [1.0, 0.0], [100, 400], seeds=3, seed=1)
    assert [r["T"] for r in rows] == [100] * 3 + [400] * 3
    assert rows[0]["r"] == pytest.approx(2 / 100)
    assert all(r["error"] >= 0 for r in rows)


def test_bench_rows():
    rows = run_scalability_bench([3, 5], T=200, trials=2, seed=1)
    assert [(r["d"], r["trial"]) for r in rows] == [(3, 0), (3, 1), (5, 0), (5, 1)]
    assert all(r["wall_seconds"] > 0 and r["converged"] == 1 for r in rows)
    with pytest.raises(InvalidInput):
        run_scalability_bench([5, 3])


def test_bench_time_limit_flags():
    rows = run_scalability_bench([4], T=100, trials=1, time_limit=0.0)
    assert rows[0]["converged"] == 0


def test_metadata(tmp_path):
    prob, cfg = tiny_setup()
    meta = metadata(cfg)
    assert "assumptions" in meta and meta["config"]["trials"] == 3
    write_metadata(tmp_path / "m.json", cfg, {"study": "risk"})
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["study"] == "risk" and data["config"]["T_grid"] == [20, 60]
