from __future__ import annotations

import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from markov_dro.errors import InvalidInput
from markov_dro.io import (
    atomic_write_text,
    matrix_from_csv,
    matrix_from_record,
    matrix_record,
    matrix_to_csv,
    read_matrix,
    read_trajectory,
    read_vector,
    trajectory_from_text,
    trajectory_to_text,
    write_csv,
    write_matrix,
    write_trajectory,
)
from markov_dro.markov_core import Trajectory

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6).flatmap(lambda d: arrays(float, (d, d), elements=finite)))
def test_matrix_csv_round_trip(M):
    np.testing.assert_array_equal(matrix_from_csv(matrix_to_csv(M)), M)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6).flatmap(lambda d: arrays(float, (d, d), elements=finite)))
def test_matrix_record_round_trip(M):
    rec = json.loads(json.dumps(matrix_record(M)))
    np.testing.assert_array_equal(matrix_from_record(rec), M)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 5), st.lists(st.integers(0, 5), min_size=1, max_size=50))
def test_trajectory_round_trip(xi0, states):
    traj = Trajectory(xi0, np.array(states))
    back = trajectory_from_text(trajectory_to_text(traj))
    assert back.initial_state == xi0
    np.testing.assert_array_equal(back.states, states)


def test_trajectory_is_one_based():
    assert trajectory_to_text(Trajectory(0, np.array([2, 1]))) == "1\n3\n2\n"


@pytest.mark.parametrize("text", ["", "3\n", "1\nx\n", "0\n1\n"])
def test_bad_trajectories(text):
    with pytest.raises(InvalidInput):
        trajectory_from_text(text)


@pytest.mark.parametrize("text", ["", "1,2\n3\n", "1,a\n2,3\n", "1,2,3\n4,5,6\n"])
def test_bad_matrices(text):
    with pytest.raises(InvalidInput):
        matrix_from_csv(text)


def test_bad_record():
    with pytest.raises(InvalidInput):
        matrix_from_record({"d": 3, "entries": [[1, 2], [3, 4]]})
    with pytest.raises(InvalidInput):
        matrix_from_record([[1]])


def test_file_helpers(tmp_path):
    M = np.array([[0.25, 0.75], [0.5, 0.5]])
    for name in ("m.csv", "m.json"):
        write_matrix(M, tmp_path / name)
        np.testing.assert_array_equal(read_matrix(tmp_path / name), M)
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(InvalidInput):
        read_matrix(tmp_path / "bad.json")
    with pytest.raises(InvalidInput):
        read_matrix(tmp_path / "missing.csv")
    (tmp_path / "v1").write_text("1, 2,3\n")
    (tmp_path / "v2").write_text("1\n2\n3\n")
    np.testing.assert_array_equal(read_vector(tmp_path / "v1"), read_vector(tmp_path / "v2"))
    (tmp_path / "v3").write_text("\n")
    with pytest.raises(InvalidInput):
        read_vector(tmp_path / "v3")
    traj = Trajectory(1, np.array([0, 1, 1]))
    write_trajectory(traj, tmp_path / "t.txt")
    np.testing.assert_array_equal(read_trajectory(tmp_path / "t.txt").path, traj.path)


def test_csv_writer(tmp_path):
    write_csv([{"a": 1, "b": 2.5, "c": "x"}], tmp_path / "o.csv", ["b", "a"])
    assert (tmp_path / "o.csv").read_text() == "b,a\n2.5,1\n"


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    target = tmp_path / "sub" / "out.txt"
    with pytest.raises(TypeError):
        atomic_write_text(target, 12345)  # not a string: write fails mid-way
    assert not target.exists()
    assert os.listdir(target.parent) == []


def test_atomic_write_replaces(tmp_path):
    target = tmp_path / "f.txt"
    target.write_text("old")
    atomic_write_text(target, "new")
    assert target.read_text() == "new"
    assert os.listdir(tmp_path) == ["f.txt"]
