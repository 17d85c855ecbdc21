"""File formats.

* Matrices (doublets and transition matrices): CSV with d comma-separated
  numbers per row, or JSON ``{"d": d, "entries": [[...], ...]}``.
* Trajectories: one integer state per line, first line is xi_0.  States are
  1-based in files and 0-based in memory.
* Loss vectors: CSV with d numbers on one line or one per line.

All writers go through :func:`atomic_write_text`, so a failed run never
leaves a half-written file behind.
"""
from __future__ import annotations

import csv
import io as _stdio
import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInput
from .markov_core import Trajectory


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rows_to_csv(rows: Sequence[dict], fields: Sequence[str]) -> str:
    buf = _stdio.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: row[k] for k in fields})
    return buf.getvalue()


def write_csv(rows: Sequence[dict], path, fields: Sequence[str]) -> None:
    atomic_write_text(path, rows_to_csv(rows, fields))


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc.strerror or exc}") from exc


def matrix_to_csv(M) -> str:
    M = np.asarray(M, dtype=float)
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in M)


def matrix_from_csv(text: str) -> np.ndarray:
    rows = []
    for line in csv.reader(_stdio.StringIO(text)):
        cells = [c.strip() for c in line if c.strip()]
        if not cells:
            continue
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise InvalidInput(f"non-numeric matrix entry: {exc}") from exc
    if not rows:
        raise InvalidInput("matrix file is empty")
    d = len(rows)
    if any(len(r) != d for r in rows):
        raise InvalidInput(f"matrix must be square with {d} columns per row")
    return np.array(rows)


def matrix_record(M) -> dict:
    M = np.asarray(M, dtype=float)
    return {"d": int(M.shape[0]), "entries": M.tolist()}


def matrix_from_record(rec: dict) -> np.ndarray:
    if not isinstance(rec, dict) or "entries" not in rec:
        raise InvalidInput("matrix record needs an 'entries' field")
    M = np.asarray(rec["entries"], dtype=float)
    d = rec.get("d", M.shape[0] if M.ndim else 0)
    if M.ndim != 2 or M.shape != (d, d):
        raise InvalidInput(f"record entries must be a {d} x {d} matrix")
    return M


def read_matrix(path) -> np.ndarray:
    """Read a matrix from .json (record) or anything else (CSV)."""
    text = _read_text(path)
    if str(path).lower().endswith(".json"):
        try:
            return matrix_from_record(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"{path}: invalid JSON ({exc.msg})") from exc
    return matrix_from_csv(text)


def write_matrix(M, path) -> None:
    if str(path).lower().endswith(".json"):
        atomic_write_text(path, json.dumps(matrix_record(M)) + "\n")
    else:
        atomic_write_text(path, matrix_to_csv(M))


def read_vector(path) -> np.ndarray:
    text = _read_text(path)
    try:
        vals = [float(c) for c in text.replace("\n", ",").split(",") if c.strip()]
    except ValueError as exc:
        raise InvalidInput(f"{path}: non-numeric entry") from exc
    if not vals:
        raise InvalidInput(f"{path}: empty vector")
    return np.array(vals)


def trajectory_to_text(traj: Trajectory) -> str:
    return "".join(f"{s + 1}\n" for s in traj.path)


def trajectory_from_text(text: str) -> Trajectory:
    try:
        vals = [int(line) for line in text.split() if line.strip()]
    except ValueError as exc:
        raise InvalidInput("trajectory lines must be integers") from exc
    if len(vals) < 2:
        raise InvalidInput("trajectory needs xi_0 and at least one further state")
    if min(vals) < 1:
        raise InvalidInput("trajectory states are 1-based and must be >= 1")
    s = np.array(vals, dtype=np.int64) - 1
    return Trajectory(int(s[0]), s[1:])


def read_trajectory(path) -> Trajectory:
    return trajectory_from_text(_read_text(path))


def write_trajectory(traj: Trajectory, path) -> None:
    atomic_write_text(path, trajectory_to_text(traj))
