"""Bundled public-domain fixtures used by the examples and acceptance tests.

mcycle: simulated motorcycle-crash head accelerations (133 points).
columbus: residential crime rates, household value and income for 49
    districts, plus a contiguity edge list.
orthodont: dental growth distances for 27 children at ages 8-14.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

_DATA = resources.files(__package__) / "data"


def _read_csv(name: str):
    with (_DATA / name).open() as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return header, rows


def load_mcycle() -> tuple[np.ndarray, np.ndarray]:
    """(times, accel) arrays."""
    _, rows = _read_csv("mcycle.csv")
    arr = np.array(rows, dtype=float)
    return arr[:, 0], arr[:, 1]


def load_columbus() -> dict[str, np.ndarray]:
    """crime / hoval / inc columns plus the undirected edge list."""
    header, rows = _read_csv("columbus.csv")
    arr = np.array(rows, dtype=float)
    out = {name: arr[:, i] for i, name in enumerate(header)}
    _, edge_rows = _read_csv("columbus_adj.csv")
    out["edges"] = np.array(edge_rows, dtype=int)
    return out


def load_orthodont() -> dict[str, np.ndarray]:
    """Long-format growth study: subject, female, age, distance."""
    header, rows = _read_csv("orthodont.csv")
    arr = np.array(rows, dtype=float)
    return {name: arr[:, i] for i, name in enumerate(header)}
