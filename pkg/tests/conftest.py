import numpy as np
import pytest

from lgmcheck import (
    HyperParams,
    RngStream,
    assemble_lgm,
    build_iid,
    build_rw1,
    build_sar,
)


@pytest.fixture
def rng():
    return RngStream(20240817).generator()


def random_spd(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def ring_edges(n: int, rng: np.random.Generator, extra: int = 2):
    """Connected undirected graph: a cycle plus a few random chords."""
    edges = [(i + 1, i % n + 2) for i in range(n - 1)] + [(n, 1)]
    for _ in range(extra):
        a, b = rng.integers(1, n + 1, size=2)
        if a != b:
            edges.append((int(a), int(b)))
    return edges


def random_small_model(seed: int):
    """Random RW1/IID/SAR model with n <= 20 used by the oracle battery."""
    rng = RngStream(seed, 999).generator()
    kind = ["rw1", "iid", "sar"][seed % 3]
    n = int(rng.integers(4, 21))
    sigma_w = float(rng.uniform(0.5, 3.0))
    if kind == "rw1":
        lat = build_rw1(n, sigma_w)
    elif kind == "iid":
        lat = build_iid(n, sigma_w)
    else:
        lat = build_sar(ring_edges(n, rng), float(rng.uniform(-0.7, 0.7)), sigma_w)
    tau = float(rng.uniform(0.3, 3.0))
    with_intercept = seed % 2 == 0
    B = np.ones((n, 1)) if with_intercept else None
    y = rng.standard_normal(n) * rng.uniform(0.5, 2.0) + (1.0 if with_intercept else 0.0)
    m = assemble_lgm(y, B, "identity", lat)
    return m, HyperParams(tau, dict(lat.params))
