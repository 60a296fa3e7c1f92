import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from lgmcheck.errors import DimensionMismatch, NotPositiveDefinite
from lgmcheck.linalg import (
    cholesky,
    posterior_cov_block,
    ridged_cholesky,
    solve,
)

from conftest import random_spd


def cofactor_det(a: np.ndarray) -> float:
    n = a.shape[0]
    if n == 1:
        return a[0, 0]
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        total += (-1) ** j * a[0, j] * cofactor_det(minor)
    return total


class TestCholesky:
    def test_identity(self):
        f = cholesky(np.eye(3))
        assert np.allclose(f.lower(), np.eye(3))
        assert f.logdet == pytest.approx(0.0, abs=1e-14)

    def test_2x2_hand_factorization(self):
        f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
        assert np.allclose(f.lower(), [[2.0, 0.0], [1.0, np.sqrt(2.0)]])
        assert f.logdet == pytest.approx(np.log(8.0), rel=1e-12)

    def test_reconstruction_random_spd(self, rng):
        m = random_spd(10, rng)
        L = cholesky(m).lower()
        err = np.linalg.norm(L @ L.T - m) / np.linalg.norm(m)
        assert err < 1e-10

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_logdet_vs_cofactor_expansion(self, rng):
        for n in (1, 2, 3, 4):
            m = random_spd(n, rng)
            f = cholesky(m)
            assert f.logdet == pytest.approx(np.log(cofactor_det(m)), abs=1e-10)

    def test_banded_matches_dense(self, rng):
        # tridiagonal precision typical of a chain model
        n = 40
        main = 2.0 + rng.uniform(0, 1, n)
        off = -0.9 * np.ones(n - 1)
        dense = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
        fb = cholesky(sp.csr_matrix(dense))
        fd = cholesky(dense)
        assert fb.kind == "banded"
        assert fb.logdet == pytest.approx(fd.logdet, rel=1e-12)
        rhs = rng.standard_normal(n)
        assert np.allclose(fb.solve(rhs), fd.solve(rhs))
        z = rng.standard_normal(n)
        assert np.allclose(fb.half_solve_t(z), fd.half_solve_t(z))
        assert np.allclose(fb.lower(), fd.lower())

    def test_ridged_cholesky_records_ridge(self):
        singular = np.array([[1.0, 1.0], [1.0, 1.0]])
        f = ridged_cholesky(singular)
        assert f.ridge > 0


class TestSolve:
    def test_identity(self, rng):
        v = rng.standard_normal(5)
        assert np.allclose(solve(cholesky(np.eye(5)), v), v)

    def test_2x2_hand_inverse(self):
        f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
        assert np.allclose(f.solve(np.array([1.0, 0.0])), [0.375, -0.25])

    def test_residual_random(self, rng):
        m = random_spd(10, rng)
        f = cholesky(m)
        rhs = rng.standard_normal(10)
        x = f.solve(rhs)
        assert np.linalg.norm(m @ x - rhs) / np.linalg.norm(rhs) < 1e-8

    def test_dimension_mismatch(self):
        f = cholesky(np.eye(3))
        with pytest.raises(DimensionMismatch):
            f.solve(np.ones(4))


class TestPosteriorCovBlock:
    def test_identity_selectors_give_inverse(self, rng):
        m = random_spd(6, rng)
        f = cholesky(m)
        assert np.allclose(posterior_cov_block(f, np.eye(6), np.eye(6)),
                           np.linalg.inv(m), atol=1e-10)

    def test_dense_oracle_product(self, rng):
        d = rng.standard_normal((7, 8))
        m = d.T @ d + np.eye(8)
        f = cholesky(m)
        got = posterior_cov_block(f, d, d)
        want = d @ np.linalg.inv(m) @ d.T
        assert np.allclose(got, want, atol=1e-10)

    def test_unit_vectors_give_scalar_entry(self, rng):
        m = random_spd(5, rng)
        f = cholesky(m)
        inv = np.linalg.inv(m)
        e2 = np.zeros((1, 5)); e2[0, 2] = 1.0
        e4 = np.zeros((1, 5)); e4[0, 4] = 1.0
        assert posterior_cov_block(f, e2, e4)[0, 0] == pytest.approx(inv[2, 4])

    def test_dimension_mismatch(self):
        f = cholesky(np.eye(3))
        with pytest.raises(DimensionMismatch):
            posterior_cov_block(f, np.eye(4), np.eye(4))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=1, max_value=50), seed=st.integers(0, 2**31 - 1))
def test_solve_roundtrip_property(n, seed):
    rng = np.random.default_rng(seed)
    m = random_spd(n, rng)
    x = rng.standard_normal(n)
    f = cholesky(m)
    got = f.solve(m @ x)
    assert np.linalg.norm(got - x) <= 1e-8 * max(1.0, np.linalg.norm(x))
