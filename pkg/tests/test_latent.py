import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgmcheck import assemble_lgm, build_iid, build_rw1, build_sar, load_custom
from lgmcheck.datasets import load_columbus
from lgmcheck.errors import (
    DimensionMismatch,
    InvalidDimension,
    IsolatedNode,
    NonPositiveH,
    RhoOutOfRange,
)
from lgmcheck.latent import read_d_csv, save_custom, write_d_csv, write_h_csv
from lgmcheck.linalg import cholesky


def dense_d(structure, theta2=None):
    d = structure.d_matrix(theta2)
    return d.toarray() if hasattr(d, "toarray") else np.asarray(d)


class TestRw1:
    def test_n3_sigma2(self):
        s = build_rw1(3, 2.0)
        assert np.allclose(dense_d(s), 0.5 * np.array([[-1, 1, 0], [0, -1, 1]]))
        assert np.allclose(s.h, [1.0, 1.0])
        assert s.intrinsic

    def test_smallest_case(self):
        assert np.allclose(dense_d(build_rw1(2, 1.0)), [[-1.0, 1.0]])

    def test_rank_deficiency(self):
        s = build_rw1(100, 1.0)
        gram = s.prior_precision().toarray()
        assert np.linalg.matrix_rank(gram) == 99

    def test_invalid_dimension(self):
        with pytest.raises(InvalidDimension):
            build_rw1(1, 1.0)

    @given(n=st.integers(2, 60), sigma=st.floats(0.1, 10.0), c=st.floats(-5, 5))
    @settings(max_examples=30, deadline=None)
    def test_annihilates_constants(self, n, sigma, c):
        s = build_rw1(n, sigma)
        out = dense_d(s) @ np.full(n, c)
        assert np.all(out == 0.0)


class TestIid:
    def test_identity(self):
        assert np.allclose(dense_d(build_iid(2, 1.0)), np.eye(2))

    def test_scaled(self):
        assert np.allclose(dense_d(build_iid(3, 2.0)), np.diag([0.5, 0.5, 0.5]))

    @given(n=st.integers(1, 30), sigma=st.floats(0.1, 10.0))
    @settings(max_examples=20, deadline=None)
    def test_gram_identity(self, n, sigma):
        s = build_iid(n, sigma)
        gram = s.prior_precision().toarray()
        assert np.allclose(gram, np.eye(n) / sigma**2)


class TestSar:
    def test_two_node_path(self):
        s = build_sar([(1, 2)], 0.5, 1.0)
        assert np.allclose(dense_d(s), [[1.0, -0.5], [-0.5, 1.0]])

    def test_rho_zero_reduces_to_iid(self):
        s = build_sar([(1, 2), (2, 3)], 0.0, 2.0)
        assert np.allclose(dense_d(s), np.eye(3) / 2.0)

    def test_columbus_invertible_at_rho_06(self):
        edges = load_columbus()["edges"]
        s = build_sar(edges, 0.6, 1.0)
        cholesky(s.prior_precision())  # must not raise

    def test_row_sums_one(self):
        edges = load_columbus()["edges"]
        s = build_sar(edges, 0.3, 1.0)
        assert np.allclose(s.base.sum(axis=1), 1.0, atol=1e-12)

    def test_isolated_node(self):
        with pytest.raises(IsolatedNode):
            build_sar([(1, 2), (4, 4)], 0.2, 1.0)

    def test_rho_out_of_range(self):
        with pytest.raises(RhoOutOfRange):
            build_sar([(1, 2)], 1.5, 1.0)


class TestCustomIo:
    def test_identity_csv_equals_iid(self, tmp_path):
        dfile, hfile = tmp_path / "d.csv", tmp_path / "h.csv"
        write_d_csv(np.eye(4), dfile)
        write_h_csv(np.ones(4), hfile)
        s = load_custom(dfile, hfile)
        assert np.allclose(dense_d(s), dense_d(build_iid(4, 1.0)))
        assert np.allclose(s.h, build_iid(4, 1.0).h)

    def test_rw1_export_roundtrip_diagnostics(self, tmp_path):
        src = build_rw1(6, 1.7)
        save_custom(src, tmp_path / "d.csv", tmp_path / "h.csv")
        loaded = load_custom(tmp_path / "d.csv", tmp_path / "h.csv")
        assert np.allclose(dense_d(loaded), dense_d(src))
        assert loaded.intrinsic

    def test_nonpositive_h(self, tmp_path):
        write_d_csv(np.eye(2), tmp_path / "d.csv")
        write_h_csv(np.array([1.0, 0.0]), tmp_path / "h.csv")
        with pytest.raises(NonPositiveH):
            load_custom(tmp_path / "d.csv", tmp_path / "h.csv")

    @given(rows=st.integers(1, 6), cols=st.integers(1, 6),
           seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_bit_exact(self, tmp_path_factory, rows, cols, seed):
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((rows, cols)) * 10.0 ** rng.integers(-8, 8)
        tmp = tmp_path_factory.mktemp("io")
        write_d_csv(d, tmp / "d.csv")
        back = read_d_csv(tmp / "d.csv")
        assert back.shape == d.shape
        assert np.all(back == d)


class TestAssemble:
    def test_rw1_signal_plus_noise(self):
        lat = build_rw1(5, 1.0)
        m = assemble_lgm(np.zeros(5), None, "identity", lat)
        assert m.n_beta == 0 and m.n_w == 5

    def test_crime_model_shape(self):
        data = load_columbus()
        lat = build_sar(data["edges"], 0.2, 1.0)
        B = np.column_stack([np.ones(49), data["hoval"], data["inc"]])
        m = assemble_lgm(data["crime"], B, "identity", lat)
        assert m.n_beta == 3 and m.n_obs == 49

    def test_wrong_a_rows(self):
        lat = build_iid(4, 1.0)
        with pytest.raises(DimensionMismatch):
            assemble_lgm(np.zeros(3), None, np.eye(4), lat)
