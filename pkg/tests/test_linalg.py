import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_spd, random_symmetric
from metaembed.errors import NotPositiveDefiniteError, ValidationError, ZeroRowWarning
from metaembed.linalg import (
    as_matrix,
    cholesky,
    column_means_and_center,
    gen_sym_eig,
    l2_normalize_rows,
    sym_eig_desc,
    thin_svd,
)

RT2 = math.sqrt(2.0)


class TestAsMatrix:
    def test_copies_and_casts(self):
        src = [[1, 2], [3, 4]]
        m = as_matrix(src)
        assert m.dtype == np.float64 and m.shape == (2, 2)

    def test_rejects_1d(self):
        with pytest.raises(ValidationError, match="2-dimensional"):
            as_matrix(np.ones(3))

    def test_rejects_empty(self):
        with pytest.raises(ValidationError, match="at least one row"):
            as_matrix(np.empty((0, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError, match="non-finite"):
            as_matrix([[1.0, np.nan]])

    def test_does_not_alias_input(self):
        src = np.ones((2, 2))
        m = as_matrix(src)
        m[0, 0] = 7.0
        assert src[0, 0] == 1.0


class TestThinSvd:
    def test_identity(self):
        u, s, v = thin_svd(np.eye(3))
        assert np.allclose(s, [1.0, 1.0, 1.0], atol=1e-12)
        assert np.allclose(u @ np.diag(s) @ v.T, np.eye(3), atol=1e-12)

    def test_diagonal_sorted_descending(self):
        _, s, _ = thin_svd(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(s, [3.0, 2.0, 1.0], atol=1e-12)

    def test_shapes_thin(self):
        u, s, v = thin_svd(np.ones((5, 3)))
        assert u.shape == (5, 3) and s.shape == (3,) and v.shape == (3, 3)
        u, s, v = thin_svd(np.ones((3, 5)))
        assert u.shape == (3, 3) and s.shape == (3,) and v.shape == (5, 3)

    def test_reconstruction_and_orthonormality(self, rng):
        for rows, cols in [(8, 5), (5, 8), (6, 6), (1, 4), (7, 1)]:
            m = rng.normal(size=(rows, cols)) * 10.0
            u, s, v = thin_svd(m)
            err = np.linalg.norm(u @ np.diag(s) @ v.T - m)
            assert err <= 1e-9 * np.linalg.norm(m)
            r = min(rows, cols)
            assert np.max(np.abs(u.T @ u - np.eye(r))) <= 1e-9
            assert np.max(np.abs(v.T @ v - np.eye(r))) <= 1e-9
            assert np.all(s >= 0) and np.all(np.diff(s) <= 0)

    def test_rank_deficient(self, rng):
        base = rng.normal(size=(6, 2))
        m = base @ rng.normal(size=(2, 5))
        u, s, v = thin_svd(m)
        assert np.sum(s > 1e-10 * s[0]) == 2
        assert np.linalg.norm(u @ np.diag(s) @ v.T - m) <= 1e-9 * np.linalg.norm(m)

    def test_truncation_beats_random_projections(self, rng):
        # the top-d right-singular directions are the best rank-d column
        # projection in Frobenius norm; no random subspace should win
        m = rng.normal(size=(12, 7))
        d = 3
        _, s, v = thin_svd(m)
        best = np.linalg.norm(m - (m @ v[:, :d]) @ v[:, :d].T)
        for _ in range(100):
            q, _ = np.linalg.qr(rng.normal(size=(7, d)))
            rand_err = np.linalg.norm(m - (m @ q) @ q.T)
            assert best <= rand_err + 1e-12


class TestSymEig:
    def test_characteristic_polynomial_oracle(self):
        res = sym_eig_desc([[2.0, 1.0], [1.0, 2.0]])
        assert np.allclose(res.values, [3.0, 1.0], atol=1e-12)
        expect = np.array([[1.0 / RT2, 1.0 / RT2], [1.0 / RT2, -1.0 / RT2]])
        assert np.allclose(res.vectors, expect, atol=1e-12)

    def test_residual_and_orthonormality(self, rng):
        a = random_symmetric(rng, 9) * 5.0
        values, vectors = sym_eig_desc(a)
        for k in range(9):
            resid = np.linalg.norm(a @ vectors[:, k] - values[k] * vectors[:, k])
            assert resid <= 1e-8 * (1.0 + abs(values[k]))
        assert np.max(np.abs(vectors.T @ vectors - np.eye(9))) <= 1e-9
        assert np.all(np.diff(values) <= 1e-12)

    def test_trace_equals_eigenvalue_sum(self, rng):
        a = random_symmetric(rng, 7)
        values, _ = sym_eig_desc(a)
        assert abs(values.sum() - np.trace(a)) <= 1e-9 * max(1.0, abs(np.trace(a)))

    def test_sign_convention(self, rng):
        _, vectors = sym_eig_desc(random_symmetric(rng, 6))
        lead = np.argmax(np.abs(vectors), axis=0)
        assert np.all(vectors[lead, np.arange(6)] > 0)

    def test_rejects_asymmetric_naming_the_gap(self):
        with pytest.raises(ValidationError, match="max asymmetry"):
            sym_eig_desc([[1.0, 2.0], [0.0, 1.0]])

    def test_rejects_non_square(self):
        with pytest.raises(ValidationError, match="square"):
            sym_eig_desc(np.ones((2, 3)))

    def test_repeat_calls_are_bitwise_identical(self, rng):
        a = random_symmetric(rng, 8)
        r1 = sym_eig_desc(a)
        r2 = sym_eig_desc(a)
        assert r1.values.tobytes() == r2.values.tobytes()
        assert r1.vectors.tobytes() == r2.vectors.tobytes()


class TestCholesky:
    def test_diagonal_oracle_exact(self):
        low = cholesky(np.diag([4.0, 9.0]))
        assert np.array_equal(low, np.diag([2.0, 3.0]))

    def test_hand_oracle_exact(self):
        low = cholesky([[4.0, 2.0], [2.0, 10.0]])
        assert np.array_equal(low, [[2.0, 0.0], [1.0, 3.0]])

    def test_reconstruction(self, rng):
        a = random_spd(rng, 8)
        low = cholesky(a)
        assert np.linalg.norm(low @ low.T - a) <= 1e-9 * np.linalg.norm(a)
        assert np.array_equal(np.triu(low, 1), np.zeros_like(low))

    def test_matches_backend(self, rng):
        a = random_spd(rng, 6)
        assert np.allclose(cholesky(a), np.linalg.cholesky(a), atol=1e-9)

    def test_indefinite_names_pivot(self):
        with pytest.raises(NotPositiveDefiniteError) as exc:
            cholesky([[1.0, 2.0], [2.0, 1.0]])
        assert exc.value.pivot_index == 1
        assert exc.value.pivot_value == pytest.approx(-3.0)
        assert "pivot 1" in str(exc.value)

    def test_zero_matrix_fails_at_first_pivot(self):
        with pytest.raises(NotPositiveDefiniteError) as exc:
            cholesky(np.zeros((3, 3)))
        assert exc.value.pivot_index == 0


class TestGenSymEig:
    def test_identity_metric_matches_plain_eig(self, rng):
        c = random_symmetric(rng, 5)
        plain = sym_eig_desc(c)
        gen = gen_sym_eig(c, np.eye(5))
        assert np.allclose(gen.values, plain.values, atol=1e-10)
        assert np.allclose(gen.vectors, plain.vectors, atol=1e-9)

    def test_scaled_identity_oracle(self):
        res = gen_sym_eig([[0.0, 1.0], [1.0, 0.0]], [[2.0, 0.0], [0.0, 2.0]])
        assert np.allclose(res.values, [0.5, -0.5], atol=1e-12)
        assert np.allclose(res.vectors, [[0.5, 0.5], [0.5, -0.5]], atol=1e-12)

    def test_residual_bound_and_b_orthonormality(self, rng):
        c = random_symmetric(rng, 7) * 3.0
        b = random_spd(rng, 7)
        values, vectors = gen_sym_eig(c, b)
        bnorm = np.linalg.norm(b)
        for k in range(7):
            resid = np.linalg.norm(c @ vectors[:, k] - values[k] * (b @ vectors[:, k]))
            assert resid <= 1e-7 * (1.0 + abs(values[k])) * bnorm
        assert np.max(np.abs(vectors.T @ b @ vectors - np.eye(7))) <= 1e-8

    def test_indefinite_metric_rejected(self, rng):
        c = random_symmetric(rng, 3)
        with pytest.raises(NotPositiveDefiniteError):
            gen_sym_eig(c, [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError, match="same shape"):
            gen_sym_eig(np.eye(2), np.eye(3))


class TestCentering:
    def test_centered_means_are_tiny(self, rng):
        a = rng.normal(size=(40, 6)) * 7.0 + 3.0
        means, centered = column_means_and_center(a)
        assert np.max(np.abs(centered.mean(axis=0))) <= 1e-12
        assert np.allclose(means + centered, a, atol=1e-9)

    def test_large_magnitude_columns(self, rng):
        a = 1e8 + rng.normal(size=(50, 4))
        _, centered = column_means_and_center(a)
        assert np.max(np.abs(centered.mean(axis=0))) <= 1e-12

    def test_single_row(self):
        means, centered = column_means_and_center([[3.0, -1.0]])
        assert np.allclose(means, [3.0, -1.0])
        assert np.allclose(centered, 0.0, atol=1e-15)


class TestL2Normalize:
    def test_unit_norms(self, rng):
        x = rng.normal(size=(30, 5)) * np.logspace(-3, 3, 30)[:, None]
        y = l2_normalize_rows(x)
        assert np.max(np.abs(np.einsum("ij,ij->i", y, y) - 1.0)) <= 1e-12

    def test_bitwise_idempotent(self, rng):
        x = rng.normal(size=(25, 4)) * np.logspace(-2, 4, 25)[:, None]
        once = l2_normalize_rows(x)
        twice = l2_normalize_rows(once)
        assert once.tobytes() == twice.tobytes()

    def test_zero_row_passes_through_with_warning(self):
        x = np.array([[3.0, 4.0], [0.0, 0.0]])
        with pytest.warns(ZeroRowWarning):
            y = l2_normalize_rows(x)
        assert np.allclose(y[0], [0.6, 0.8], atol=1e-15)
        assert np.array_equal(y[1], [0.0, 0.0])

    def test_exact_unit_row_untouched(self):
        x = np.zeros((1, 3))
        x[0, 1] = 1.0
        y = l2_normalize_rows(x)
        assert y.tobytes() == x.tobytes()

    def test_direction_preserved(self, rng):
        x = rng.normal(size=(10, 3))
        y = l2_normalize_rows(x)
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        assert np.allclose(y, x / norms, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_l2_normalize_property(x):
    sq = np.einsum("ij,ij->i", x, x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroRowWarning)
        y = l2_normalize_rows(x)
    nonzero = sq > 0
    out = np.einsum("ij,ij->i", y, y)
    assert np.all(np.abs(out[nonzero] - 1.0) <= 1e-12)
    assert np.all(out[~nonzero] == 0.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-100, 100, allow_nan=False)))
def test_sym_eig_trace_property(a):
    sym = 0.5 * (a + a.T)
    values, _ = sym_eig_desc(sym)
    scale = max(1.0, float(np.max(np.abs(sym))))
    assert abs(values.sum() - np.trace(sym)) <= 1e-8 * scale
