import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opens.core import (
    Geometry,
    SymmetricCirculant,
    circulant_determinant,
    circulant_inverse_row_sum,
    quadratic_form_cn,
)
from opens.errors import GeometryError, RegimeWarning, SingularMatrixError


class TestGeometry:
    def test_valid(self):
        g = Geometry(10.0, 30.0, 130.0, 0.5, 4)
        assert g.ell2 == 100.0
        assert g.d == 20.0

    @pytest.mark.parametrize(
        "L,a,b",
        [(10.0, 10.0, 20.0), (10.0, 5.0, 20.0), (10.0, 30.0, 25.0), (-1.0, 3.0, 5.0)],
    )
    def test_ordering_rejected(self, L, a, b):
        with pytest.raises(GeometryError):
            Geometry(L, a, b, 0.5)

    def test_adjacent_intervals_rejected(self):
        # L = a (B starting where A ends) is not a valid layout
        with pytest.raises(GeometryError):
            Geometry(10.0, 10.0, 20.0, 0.5)

    def test_bad_cutoff_and_replicas(self):
        with pytest.raises(GeometryError):
            Geometry(10.0, 20.0, 30.0, 0.0)
        with pytest.raises(GeometryError):
            Geometry(10.0, 20.0, 30.0, 0.5, 0)

    def test_cutoff_regime_warning(self):
        with pytest.warns(RegimeWarning):
            Geometry(10.0, 20.0, 21.0, 0.6)


def dense_det(row):
    return np.linalg.det(SymmetricCirculant(row).dense())


class TestCirculant:
    def test_non_palindromic_rejected(self):
        with pytest.raises(ValueError):
            SymmetricCirculant([1.0, 2.0, 3.0])

    def test_det_1x1(self):
        assert circulant_determinant(SymmetricCirculant([3.5])) == pytest.approx(3.5)

    def test_det_2x2(self):
        d, o = 4.0, 1.5
        assert circulant_determinant(SymmetricCirculant([d, o])) == pytest.approx(d * d - o * o)

    def test_det_matches_dense_n4(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            half = rng.normal(size=3)
            row = [half[0] + 5.0, half[1], half[2], half[1]]
            c = SymmetricCirculant(row)
            assert circulant_determinant(c) == pytest.approx(dense_det(row), rel=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=16),
        seed=st.integers(min_value=0, max_value=10**6),
    )
    def test_det_matches_dense_property(self, n, seed):
        rng = np.random.default_rng(seed)
        half = rng.uniform(-1.0, 1.0, size=n // 2 + 1)
        row = [half[min(j, n - j)] for j in range(n)]
        row[0] += n + 2.0  # diagonally dominant: well conditioned
        c = SymmetricCirculant(row)
        assert circulant_determinant(c) == pytest.approx(dense_det(row), rel=1e-10)

    def test_inverse_row_sum_identity(self):
        row = [1.0] + [0.0] * 5
        assert circulant_inverse_row_sum(SymmetricCirculant(row)) == 1.0

    def test_inverse_row_sum_411(self):
        assert circulant_inverse_row_sum(SymmetricCirculant([4.0, 1.0, 1.0])) == pytest.approx(1.0 / 6.0)

    def test_inverse_row_sum_matches_dense(self):
        rng = np.random.default_rng(11)
        half = rng.uniform(-1.0, 1.0, size=3)
        row = [6.0, half[1], half[2], half[2], half[1]]
        c = SymmetricCirculant(row)
        inv = np.linalg.inv(c.dense())
        sums = inv.sum(axis=0)
        assert circulant_inverse_row_sum(c) == pytest.approx(sums[0], rel=1e-10)
        # column independence of the dense inverse row sums
        assert np.allclose(sums, sums[0], rtol=1e-10)

    def test_inverse_row_sum_singular(self):
        with pytest.raises(SingularMatrixError):
            circulant_inverse_row_sum(SymmetricCirculant([1.0, -0.5, -0.5]))


class TestQuadraticForm:
    def test_identity(self):
        assert quadratic_form_cn(np.eye(5)) == pytest.approx(5.0)

    def test_scalar(self):
        assert quadratic_form_cn(np.array([[4.0]])) == pytest.approx(0.25)

    def test_matches_explicit_inverse(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(3, 3))
        M = A @ A.T + 3.0 * np.eye(3)
        v = np.ones(3)
        expected = v @ np.linalg.inv(M) @ v
        assert quadratic_form_cn(M) == pytest.approx(expected, rel=1e-10)

    def test_circulant_identity(self):
        # v M^{-1} v^T = n * inverse row sum for any circulant
        row = [5.0, 0.7, -0.2, -0.2, 0.7]
        c = SymmetricCirculant(row)
        assert quadratic_form_cn(c.dense()) == pytest.approx(
            c.n * circulant_inverse_row_sum(c), rel=1e-12
        )

    def test_singular_reports(self):
        M = np.ones((3, 3))
        with pytest.raises(SingularMatrixError):
            quadratic_form_cn(M)
