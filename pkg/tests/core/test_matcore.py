"""Tests for the dense linear algebra primitives."""

import numpy as np
import pytest

from watersic.calibration.calib import CovarianceSet
from watersic.core.errors import AllDead, DimensionMismatch, NotPositiveDefinite
from watersic.core.matcore import (
    FeatureMask,
    LowerTriangular,
    as_dense,
    as_symmetric,
    cholesky,
    damp,
    detect_dead,
    expand,
    median_diagonal,
    reduce,
    solve_upper_right,
)


def random_spd(rng, n):
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


class TestValidation:
    """Test input conversion helpers."""

    def test_as_dense_rejects_vector(self):
        """Test a 1-D input is refused with its shape in the message."""
        with pytest.raises(DimensionMismatch, match=r"weights must be a non-empty 2-D matrix, got shape \(3,\)"):
            as_dense([1.0, 2.0, 3.0], "weights")

    def test_as_dense_rejects_nan(self):
        """Test NaN entries are refused."""
        with pytest.raises(ValueError, match="sigma contains NaN or infinite entries"):
            as_dense([[1.0, np.nan]], "sigma")

    def test_as_symmetric_rejects_rectangular(self):
        """Test a non-square matrix is refused."""
        with pytest.raises(DimensionMismatch, match=r"must be square, got shape \(2, 3\)"):
            as_symmetric(np.ones((2, 3)))

    def test_as_symmetric_is_exactly_symmetric(self):
        """Test the symmetrized copy is bit-for-bit symmetric."""
        # Arrange
        m = np.random.default_rng(0).standard_normal((5, 5))

        # Act
        sym = as_symmetric(m)

        # Assert
        assert np.array_equal(sym, sym.T)


class TestLowerTriangular:
    """Test the Cholesky factor wrapper."""

    def test_from_array_discards_upper_part(self):
        """Test entries above the diagonal are zeroed."""
        l = LowerTriangular.from_array([[2.0, 9.0], [1.0, 2.0]])
        assert np.array_equal(l.data, [[2.0, 0.0], [1.0, 2.0]])

    def test_from_array_rejects_non_positive_diagonal(self):
        """Test a zero pivot is refused."""
        with pytest.raises(NotPositiveDefinite, match="non-positive diagonal entry"):
            LowerTriangular.from_array([[1.0, 0.0], [1.0, 0.0]])

    def test_from_array_rejects_rectangular(self):
        """Test a rectangular factor is refused."""
        with pytest.raises(DimensionMismatch, match="must be square"):
            LowerTriangular.from_array(np.ones((2, 3)))

    def test_identity_log_geometric_mean_is_zero(self):
        """Test |I|^{1/n} = 1."""
        assert LowerTriangular.identity(4).log_geometric_mean() == 0.0

    def test_diag_is_a_copy(self):
        """Test modifying the returned diagonal leaves the factor intact."""
        l = LowerTriangular.identity(2)
        d = l.diag
        d[0] = 5.0
        assert l.data[0, 0] == 1.0


class TestCholesky:
    """Test cholesky factorization."""

    def test_cholesky_identity(self):
        """Test the factor of the identity is the identity."""
        assert np.array_equal(cholesky(np.eye(3)).data, np.eye(3))

    def test_cholesky_two_by_two(self):
        """Test [[4,2],[2,5]] factors as [[2,0],[1,2]]."""
        # Act
        l = cholesky([[4.0, 2.0], [2.0, 5.0]])

        # Assert
        np.testing.assert_allclose(l.data, [[2.0, 0.0], [1.0, 2.0]], rtol=1e-15)

    def test_cholesky_indefinite(self):
        """Test an indefinite matrix raises with guidance for the caller."""
        with pytest.raises(NotPositiveDefinite, match="not positive definite.*increase damping"):
            cholesky([[1.0, 2.0], [2.0, 1.0]])

    def test_cholesky_tiny_pivot(self):
        """Test a pivot below the relative floor is refused."""
        with pytest.raises(NotPositiveDefinite, match="Pivot 1 is"):
            cholesky(np.diag([1.0, 1e-20]))

    def test_cholesky_reconstruction_property(self):
        """Test L L^T reproduces random SPD inputs to 1e-10 relative error."""
        rng = np.random.default_rng(11)
        for _ in range(20):
            # Arrange
            h = random_spd(rng, int(rng.integers(1, 16)))

            # Act
            l = cholesky(h)

            # Assert
            assert np.linalg.norm(l.data @ l.data.T - h) <= 1e-10 * np.linalg.norm(h)
            assert np.all(l.diag > 0)


class TestSolveUpperRight:
    """Test the M (L^T)^{-1} triangular solve."""

    def test_solve_upper_right_identity(self):
        """Test the identity factor returns M."""
        m = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(solve_upper_right(m, LowerTriangular.identity(3)), m)

    def test_solve_upper_right_hand_example(self):
        """Test X L^T = [[2,3]] for L = [[2,0],[1,2]] gives X = [[1,1]]."""
        # Arrange
        l = LowerTriangular.from_array([[2.0, 0.0], [1.0, 2.0]])

        # Act
        x = solve_upper_right([[2.0, 3.0]], l)

        # Assert
        np.testing.assert_allclose(x, [[1.0, 1.0]], rtol=1e-15)
        np.testing.assert_allclose(x @ l.data.T, [[2.0, 3.0]], rtol=1e-15)

    def test_solve_upper_right_recovers_w_l(self):
        """Test W Sigma (L^T)^{-1} equals W L when Sigma = L L^T."""
        # Arrange
        rng = np.random.default_rng(3)
        sigma = random_spd(rng, 6)
        l = cholesky(sigma)
        w = rng.standard_normal((4, 6))

        # Act
        y = solve_upper_right(w @ sigma, l)

        # Assert
        np.testing.assert_allclose(y, w @ l.data, rtol=1e-10, atol=1e-12)

    def test_solve_upper_right_dimension_mismatch(self):
        """Test mismatched widths are refused."""
        with pytest.raises(DimensionMismatch, match="has 3 columns but factor has dimension 2"):
            solve_upper_right(np.ones((1, 3)), LowerTriangular.identity(2))


class TestDamp:
    """Test diagonal damping of a covariance set."""

    def test_damp_zero_returns_same_set(self):
        """Test zero damping is a no-op."""
        covs = CovarianceSet.collapsed(np.eye(3))
        assert damp(covs, 0.0) is covs

    def test_damp_identity(self):
        """Test identity(4) damped by 0.1 becomes 1.1 * identity(4)."""
        # Act
        damped = damp(CovarianceSet.collapsed(np.eye(4)), 0.1)

        # Assert
        np.testing.assert_allclose(damped.sigma_x, 1.1 * np.eye(4))
        np.testing.assert_allclose(damped.sigma_xhat, 1.1 * np.eye(4))
        np.testing.assert_allclose(damped.sigma_x_xhat, 1.1 * np.eye(4))

    def test_damp_uses_sigma_xhat_diagonal(self):
        """Test the shift is delta times the mean diagonal of Sigma_xhat."""
        # Arrange
        covs = CovarianceSet(np.eye(2), 3.0 * np.eye(2), np.eye(2))

        # Act
        damped = damp(covs, 0.5)

        # Assert
        np.testing.assert_allclose(np.diagonal(damped.sigma_x), [2.5, 2.5])
        np.testing.assert_allclose(np.diagonal(damped.sigma_xhat), [4.5, 4.5])

    def test_damp_leaves_residual_term(self):
        """Test Sigma_delta_xhat is untouched."""
        # Arrange
        delta = np.array([[0.1, -0.2, 0.3]])
        covs = CovarianceSet(np.eye(3), np.eye(3), np.eye(3), delta)

        # Act
        damped = damp(covs, 0.25)

        # Assert
        np.testing.assert_array_equal(damped.sigma_delta_xhat, delta)

    def test_damp_negative(self):
        """Test negative damping is refused."""
        with pytest.raises(ValueError, match="Damping must be non-negative, got -0.1"):
            damp(CovarianceSet.collapsed(np.eye(2)), -0.1)


class TestDetectDead:
    """Test dead-feature detection."""

    def test_detect_dead_middle(self):
        """Test diag [1, 1e-9, 2] marks only the middle feature dead."""
        mask = detect_dead(np.diag([1.0, 1e-9, 2.0]), 1e-3)
        assert mask.live.tolist() == [True, False, True]

    def test_detect_dead_all_equal(self):
        """Test an equal diagonal keeps every feature."""
        assert detect_dead(2.0 * np.eye(5)).live_count == 5

    def test_detect_dead_median_not_mean(self):
        """Test the even-length median governs the threshold."""
        # Arrange
        sigma = np.diag([1e6, 1.0, 1.0, 1e-2])

        # Act
        mask = detect_dead(sigma, 1e-3)

        # Assert
        assert median_diagonal(sigma) == 1.0
        assert mask.live_count == 4

    def test_detect_dead_zero_variance(self):
        """Test a zero diagonal entry is dead even with a zero median."""
        mask = detect_dead(np.diag([0.0, 0.0, 0.0, 1.0]))
        assert mask.live.tolist() == [False, False, False, True]

    def test_detect_dead_all_dead(self):
        """Test an all-zero diagonal raises AllDead."""
        with pytest.raises(AllDead, match="All 3 dimensions fall below"):
            detect_dead(np.zeros((3, 3)))


class TestReduceExpand:
    """Test dead-feature reduction and re-insertion."""

    def test_reduce_all_live(self):
        """Test an all-live mask keeps the matrix."""
        m = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(reduce(m, FeatureMask.all_live(3)), m)

    def test_reduce_drops_dead_column(self):
        """Test columns 0 and 2 survive mask [live, dead, live]."""
        # Arrange
        m = np.arange(6.0).reshape(2, 3)
        mask = FeatureMask([True, False, True])

        # Act
        out = reduce(m, mask)

        # Assert
        np.testing.assert_array_equal(out, [[0.0, 2.0], [3.0, 5.0]])

    def test_expand_reduce_zeroes_dead_column(self):
        """Test the round trip zeroes exactly column 1."""
        # Arrange
        w = np.arange(1.0, 7.0).reshape(2, 3)
        mask = FeatureMask([True, False, True])

        # Act
        out = expand(reduce(w, mask), mask)

        # Assert
        np.testing.assert_array_equal(out, [[1.0, 0.0, 3.0], [4.0, 0.0, 6.0]])

    def test_reduce_both_axes(self):
        """Test a covariance loses the dead row and column."""
        sigma = np.arange(9.0).reshape(3, 3)
        out = reduce(sigma, FeatureMask([False, True, True]), axes=(0, 1))
        np.testing.assert_array_equal(out, [[4.0, 5.0], [7.0, 8.0]])

    def test_expand_keeps_integer_dtype(self):
        """Test integer codes stay integer after expansion."""
        codes = np.array([[1, 2]], dtype=np.int32)
        out = expand(codes, FeatureMask([True, False, True]))
        assert out.dtype == np.int32

    def test_reduce_mismatch(self):
        """Test a mask of the wrong size is refused."""
        with pytest.raises(DimensionMismatch, match="Axis 1 has length 3 but mask has dimension 2"):
            reduce(np.ones((2, 3)), FeatureMask([True, True]))

    def test_expand_mismatch(self):
        """Test the reduced width must equal the live count."""
        with pytest.raises(DimensionMismatch, match="Axis 1 has length 3 but mask has 2 live entries"):
            expand(np.ones((2, 3)), FeatureMask([True, False, True]))

    def test_feature_mask_counts(self):
        """Test live and dead counts."""
        mask = FeatureMask([True, False, True, False])
        assert (mask.dim, mask.live_count, mask.dead_count) == (4, 2, 2)
        assert mask.live_indices.tolist() == [0, 2]
