"""Tests for the scale search and the bit budget ledger."""

import numpy as np
import pytest

from watersic.core import config
from watersic.core.errors import BracketMiss, DimensionMismatch, ExhaustedBudget, InvalidBracket
from watersic.core.matcore import LowerTriangular, cholesky
from watersic.quant.ratectl import (
    BudgetLedger,
    RateSearchConfig,
    allocate_budget,
    default_bracket,
    find_scale,
    min_sample_rows,
    refine_scale,
    scale_entropy,
    search_scale,
    subsample_rows,
)


@pytest.fixture
def gaussian_layer():
    """A 128x128 Gaussian layer with a random well-conditioned covariance factor."""
    rng = np.random.default_rng(42)
    m = rng.standard_normal((128, 128))
    l = cholesky(m @ m.T / 128 + np.eye(128))
    w = rng.standard_normal((128, 128))
    return w, l, w @ l.data


class TestRateSearchConfig:
    """Test search settings validation."""

    def test_config_defaults(self):
        """Test the defaults match the module constants."""
        cfg = RateSearchConfig(target_rate=3.0)
        assert (cfg.iterations, cfg.row_fraction, cfg.c_bracket) == (30, 0.10, None)

    def test_config_requires_keywords(self):
        """Test positional construction is refused."""
        with pytest.raises(TypeError):
            RateSearchConfig(3.0)

    def test_config_row_fraction(self):
        """Test the row fraction must lie in (0, 1]."""
        with pytest.raises(ValueError, match=r"row_fraction must lie in \(0, 1\], got 0"):
            RateSearchConfig(target_rate=3.0, row_fraction=0)

    def test_config_iterations(self):
        """Test at least one bisection step is required."""
        with pytest.raises(ValueError, match="iterations must be at least 1, got 0"):
            RateSearchConfig(target_rate=3.0, iterations=0)

    def test_config_inverted_bracket(self):
        """Test an inverted bracket is refused."""
        with pytest.raises(InvalidBracket, match="must satisfy 0 < c_lo < c_hi"):
            RateSearchConfig(target_rate=3.0, c_bracket=(2.0, 1.0))

    def test_config_spacing_mode(self):
        """Test an unknown spacing mode is refused."""
        with pytest.raises(ValueError, match="Unknown spacing mode 'hex'"):
            RateSearchConfig(target_rate=3.0, spacing_mode="hex")

    def test_config_entropy_mode(self):
        """Test an unknown entropy mode is refused."""
        with pytest.raises(ValueError, match="Unknown entropy mode 'row'"):
            RateSearchConfig(target_rate=3.0, entropy_mode="row")


class TestHelpers:
    """Test bracket and subsample helpers."""

    def test_default_bracket(self):
        """Test the bracket scales with the RMS of the target."""
        lo, hi = default_bracket(np.full((2, 2), 2.0))
        assert (lo, hi) == pytest.approx((2e-3, 128.0))

    def test_default_bracket_zero_target(self):
        """Test an all-zero target has no bracket."""
        with pytest.raises(InvalidBracket, match="identically zero"):
            default_bracket(np.zeros((3, 3)))

    def test_subsample_rows_full(self):
        """Test a fraction of one keeps every row."""
        np.testing.assert_array_equal(subsample_rows(7, 1.0, 0), np.arange(7))

    def test_subsample_rows_fraction(self):
        """Test ten percent of 100 rows gives 10 sorted distinct indices."""
        # Act
        rows = subsample_rows(100, 0.1, seed=3)

        # Assert
        assert rows.shape == (10,)
        assert np.all(np.diff(rows) > 0)

    def test_subsample_rows_is_seeded(self):
        """Test the same seed selects the same rows."""
        np.testing.assert_array_equal(subsample_rows(500, 0.2, 9), subsample_rows(500, 0.2, 9))

    def test_subsample_rows_at_least_one(self):
        """Test a tiny fraction still keeps one row."""
        assert subsample_rows(3, 0.01, 0).shape == (1,)

    def test_subsample_rows_min_rows(self):
        """Test the row floor overrides a smaller fraction."""
        rows = subsample_rows(100, 0.1, seed=3, min_rows=25)
        assert rows.shape == (25,)
        assert np.all(np.diff(rows) > 0)

    def test_subsample_rows_floor_covers_all(self):
        """Test a floor at the row count keeps every row in order."""
        np.testing.assert_array_equal(subsample_rows(20, 0.1, 3, min_rows=20), np.arange(20))

    def test_min_sample_rows_joint(self):
        """Test joint mode asks for 2^(target + 4) symbols spread over the columns."""
        assert min_sample_rows(4.0, 1000, 8, "joint") == 32

    def test_min_sample_rows_column(self):
        """Test column mode asks for 2^(target + 2) rows whatever the width."""
        assert min_sample_rows(4.0, 1000, 32, "column") == 64

    def test_min_sample_rows_capped(self):
        """Test a small layer needs all of its rows."""
        assert min_sample_rows(4.0, 16, 8, "joint") == 16

    def test_min_sample_rows_low_target(self):
        """Test a wide layer at a low target still keeps one row."""
        assert min_sample_rows(0.5, 1000, 4096, "joint") == 1

    def test_scale_entropy_falls_with_scale(self, gaussian_layer):
        """Test a coarser grid gives fewer bits."""
        _, l, y = gaussian_layer
        cfg = RateSearchConfig(target_rate=3.0)
        assert scale_entropy(y, l, 4.0, cfg) < scale_entropy(y, l, 0.5, cfg)


class TestSearchScale:
    """Test the binary search over the scale constant."""

    def test_search_scale_bracket_end(self):
        """Test a target equal to the entropy at c_lo returns c_lo."""
        # Arrange
        rng = np.random.default_rng(0)
        y = rng.standard_normal((20, 4))
        l = LowerTriangular.identity(4)
        at_low_end = RateSearchConfig(target_rate=1.0, row_fraction=1.0, c_bracket=(0.1, 10.0))
        target = scale_entropy(y, l, 0.1, at_low_end)
        cfg = RateSearchConfig(target_rate=target, row_fraction=1.0, c_bracket=(0.1, 10.0))

        # Act
        c, h = search_scale(y, l, y, cfg)

        # Assert
        assert c == 0.1
        assert h == target

    @pytest.mark.parametrize("target", [2.0, 3.0, 4.0])
    def test_search_scale_hits_target(self, gaussian_layer, target):
        """Test the full-matrix entropy lands within 0.05 bits of the target."""
        # Arrange
        w, l, y = gaussian_layer
        cfg = RateSearchConfig(target_rate=target, row_fraction=0.5, seed=1)

        # Act
        _, h = search_scale(w, l, y, cfg)

        # Assert
        assert abs(h - target) < 0.05

    def test_search_scale_full_rows_is_exact(self, gaussian_layer):
        """Test a row fraction of one reports the entropy the search converged on."""
        # Arrange
        w, l, y = gaussian_layer
        cfg = RateSearchConfig(target_rate=3.0, row_fraction=1.0)

        # Act
        c, h = search_scale(w, l, y, cfg)

        # Assert
        assert h == scale_entropy(y, l, c, cfg)
        assert abs(h - 3.0) < 0.01

    def test_search_scale_small_layer_default_fraction(self):
        """Test a 16x8 layer reaches the target when ten percent of rows could not."""
        # Arrange
        rng = np.random.default_rng(11)
        m = rng.standard_normal((8, 8))
        l = cholesky(m @ m.T / 8 + np.eye(8))
        w = rng.standard_normal((16, 8))
        y = w @ l.data
        cfg = RateSearchConfig(target_rate=4.0)

        # Act
        c, h = find_scale(w, l, y, cfg)

        # Assert
        assert h == scale_entropy(y, l, c, cfg)
        assert abs(h - 4.0) < 0.2

    def test_search_scale_column_mode_default_fraction(self):
        """Test column mode on a 128x32 layer reaches four bits at the default fraction."""
        # Arrange
        rng = np.random.default_rng(12)
        m = rng.standard_normal((32, 32))
        l = cholesky(m @ m.T / 32 + np.eye(32))
        w = rng.standard_normal((128, 32))
        y = w @ l.data
        cfg = RateSearchConfig(target_rate=4.0, entropy_mode="column")

        # Act
        c, h = find_scale(w, l, y, cfg)

        # Assert
        assert h == scale_entropy(y, l, c, cfg)
        assert abs(h - 4.0) <= config.RATE_SEARCH_TOLERANCE

    @pytest.mark.parametrize("target", [2.0, 3.0, 4.0])
    def test_search_scale_default_fraction(self, gaussian_layer, target):
        """Test the default row fraction lands within tolerance of the full-matrix target."""
        w, l, y = gaussian_layer
        _, h = search_scale(w, l, y, RateSearchConfig(target_rate=target, seed=2))
        assert abs(h - target) <= config.RATE_SEARCH_TOLERANCE

    def test_refine_scale_within_tolerance(self, gaussian_layer):
        """Test a point already on target is returned untouched."""
        _, l, y = gaussian_layer
        cfg = RateSearchConfig(target_rate=3.0)
        assert refine_scale(y, l, 0.7, 3.005, cfg) == (0.7, 3.005)

    @pytest.mark.parametrize("start", [0.05, 5.0])
    def test_refine_scale_corrects_on_full_matrix(self, gaussian_layer, start):
        """Test a scale on either side of the target is walked onto it."""
        # Arrange
        _, l, y = gaussian_layer
        cfg = RateSearchConfig(target_rate=3.0)
        h0 = scale_entropy(y, l, start, cfg)

        # Act
        c, h = refine_scale(y, l, start, h0, cfg)

        # Assert
        assert h == scale_entropy(y, l, c, cfg)
        assert abs(h - 3.0) <= config.RATE_SEARCH_TOLERANCE

    def test_search_scale_uniform_mode(self, gaussian_layer):
        """Test the search also serves the uniform grid."""
        w, l, y = gaussian_layer
        cfg = RateSearchConfig(target_rate=3.0, row_fraction=0.5, spacing_mode="uniform", lmmse=False)
        _, h = search_scale(w, l, y, cfg)
        assert abs(h - 3.0) < 0.05

    def test_search_scale_bracket_miss(self, gaussian_layer):
        """Test a target above the entropy at c_lo raises BracketMiss."""
        w, l, y = gaussian_layer
        cfg = RateSearchConfig(target_rate=100.0, c_bracket=(0.5, 4.0))
        with pytest.raises(BracketMiss, match="Target 100.0000 bits outside"):
            search_scale(w, l, y, cfg)

    def test_search_scale_shape_mismatch(self, gaussian_layer):
        """Test weights and target must have the same shape."""
        _, l, y = gaussian_layer
        with pytest.raises(DimensionMismatch, match="disagree"):
            search_scale(np.ones((3, 3)), l, y, RateSearchConfig(target_rate=3.0))

    def test_find_scale_widens_bracket(self, gaussian_layer, caplog):
        """Test a bracket that misses the target is widened until it holds it."""
        # Arrange
        w, l, y = gaussian_layer
        cfg = RateSearchConfig(target_rate=3.0, row_fraction=0.5, c_bracket=(100.0, 200.0))

        # Act
        with caplog.at_level("INFO", logger="watersic.quant.ratectl"):
            _, h = find_scale(w, l, y, cfg)

        # Assert
        assert abs(h - 3.0) < 0.05
        assert "Widening scale bracket" in caplog.text

    def test_find_scale_gives_up(self, gaussian_layer):
        """Test an unreachable target still raises after every widening."""
        w, l, y = gaussian_layer
        cfg = RateSearchConfig(target_rate=1000.0, row_fraction=0.1)
        with pytest.raises(BracketMiss, match="Target 1000.0000 bits outside"):
            find_scale(w, l, y, cfg)


class TestBudgetLedger:
    """Test the running bit budget."""

    def test_ledger_one_layer(self):
        """Test a single layer receives the global rate."""
        ledger = BudgetLedger.for_layers(3.0, [1000])
        assert allocate_budget(ledger, 1000) == pytest.approx(3.0)

    def test_ledger_even_split(self):
        """Test the second of two equal layers keeps the rate when the first spends its share."""
        # Arrange
        ledger = BudgetLedger.for_layers(4.0, [100, 100])

        # Act
        first = ledger.allocate(100)
        ledger.record(first, first * 100, 100)
        second = ledger.allocate(100)

        # Assert
        assert first == pytest.approx(4.0)
        assert second == pytest.approx(4.0)

    def test_ledger_redistributes_leftover(self):
        """Test bits a layer leaves unspent raise the next layer's rate."""
        # Arrange
        ledger = BudgetLedger.for_layers(4.0, [100, 100])

        # Act
        first = ledger.allocate(100)
        ledger.record(first, 200.0, 100)

        # Assert
        assert ledger.allocate(100) == pytest.approx(6.0)
        assert ledger.spent_bits == 200.0
        assert ledger.assignments == [(4.0, 200.0)]

    def test_ledger_exhausted_bits(self):
        """Test overspending leaves nothing for the next layer."""
        ledger = BudgetLedger.for_layers(1.0, [10, 10])
        ledger.record(1.0, 25.0, 10)
        with pytest.raises(ExhaustedBudget, match=r"Budget exhausted with 1 layer\(s\) remaining"):
            ledger.allocate(10)

    def test_ledger_no_layers_left(self):
        """Test allocating past the last layer."""
        ledger = BudgetLedger.for_layers(1.0, [10])
        ledger.record(1.0, 5.0, 10)
        with pytest.raises(ExhaustedBudget, match="Every layer has already been budgeted"):
            ledger.allocate(10)

    def test_ledger_layer_too_large(self):
        """Test a layer larger than the remaining parameter count."""
        ledger = BudgetLedger.for_layers(1.0, [10])
        with pytest.raises(ValueError, match="Layer has 11 parameters, only 10 remain budgeted"):
            ledger.allocate(11)

    def test_ledger_needs_layers(self):
        """Test an empty model cannot be budgeted."""
        with pytest.raises(ValueError, match="Need at least one layer to budget"):
            BudgetLedger.for_layers(1.0, [])
