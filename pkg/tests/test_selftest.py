"""Tests for the built-in invariant checks."""

import numpy as np

from watersic import selftest
from watersic.selftest import CHECKS, CheckResult, run_selftest


def test_run_selftest_all_pass():
    """Test every check passes on a healthy install."""
    # Act
    results = run_selftest(seed=0)

    # Assert
    assert [r.name for r in results] == [name for name, _ in CHECKS]
    assert all(r.passed for r in results), [r for r in results if not r.passed]


def test_run_selftest_other_seed():
    """Test the checks do not depend on a lucky seed."""
    assert all(r.passed for r in run_selftest(seed=123))


def test_run_selftest_reports_failure(mocker, caplog):
    """Test a failing check is reported and the rest still run."""
    # Arrange
    def broken(rng):
        raise AssertionError("Residual above the cell")

    calls = []
    mocker.patch.object(
        selftest,
        "CHECKS",
        (("broken", broken), ("fine", lambda rng: calls.append(rng))),
    )

    # Act
    with caplog.at_level("ERROR", logger="watersic.selftest"):
        results = run_selftest()

    # Assert
    assert results == [CheckResult("broken", False, "Residual above the cell"), CheckResult("fine", True)]
    assert len(calls) == 1
    assert "Self-check broken failed" in caplog.text


def test_run_selftest_catches_value_errors(mocker):
    """Test library errors count as failures instead of escaping."""
    def raises(rng):
        raise ValueError("bad input")

    mocker.patch.object(selftest, "CHECKS", (("values", raises),))
    assert run_selftest() == [CheckResult("values", False, "bad input")]


def test_run_selftest_generators_are_independent(mocker):
    """Test each check gets its own generator derived from the seed and its index."""
    # Arrange
    draws = []
    mocker.patch.object(
        selftest,
        "CHECKS",
        (("a", lambda rng: draws.append(rng.random())), ("b", lambda rng: draws.append(rng.random()))),
    )

    # Act
    run_selftest(seed=7)

    # Assert
    assert draws == [np.random.default_rng([7, 0]).random(), np.random.default_rng([7, 1]).random()]
