"""Built-in invariant checks run by `watersic selftest`."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from watersic.calibration.calib import CovarianceSet
from watersic.coding.container import decode_container, encode_container
from watersic.coding.entropy_codec import SymbolHistogram, build_huffman, decode, encode, entropy_bits
from watersic.core import config
from watersic.core.matcore import LowerTriangular, cholesky, solve_upper_right
from watersic.quant.pipeline import QuantizeOptions, quantize_layer
from watersic.quant.rescaler import find_optimal_rescalers
from watersic.quant.ziccore import SpacingVector, reconstruct, sic_quantize, zsic
from watersic.theory.wtheory import Spectrum, highrate_rate, waterfill_rate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _random_spd(rng: np.random.Generator, n: int) -> np.ndarray:
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


def _random_factor(rng: np.random.Generator, n: int) -> LowerTriangular:
    return cholesky(_random_spd(rng, n))


def check_cholesky(rng: np.random.Generator) -> None:
    for _ in range(20):
        h = _random_spd(rng, int(rng.integers(1, 12)))
        l = cholesky(h)
        err = np.linalg.norm(l.data @ l.data.T - h) / np.linalg.norm(h)
        assert err <= config.RECONSTRUCTION_TOLERANCE, f"Cholesky error {err:.2e}"
        m = rng.standard_normal((3, l.dim))
        x = solve_upper_right(m, l)
        err = np.linalg.norm(x @ l.data.T - m) / np.linalg.norm(m)
        assert err <= config.RECONSTRUCTION_TOLERANCE, f"Triangular solve error {err:.2e}"


def check_fundamental_cell(rng: np.random.Generator) -> None:
    for _ in range(50):
        n = int(rng.integers(1, 8))
        l = _random_factor(rng, n)
        spacing = SpacingVector(rng.uniform(0.1, 2.0, n), 1.0)
        y = 5.0 * rng.standard_normal((200, n))
        z = zsic(y, l, spacing)
        residual = y - (z * spacing.alphas) @ l.data
        half = 0.5 * spacing.alphas * l.diag
        slack = 1e-9 * half
        assert np.all(residual >= -half - slack), "Residual below the cell"
        assert np.all(residual < half + slack), "Residual above the cell"


def check_shift_covariance(rng: np.random.Generator) -> None:
    for _ in range(50):
        n = int(rng.integers(1, 8))
        l = _random_factor(rng, n)
        spacing = SpacingVector(rng.uniform(0.5, 2.0, n), 1.0)
        y = rng.standard_normal((20, n))
        z0 = rng.integers(-20, 21, size=(20, n))
        shifted = y + (z0 * spacing.alphas) @ l.data
        assert np.array_equal(zsic(shifted, l, spacing), z0 + zsic(y, l, spacing)), "Shift changed codes"


def check_waterfilling(rng: np.random.Generator) -> None:
    for _ in range(50):
        spec = Spectrum(rng.uniform(0.1, 10.0, int(rng.integers(1, 16))), float(rng.uniform(0.5, 2.0)))
        d = float(rng.uniform(0.01, 0.99)) * float(np.min(spec.variances))
        gap = abs(waterfill_rate(spec, d).rate - highrate_rate(spec, d))
        assert gap < 1e-10, f"Waterfilling and high-rate formula differ by {gap:.2e}"


def check_huffman(rng: np.random.Generator) -> None:
    for _ in range(20):
        a, n = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        z = np.round(rng.standard_normal((a, n)) * rng.uniform(0.1, 10.0)).astype(np.int32)
        hist = SymbolHistogram.from_codes(z)
        table = build_huffman(hist)
        assert np.array_equal(decode(encode(z, table), table, a, n), z), "Huffman round trip failed"
        h, mean_len = entropy_bits(hist), table.average_length(hist)
        assert h - 1e-12 <= mean_len < h + 1 or hist.alphabet_size == 1, "Huffman length bound violated"


def check_rescaler(rng: np.random.Generator) -> None:
    for _ in range(5):
        w = rng.standard_normal((8, 8))
        covs = CovarianceSet.collapsed(_random_spd(rng, 8))
        l = cholesky(covs.sigma_xhat)
        spacing = SpacingVector(np.full(8, 0.5), 0.5)
        codes, gammas = sic_quantize(w @ l.data, l, spacing, lmmse=True)
        w_hat0 = reconstruct(codes, spacing, np.ones(8), np.ones(8))
        pair = find_optimal_rescalers(w_hat0, w, covs, gammas, ridge=0.0)
        steps = np.diff(pair.loss_history)
        assert np.all(steps <= 1e-12 * max(1.0, abs(pair.loss_history[0]))), "Rescaler loss increased"


def check_container(rng: np.random.Generator) -> None:
    w = rng.standard_normal((16, 12))
    covs = CovarianceSet.collapsed(_random_spd(rng, 12))
    layer = quantize_layer(w, covs, 0.3, QuantizeOptions())
    blob = encode_container(layer)
    assert blob == encode_container(layer), "Container encoding is not deterministic"
    decoded = decode_container(blob)
    assert np.array_equal(decoded.codes, layer.codes), "Container codes differ"


CHECKS: Tuple[Tuple[str, Callable[[np.random.Generator], None]], ...] = (
    ("cholesky", check_cholesky),
    ("fundamental-cell", check_fundamental_cell),
    ("shift-covariance", check_shift_covariance),
    ("waterfilling", check_waterfilling),
    ("huffman", check_huffman),
    ("rescaler", check_rescaler),
    ("container", check_container),
)


def run_selftest(seed: int = 0) -> List[CheckResult]:
    """Run every check with its own generator; a failure never stops the others."""
    results = []
    for index, (name, check) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, index])
        try:
            check(rng)
        except (AssertionError, ValueError, ArithmeticError) as e:
            logger.error("Self-check %s failed: %s", name, e)
            results.append(CheckResult(name, False, str(e)))
        else:
            logger.info("Self-check %s passed", name)
            results.append(CheckResult(name, True))
    return results
