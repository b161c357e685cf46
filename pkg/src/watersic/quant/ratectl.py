"""Rate control: binary search over the scale constant and the running bit budget."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from watersic.coding.entropy_codec import layer_entropy
from watersic.core import config
from watersic.core.errors import BracketMiss, DimensionMismatch, ExhaustedBudget, InvalidBracket
from watersic.core.matcore import LowerTriangular, as_dense
from watersic.quant.ziccore import sic_quantize, spacing_for_scale

logger = logging.getLogger(__name__)


@dataclass(kw_only=True)
class RateSearchConfig:
    """Settings of one scale search; entropy is measured in bits per coded weight."""

    target_rate: float
    iterations: int = config.RATE_SEARCH_ITERATIONS
    row_fraction: float = config.RATE_SEARCH_ROW_FRACTION
    c_bracket: Optional[Tuple[float, float]] = None
    seed: int = 0
    spacing_mode: str = config.SPACING_WATERSIC
    lmmse: bool = True
    entropy_mode: str = config.ENTROPY_JOINT

    def __post_init__(self):
        if not 0 < self.row_fraction <= 1:
            raise ValueError(f"row_fraction must lie in (0, 1], got {self.row_fraction}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be at least 1, got {self.iterations}")
        if self.c_bracket is not None:
            lo, hi = self.c_bracket
            if not 0 < lo < hi:
                raise InvalidBracket(f"Scale bracket ({lo}, {hi}) must satisfy 0 < c_lo < c_hi")
        if self.spacing_mode not in config.SPACING_MODES:
            raise ValueError(f"Unknown spacing mode {self.spacing_mode!r}")
        if self.entropy_mode not in config.ENTROPY_MODES:
            raise ValueError(f"Unknown entropy mode {self.entropy_mode!r}")


def default_bracket(y_hat) -> Tuple[float, float]:
    """(BRACKET_LOW_FACTOR * rms, BRACKET_HIGH_FACTOR * rms) of the target entries."""
    rms = float(np.sqrt(np.mean(np.square(as_dense(y_hat, "target")))))
    if rms == 0:
        raise InvalidBracket("Target matrix is identically zero; no scale bracket exists")
    return config.BRACKET_LOW_FACTOR * rms, config.BRACKET_HIGH_FACTOR * rms


def min_sample_rows(target: float, rows: int, cols: int, entropy_mode: str) -> int:
    """
    Fewest sampled rows whose codes can express the target entropy.

    A plug-in entropy over N symbols never exceeds log2(N) and reads low well before
    that, so joint mode asks for 2^(target + RATE_SEARCH_JOINT_MARGIN_BITS) symbols and
    column mode for 2^(target + RATE_SEARCH_COLUMN_MARGIN_BITS) rows. Capped at rows.
    """
    if entropy_mode == config.ENTROPY_COLUMN:
        need = target + config.RATE_SEARCH_COLUMN_MARGIN_BITS
    else:
        need = target + config.RATE_SEARCH_JOINT_MARGIN_BITS - math.log2(cols)
    if need >= math.log2(rows):
        return rows
    return max(1, int(math.ceil(2.0**need)))


def subsample_rows(rows: int, fraction: float, seed: int, min_rows: int = 1) -> np.ndarray:
    """Sorted row indices drawn without replacement; all rows when the draw would cover them."""
    k = max(min_rows, 1, int(math.ceil(fraction * rows)))
    if fraction >= 1.0 or k >= rows:
        return np.arange(rows)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(rows, size=k, replace=False))


def scale_entropy(y, l_hat: LowerTriangular, c: float, cfg: RateSearchConfig) -> float:
    """Entropy of the codes produced at scale constant c."""
    codes, _ = sic_quantize(y, l_hat, spacing_for_scale(l_hat, c, cfg.spacing_mode), lmmse=cfg.lmmse)
    return layer_entropy(codes, cfg.entropy_mode)


def search_scale(w, l_hat: LowerTriangular, y_hat, cfg: RateSearchConfig) -> Tuple[float, float]:
    """
    Find the scale constant whose code entropy matches the target rate.

    Entropy falls monotonically with c, so the search bisects log(c) on a fixed row
    subsample for cfg.iterations steps and keeps whichever bracket end lies closer to
    the target. The subsample holds at least min_sample_rows rows. The result is then
    corrected on the full matrix by refine_scale.

    Args:
        w: Weight matrix (only its shape is used)
        l_hat: Cholesky factor of the damped reduced Sigma_xhat
        y_hat: Drift-corrected target
        cfg: Search settings

    Returns:
        Tuple of (c*, full-matrix entropy at c*)

    Raises:
        BracketMiss: If the target entropy lies outside the entropies at the bracket ends
    """
    y = as_dense(y_hat, "target")
    if np.shape(w) != y.shape:
        raise DimensionMismatch(f"Weights {np.shape(w)} and target {y.shape} disagree")
    c_lo, c_hi = cfg.c_bracket or default_bracket(y)
    target = cfg.target_rate
    floor = min_sample_rows(target, y.shape[0], y.shape[1], cfg.entropy_mode)
    rows = subsample_rows(y.shape[0], cfg.row_fraction, cfg.seed, min_rows=floor)
    y_sub = y[rows]

    h_lo = scale_entropy(y_sub, l_hat, c_lo, cfg)
    h_hi = scale_entropy(y_sub, l_hat, c_hi, cfg)
    if not h_hi <= target <= h_lo:
        raise BracketMiss(
            f"Target {target:.4f} bits outside [{h_hi:.4f}, {h_lo:.4f}] for c in [{c_lo:.4g}, {c_hi:.4g}]"
        )

    if h_lo == target:
        best, h_best = c_lo, h_lo
    elif h_hi == target:
        best, h_best = c_hi, h_hi
    else:
        lo, hi = math.log(c_lo), math.log(c_hi)
        for step in range(cfg.iterations):
            mid = 0.5 * (lo + hi)
            h = scale_entropy(y_sub, l_hat, math.exp(mid), cfg)
            logger.debug("Rate search step %d: c=%.6g H=%.5f", step + 1, math.exp(mid), h)
            if h > target:
                lo, h_lo = mid, h
            else:
                hi, h_hi = mid, h
        if abs(h_lo - target) <= abs(h_hi - target):
            best, h_best = math.exp(lo), h_lo
        else:
            best, h_best = math.exp(hi), h_hi

    full = h_best if rows.size == y.shape[0] else scale_entropy(y, l_hat, best, cfg)
    logger.debug(
        "Scale %.6g from %d of %d rows: full-matrix entropy %.5f for target %.5f",
        best,
        rows.size,
        y.shape[0],
        full,
        target,
    )
    return refine_scale(y, l_hat, best, full, cfg)


def refine_scale(y, l_hat: LowerTriangular, c: float, h: float, cfg: RateSearchConfig) -> Tuple[float, float]:
    """
    Correct c on the full matrix until its entropy is within RATE_SEARCH_TOLERANCE of the target.

    The first trial moves log(c) by (h - target) * ln 2 (one bit per doubling of c at
    high rate); the step doubles until the target is straddled, then the straddling
    pair is bisected for at most cfg.iterations steps.

    Args:
        y: Full target matrix
        l_hat: Cholesky factor of the damped reduced Sigma_xhat
        c: Starting scale constant
        h: Full-matrix entropy at c
        cfg: Search settings

    Returns:
        Tuple of (c, entropy) for the closest point evaluated
    """
    target = cfg.target_rate
    tol = config.RATE_SEARCH_TOLERANCE
    best_c, best_h = c, h

    def evaluate(log_c: float) -> float:
        nonlocal best_c, best_h
        value = scale_entropy(y, l_hat, math.exp(log_c), cfg)
        logger.debug("Full-matrix refinement: c=%.6g H=%.5f", math.exp(log_c), value)
        if abs(value - target) < abs(best_h - target):
            best_c, best_h = math.exp(log_c), value
        return value

    near = (math.log(c), h)
    far = None
    step = (h - target) * math.log(2.0)
    for _ in range(config.BRACKET_MAX_WIDENINGS):
        if abs(best_h - target) <= tol:
            return best_c, best_h
        log_c = near[0] + step
        trial = (log_c, evaluate(log_c))
        if (trial[1] - target) * (near[1] - target) <= 0:
            far = trial
            break
        near = trial
        step *= 2.0

    if far is not None:
        lo, hi = sorted((near, far))
        for _ in range(cfg.iterations):
            if abs(best_h - target) <= tol:
                break
            mid = 0.5 * (lo[0] + hi[0])
            h_mid = evaluate(mid)
            if h_mid > target:
                lo = (mid, h_mid)
            else:
                hi = (mid, h_mid)

    if abs(best_h - target) > tol:
        logger.info(
            "Full-matrix entropy %.5f is the closest reachable to target %.5f", best_h, target
        )
    return best_c, best_h


def find_scale(w, l_hat: LowerTriangular, y_hat, cfg: RateSearchConfig) -> Tuple[float, float]:
    """
    search_scale with geometric bracket widening.

    On BracketMiss both ends move outward by BRACKET_WIDEN_FACTOR, up to
    BRACKET_MAX_WIDENINGS times.
    """
    c_lo, c_hi = cfg.c_bracket or default_bracket(y_hat)
    for attempt in range(config.BRACKET_MAX_WIDENINGS + 1):
        trial = dataclasses.replace(cfg, c_bracket=(c_lo, c_hi))
        try:
            return search_scale(w, l_hat, y_hat, trial)
        except BracketMiss:
            if attempt == config.BRACKET_MAX_WIDENINGS:
                raise
            c_lo /= config.BRACKET_WIDEN_FACTOR
            c_hi *= config.BRACKET_WIDEN_FACTOR
            logger.info("Widening scale bracket to [%.4g, %.4g]", c_lo, c_hi)
    raise BracketMiss("Bracket widening exhausted")  # pragma: no cover


@dataclass
class BudgetLedger:
    """Running bit budget shared by the layers of a model, quantized in order."""

    total_bits: float
    remaining_bits: float
    layers_remaining: int
    params_remaining: int
    assignments: List[Tuple[float, float]] = field(default_factory=list)

    @staticmethod
    def for_layers(global_rate: float, param_counts: Sequence[int]) -> BudgetLedger:
        """Ledger holding global_rate bits for every parameter of the given layers."""
        if not param_counts:
            raise ValueError("Need at least one layer to budget")
        params = int(sum(param_counts))
        total = float(global_rate) * params
        return BudgetLedger(
            total_bits=total,
            remaining_bits=total,
            layers_remaining=len(param_counts),
            params_remaining=params,
        )

    @property
    def spent_bits(self) -> float:
        return float(sum(bits for _, bits in self.assignments))

    def allocate(self, layer_param_count: int) -> float:
        """
        Per-weight rate for the next layer: an even share of what is left.

        Raises:
            ExhaustedBudget: If no layers remain or no bits are left
        """
        if self.layers_remaining < 1:
            raise ExhaustedBudget("Every layer has already been budgeted")
        if self.remaining_bits <= 0:
            raise ExhaustedBudget(
                f"Budget exhausted with {self.layers_remaining} layer(s) remaining"
            )
        if layer_param_count > self.params_remaining:
            raise ValueError(
                f"Layer has {layer_param_count} parameters, only {self.params_remaining} remain budgeted"
            )
        return self.remaining_bits / self.params_remaining

    def record(self, target_rate: float, bits_spent: float, layer_param_count: int) -> None:
        """Charge a coded layer against the budget."""
        self.assignments.append((float(target_rate), float(bits_spent)))
        self.remaining_bits -= bits_spent
        self.layers_remaining -= 1
        self.params_remaining -= layer_param_count


def allocate_budget(ledger: BudgetLedger, layer_param_count: int) -> float:
    """Target bits per weight for the next layer (see BudgetLedger.allocate)."""
    return ledger.allocate(layer_param_count)
