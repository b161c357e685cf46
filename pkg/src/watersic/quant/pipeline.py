"""End-to-end quantization of one layer and of a sequence of layers under a bit budget."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from watersic.calibration.calib import CovarianceSet, drift_target
from watersic.coding.entropy_codec import effective_rate, layer_entropy
from watersic.core import config
from watersic.core.errors import DimensionMismatch, ExhaustedBudget
from watersic.core.matcore import (
    FeatureMask,
    LowerTriangular,
    as_dense,
    cholesky,
    damp,
    detect_dead,
    expand,
    reduce,
)
from watersic.quant.ratectl import BudgetLedger, RateSearchConfig, allocate_budget, find_scale
from watersic.quant.rescaler import find_optimal_rescalers
from watersic.quant.ziccore import layer_distortion, reconstruct, sic_quantize, spacing_for_scale

logger = logging.getLogger(__name__)


@dataclass(kw_only=True)
class QuantizeOptions:
    """Per-layer switches; defaults give the full WaterSIC pipeline."""

    damping: float = config.DEFAULT_DAMPING
    dead_tau: float = config.DEAD_FEATURE_TAU
    spacing_mode: str = config.SPACING_WATERSIC
    lmmse: bool = True
    rescaler: bool = True
    entropy_mode: str = config.ENTROPY_JOINT
    rescaler_eps: float = config.RESCALER_EPS
    rescaler_max_iters: int = config.RESCALER_MAX_ITERS
    ridge: Optional[float] = None

    def __post_init__(self):
        if self.damping < 0:
            raise ValueError(f"Damping must be non-negative, got {self.damping}")
        if self.spacing_mode not in config.SPACING_MODES:
            raise ValueError(
                f"Unknown spacing mode {self.spacing_mode!r}; expected one of {config.SPACING_MODES}"
            )
        if self.entropy_mode not in config.ENTROPY_MODES:
            raise ValueError(
                f"Unknown entropy mode {self.entropy_mode!r}; expected one of {config.ENTROPY_MODES}"
            )


@dataclass(eq=False)
class PreparedLayer:
    """Setup shared by every quantization pass of a layer at different scales."""

    w: np.ndarray
    covs: CovarianceSet
    mask: FeatureMask
    w_live: np.ndarray
    covs_live: CovarianceSet
    l_hat: LowerTriangular
    y_hat: np.ndarray


@dataclass(eq=False)
class QuantizedLayer:
    """
    Output of a layer quantization, expanded back to the full input dimension.

    Dead columns carry zero codes, zero spacing and zero gain.
    """

    codes: np.ndarray
    alphas: np.ndarray
    gammas: np.ndarray
    t: np.ndarray
    mask: FeatureMask
    scale_c: float
    entropy: float
    effective_rate: float
    achieved_distortion: float
    spacing_mode: str = config.SPACING_WATERSIC
    entropy_mode: str = config.ENTROPY_JOINT

    @property
    def rows(self) -> int:
        return int(self.codes.shape[0])

    @property
    def cols(self) -> int:
        return int(self.codes.shape[1])

    @property
    def live_codes(self) -> np.ndarray:
        return reduce(self.codes, self.mask, axes=(1,))

    @property
    def column_scales(self) -> np.ndarray:
        """Fused alpha_j * gamma_j of the live columns."""
        return reduce(self.alphas * self.gammas, self.mask, axes=(0,))

    @property
    def bits_spent(self) -> float:
        """Coded bits: entropy over live symbols plus one 16-bit scalar per row and column."""
        coded = self.entropy * self.rows * self.mask.live_count
        return coded + config.SIDE_INFO_BITS * (self.rows + self.cols)

    def reconstruct(self) -> np.ndarray:
        return reconstruct(self.codes, self.alphas, self.gammas, self.t)


def prepare_layer(w, covs: CovarianceSet, options: Optional[QuantizeOptions] = None) -> PreparedLayer:
    """
    Dead-feature erasure, damping, Cholesky of Sigma_xhat and the drift-corrected target.

    Raises:
        DimensionMismatch: If W and the covariances disagree on n
        AllDead: If every input dimension is dead
        NotPositiveDefinite: If the damped reduced Sigma_xhat cannot be factored
    """
    opts = options or QuantizeOptions()
    w = as_dense(w, "weights")
    if w.shape[1] != covs.dim:
        raise DimensionMismatch(
            f"Weights have {w.shape[1]} columns, covariances have dimension {covs.dim}"
        )
    mask = detect_dead(covs.sigma_x, opts.dead_tau)
    if mask.dead_count:
        logger.info("Erasing %d dead feature(s) of %d", mask.dead_count, mask.dim)

    covs_live = covs.reduced(mask)
    w_live = reduce(w, mask, axes=(1,))
    damped = damp(covs_live, opts.damping)
    l_hat = cholesky(damped.sigma_xhat)
    y_hat = drift_target(w_live, damped, l_hat)
    return PreparedLayer(
        w=w, covs=covs, mask=mask, w_live=w_live, covs_live=covs_live, l_hat=l_hat, y_hat=y_hat
    )


def quantize_prepared(
    prepared: PreparedLayer, scale_c: float, options: Optional[QuantizeOptions] = None
) -> QuantizedLayer:
    """
    ZSIC (with optional LMMSE), rate computation and rescaler fitting at a fixed scale.

    The rescaler fits the undamped reduced covariances, starting from (t, gamma) =
    (1, gamma_lmmse).
    """
    opts = options or QuantizeOptions()
    spacing = spacing_for_scale(prepared.l_hat, scale_c, opts.spacing_mode)
    codes, gammas = sic_quantize(prepared.y_hat, prepared.l_hat, spacing, lmmse=opts.lmmse)
    a = prepared.w.shape[0]
    t = np.ones(a)

    if opts.rescaler and not codes.any():
        logger.info("Every code is zero at c=%.5g; keeping unit row gains", scale_c)
    elif opts.rescaler:
        active = np.flatnonzero(codes.any(axis=1))
        if active.size < a:
            logger.debug("%d all-zero code row(s) keep unit row gains", a - active.size)
        w_hat0 = reconstruct(codes[active], spacing, np.ones(spacing.dim), np.ones(active.size))
        pair = find_optimal_rescalers(
            w_hat0,
            prepared.w_live[active],
            prepared.covs_live.row_subset(active),
            gammas,
            eps=opts.rescaler_eps,
            ridge=opts.ridge,
            max_iters=opts.rescaler_max_iters,
        )
        t[active] = pair.t
        gammas = pair.gamma

    mask = prepared.mask
    entropy = layer_entropy(codes, opts.entropy_mode)
    layer = QuantizedLayer(
        codes=expand(codes, mask, axes=(1,)),
        alphas=expand(spacing.alphas, mask, axes=(0,)),
        gammas=expand(gammas, mask, axes=(0,)),
        t=t,
        mask=mask,
        scale_c=float(scale_c),
        entropy=entropy,
        effective_rate=effective_rate(entropy, a, prepared.w.shape[1]),
        achieved_distortion=0.0,
        spacing_mode=opts.spacing_mode,
        entropy_mode=opts.entropy_mode,
    )
    layer.achieved_distortion = layer_distortion(prepared.w, layer.reconstruct(), prepared.covs.sigma_x)
    return layer


def quantize_layer(
    w, covs: CovarianceSet, scale_c: float, options: Optional[QuantizeOptions] = None
) -> QuantizedLayer:
    """
    Quantize one layer at a given scale constant.

    Args:
        w: Weights, a x n
        covs: Calibration covariances of dimension n
        scale_c: Cell constant c (spacing alpha_i = c / l_ii in watersic mode)
        options: Pipeline switches

    Returns:
        QuantizedLayer over all n columns
    """
    opts = options or QuantizeOptions()
    layer = quantize_prepared(prepare_layer(w, covs, opts), scale_c, opts)
    logger.info(
        "Quantized %dx%d layer: c=%.5g H=%.4f R_eff=%.4f D=%.4e dead=%d",
        layer.rows,
        layer.cols,
        layer.scale_c,
        layer.entropy,
        layer.effective_rate,
        layer.achieved_distortion,
        layer.mask.dead_count,
    )
    return layer


def quantize_to_rate(
    w,
    covs: CovarianceSet,
    target_entropy: float,
    options: Optional[QuantizeOptions] = None,
    *,
    seed: int = 0,
    iterations: int = config.RATE_SEARCH_ITERATIONS,
    row_fraction: float = config.RATE_SEARCH_ROW_FRACTION,
) -> QuantizedLayer:
    """Search the scale constant for a target entropy, then quantize at that scale."""
    opts = options or QuantizeOptions()
    prepared = prepare_layer(w, covs, opts)
    search = RateSearchConfig(
        target_rate=target_entropy,
        iterations=iterations,
        row_fraction=row_fraction,
        seed=seed,
        spacing_mode=opts.spacing_mode,
        lmmse=opts.lmmse,
        entropy_mode=opts.entropy_mode,
    )
    scale_c, _ = find_scale(prepared.w_live, prepared.l_hat, prepared.y_hat, search)
    layer = quantize_prepared(prepared, scale_c, opts)
    logger.info(
        "Layer %dx%d at target %.4f bits: c=%.5g H=%.4f D=%.4e",
        layer.rows,
        layer.cols,
        target_entropy,
        scale_c,
        layer.entropy,
        layer.achieved_distortion,
    )
    return layer


def quantize_model(
    layers: Sequence[Tuple[np.ndarray, CovarianceSet]],
    global_rate: float,
    options: Optional[QuantizeOptions] = None,
    *,
    seed: int = 0,
    iterations: int = config.RATE_SEARCH_ITERATIONS,
    row_fraction: float = config.RATE_SEARCH_ROW_FRACTION,
) -> List[QuantizedLayer]:
    """
    Quantize layers in order against a shared budget of global_rate bits per weight.

    Each layer receives an even per-parameter share of the bits still unspent; the
    side-information overhead is subtracted to get its entropy target. Bits a layer
    does not use (for example on dead columns) flow to the layers after it.

    Raises:
        ExhaustedBudget: If a layer's share does not cover its side information
    """
    if not layers:
        raise ValueError("Need at least one layer to quantize")
    opts = options or QuantizeOptions()
    ledger = BudgetLedger.for_layers(global_rate, [int(np.size(w)) for w, _ in layers])

    results = []
    for index, (w, covs) in enumerate(layers):
        a, n = np.shape(w)
        allocation = allocate_budget(ledger, a * n)
        target = allocation - config.SIDE_INFO_BITS / a - config.SIDE_INFO_BITS / n
        if target <= 0:
            raise ExhaustedBudget(
                f"Layer {index} gets {allocation:.4f} bits/weight, not enough for side information"
            )
        layer = quantize_to_rate(
            w,
            covs,
            target,
            opts,
            seed=seed + index,
            iterations=iterations,
            row_fraction=row_fraction,
        )
        ledger.record(allocation, layer.bits_spent, a * n)
        logger.info(
            "Layer %d: allocated %.4f bits/weight, spent %.0f bits, %.0f remain",
            index,
            allocation,
            layer.bits_spent,
            ledger.remaining_bits,
        )
        results.append(layer)
    return results
