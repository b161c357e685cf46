"""Calibration statistics: covariance sets, drift targets, blending and golden-section search."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from watersic.core import config
from watersic.core.errors import (
    DimensionMismatch,
    EmptySamples,
    InvalidBracket,
    InvalidMixParameter,
)
from watersic.core.matcore import (
    FeatureMask,
    LowerTriangular,
    as_dense,
    as_symmetric,
    reduce,
    solve_upper_right,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    """
    The four calibration matrices of a layer.

    sigma_x and sigma_xhat are symmetric n x n; sigma_x_xhat is a general n x n matrix;
    sigma_delta_xhat is (output dim) x n, or None for a layer without residual correction.
    """

    sigma_x: np.ndarray
    sigma_xhat: np.ndarray
    sigma_x_xhat: np.ndarray
    sigma_delta_xhat: Optional[np.ndarray] = None

    def __post_init__(self):
        sigma_x = as_symmetric(self.sigma_x, "sigma_x")
        sigma_xhat = as_symmetric(self.sigma_xhat, "sigma_xhat")
        sigma_x_xhat = as_dense(self.sigma_x_xhat, "sigma_x_xhat")
        n = sigma_x.shape[0]
        if sigma_xhat.shape != (n, n) or sigma_x_xhat.shape != (n, n):
            raise DimensionMismatch(
                f"Covariances disagree on dimension: sigma_x {sigma_x.shape}, "
                f"sigma_xhat {sigma_xhat.shape}, sigma_x_xhat {sigma_x_xhat.shape}"
            )
        object.__setattr__(self, "sigma_x", sigma_x)
        object.__setattr__(self, "sigma_xhat", sigma_xhat)
        object.__setattr__(self, "sigma_x_xhat", sigma_x_xhat)

        if self.sigma_delta_xhat is not None:
            delta = as_dense(self.sigma_delta_xhat, "sigma_delta_xhat")
            if delta.shape[1] != n:
                raise DimensionMismatch(
                    f"sigma_delta_xhat has {delta.shape[1]} columns, expected {n}"
                )
            object.__setattr__(self, "sigma_delta_xhat", delta)

    @staticmethod
    def collapsed(sigma_x) -> CovarianceSet:
        """No drift statistics: Sigma_xhat = Sigma_x_xhat = Sigma_x, Sigma_delta = 0."""
        sym = as_symmetric(sigma_x, "sigma_x")
        return CovarianceSet(sym, sym.copy(), sym.copy(), None)

    @property
    def dim(self) -> int:
        return self.sigma_x.shape[0]

    def residual_term(self, rows: int) -> np.ndarray:
        """Sigma_delta_xhat as a dense rows x n matrix (zeros when absent)."""
        if self.sigma_delta_xhat is None:
            return np.zeros((rows, self.dim))
        if self.sigma_delta_xhat.shape[0] != rows:
            raise DimensionMismatch(
                f"sigma_delta_xhat has {self.sigma_delta_xhat.shape[0]} rows, "
                f"layer has {rows}"
            )
        return self.sigma_delta_xhat

    def target_cross(self, w: np.ndarray) -> np.ndarray:
        """W Sigma_x_xhat + Sigma_delta_xhat."""
        return w @ self.sigma_x_xhat + self.residual_term(w.shape[0])

    def row_subset(self, rows) -> CovarianceSet:
        """Restrict Sigma_delta_xhat to the given output rows; the n x n matrices are shared."""
        if self.sigma_delta_xhat is None:
            return self
        return CovarianceSet(
            self.sigma_x, self.sigma_xhat, self.sigma_x_xhat, self.sigma_delta_xhat[rows]
        )

    def reduced(self, mask: FeatureMask) -> CovarianceSet:
        """Drop dead features from all four matrices."""
        delta = None
        if self.sigma_delta_xhat is not None:
            delta = reduce(self.sigma_delta_xhat, mask, axes=(1,))
        return CovarianceSet(
            reduce(self.sigma_x, mask, axes=(0, 1)),
            reduce(self.sigma_xhat, mask, axes=(0, 1)),
            reduce(self.sigma_x_xhat, mask, axes=(0, 1)),
            delta,
        )


@dataclass(frozen=True)
class MixParams:
    """Blend coefficients for drift mixing (eps_qr) and weighted calibration (eps_aw)."""

    eps_qr: float = 0.0
    eps_aw: float = 0.0

    def __post_init__(self):
        _check_mix("eps_qr", self.eps_qr)
        _check_mix("eps_aw", self.eps_aw)


def _check_mix(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise InvalidMixParameter(f"{name} must lie in [0, 1], got {value}")


def _blend(a: np.ndarray, b: np.ndarray, eps: float) -> np.ndarray:
    return (1.0 - eps) * a + eps * b


def drift_target(w, covs: CovarianceSet, l_hat: LowerTriangular) -> np.ndarray:
    """
    Drift- and residual-corrected target (W Sigma_x_xhat + Sigma_delta_xhat) (L_hat^T)^{-1}.

    Args:
        w: Weight matrix, a x n
        covs: Covariance set whose sigma_xhat factors as l_hat l_hat^T
        l_hat: Cholesky factor of covs.sigma_xhat

    Returns:
        The a x n target y_hat; equals W L_hat when covs are collapsed
    """
    w = as_dense(w, "weights")
    if w.shape[1] != covs.dim or l_hat.dim != covs.dim:
        raise DimensionMismatch(
            f"Weights have {w.shape[1]} columns, covariances dimension {covs.dim}, "
            f"factor dimension {l_hat.dim}"
        )
    return solve_upper_right(covs.target_cross(w), l_hat)


def mix_drift(covs: CovarianceSet, eps_qr: float) -> CovarianceSet:
    """
    Blend the drift-corrected statistics back toward Sigma_x.

    Sigma_xhat and Sigma_x_xhat become (1 - eps) * themselves + eps * Sigma_x;
    Sigma_x and Sigma_delta_xhat are untouched.
    """
    _check_mix("eps_qr", eps_qr)
    if eps_qr == 0.0:
        return covs
    return CovarianceSet(
        covs.sigma_x,
        _blend(covs.sigma_xhat, covs.sigma_x, eps_qr),
        _blend(covs.sigma_x_xhat, covs.sigma_x, eps_qr),
        covs.sigma_delta_xhat,
    )


def mix_weighted(weighted: CovarianceSet, uniform: CovarianceSet, eps_aw: float) -> CovarianceSet:
    """
    Componentwise convex blend (1 - eps_aw) * weighted + eps_aw * uniform of all four matrices.
    """
    _check_mix("eps_aw", eps_aw)
    if weighted.dim != uniform.dim:
        raise DimensionMismatch(
            f"Cannot blend covariance sets of dimension {weighted.dim} and {uniform.dim}"
        )

    delta = None
    if weighted.sigma_delta_xhat is not None or uniform.sigma_delta_xhat is not None:
        ref = (
            weighted.sigma_delta_xhat
            if weighted.sigma_delta_xhat is not None
            else uniform.sigma_delta_xhat
        )
        rows = ref.shape[0]  # type: ignore[union-attr]
        delta = _blend(
            weighted.residual_term(rows), uniform.residual_term(rows), eps_aw
        )

    return CovarianceSet(
        _blend(weighted.sigma_x, uniform.sigma_x, eps_aw),
        _blend(weighted.sigma_xhat, uniform.sigma_xhat, eps_aw),
        _blend(weighted.sigma_x_xhat, uniform.sigma_x_xhat, eps_aw),
        delta,
    )


def blend_calibration(
    weighted: CovarianceSet, uniform: CovarianceSet, params: MixParams
) -> CovarianceSet:
    """Two-stage blend: drift-mix both sets with eps_qr, then mix them with eps_aw."""
    return mix_weighted(
        mix_drift(weighted, params.eps_qr),
        mix_drift(uniform, params.eps_qr),
        params.eps_aw,
    )


def golden_section_min(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    iters: int = config.GOLDEN_SECTION_ITERATIONS,
) -> Tuple[float, float]:
    """
    Minimize a unimodal scalar function on [lo, hi].

    Each iteration shrinks the bracket by the golden ratio conjugate and costs one new
    evaluation; interior evaluations are reused.

    Args:
        f: Objective
        lo: Lower end of the bracket
        hi: Upper end of the bracket
        iters: Number of shrinkage steps

    Returns:
        Tuple of (bracket midpoint, f at the midpoint)

    Raises:
        InvalidBracket: If lo >= hi
    """
    if not lo < hi:
        raise InvalidBracket(f"Golden-section bracket [{lo}, {hi}] is empty")

    g = config.GOLDEN_RATIO_CONJUGATE
    a, b = float(lo), float(hi)
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc = f(c)
    fd = f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)

    x = 0.5 * (a + b)
    return x, f(x)


def tune_mixing(
    objective: Callable[[MixParams], float],
    iters: int = config.GOLDEN_SECTION_ITERATIONS,
    eps_aw_default: float = 0.0,
) -> Tuple[MixParams, float]:
    """
    Coordinate search for the mixing coefficients.

    First eps_qr is optimized with eps_aw held at its default, then eps_aw with eps_qr at
    its optimum. The objective (e.g. a relative output error measured by the caller) is
    assumed unimodal in each coordinate.

    Returns:
        Tuple of (best MixParams, objective value)
    """
    eps_qr, _ = golden_section_min(
        lambda e: objective(MixParams(eps_qr=e, eps_aw=eps_aw_default)), 0.0, 1.0, iters
    )
    logger.debug("Drift mixing optimum eps_qr=%.4f", eps_qr)
    eps_aw, best = golden_section_min(
        lambda e: objective(MixParams(eps_qr=eps_qr, eps_aw=e)), 0.0, 1.0, iters
    )
    logger.debug("Weighting optimum eps_aw=%.4f", eps_aw)
    return MixParams(eps_qr=eps_qr, eps_aw=eps_aw), best


def _second_moment(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    (1/T) sum_t a_t b_t^T.

    One partial product per block of COVARIANCE_BLOCK_TOKENS rows; the partials are
    summed in block order.
    """
    tokens = a.shape[0]
    block = config.COVARIANCE_BLOCK_TOKENS
    partials = np.stack(
        [a[s : s + block].T @ b[s : s + block] for s in range(0, tokens, block)]
    )
    return np.sum(partials, axis=0) / tokens


def estimate_covariances(
    x_samples, xhat_samples=None, r_delta_samples=None
) -> CovarianceSet:
    """
    Estimate a CovarianceSet from per-token sample rows (uncentered second moments).

    Args:
        x_samples: tokens x n inputs of the unquantized model
        xhat_samples: tokens x n inputs of the quantized model (defaults to x_samples)
        r_delta_samples: tokens x a residual-stream discrepancies R - R_hat (optional)

    Returns:
        CovarianceSet with Sigma_x, Sigma_xhat, Sigma_x_xhat and Sigma_delta_xhat

    Raises:
        EmptySamples: If there are no samples
        DimensionMismatch: If token counts or feature dimensions disagree
    """
    x = np.asarray(x_samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptySamples(f"Need at least one sample row, got shape {x.shape}")
    x = as_dense(x, "x_samples")
    xhat = x if xhat_samples is None else as_dense(xhat_samples, "xhat_samples")
    if xhat.shape != x.shape:
        raise DimensionMismatch(
            f"xhat_samples shape {xhat.shape} does not match x_samples {x.shape}"
        )

    sigma_x = _second_moment(x, x)
    sigma_xhat = sigma_x if xhat is x else _second_moment(xhat, xhat)
    sigma_x_xhat = sigma_x if xhat is x else _second_moment(x, xhat)

    delta = None
    if r_delta_samples is not None:
        r = as_dense(r_delta_samples, "r_delta_samples")
        if r.shape[0] != x.shape[0]:
            raise DimensionMismatch(
                f"r_delta_samples has {r.shape[0]} tokens, x_samples has {x.shape[0]}"
            )
        delta = _second_moment(r, xhat)
        if not np.any(delta):
            delta = None

    logger.debug("Estimated covariances from %d tokens, n=%d", x.shape[0], x.shape[1])
    return CovarianceSet(sigma_x, sigma_xhat, sigma_x_xhat, delta)
