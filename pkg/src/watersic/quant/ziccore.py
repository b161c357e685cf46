"""Successive interference cancellation kernels and spacing rules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from watersic.core import config
from watersic.core.errors import CodeOverflow, DimensionMismatch, NonPositiveScale
from watersic.core.matcore import LowerTriangular, as_dense, as_symmetric


def round_half_away(x) -> np.ndarray:
    """Round to the nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True, eq=False)
class SpacingVector:
    """Per-column grid steps alpha_i and the shared cell constant c."""

    alphas: np.ndarray
    scale_c: float

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64).copy()
        if alphas.ndim != 1 or alphas.size == 0:
            raise DimensionMismatch(f"Spacing must be a non-empty vector, got shape {alphas.shape}")
        if not np.all(np.isfinite(alphas)) or np.any(alphas <= 0):
            raise NonPositiveScale("Every spacing must be strictly positive and finite")
        if not (np.isfinite(self.scale_c) and self.scale_c > 0):
            raise NonPositiveScale(f"Scale constant must be positive, got {self.scale_c}")
        alphas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "scale_c", float(self.scale_c))

    @property
    def dim(self) -> int:
        return int(self.alphas.shape[0])

    def cells(self, l: LowerTriangular) -> np.ndarray:
        """Effective cell widths alpha_i * l_ii."""
        _check_factor(l, self.dim)
        return self.alphas * l.diag


def _check_factor(l: LowerTriangular, n: int) -> None:
    if l.dim != n:
        raise DimensionMismatch(f"Factor has dimension {l.dim}, expected {n}")


def _check_scale(c: float) -> None:
    if not (np.isfinite(c) and c > 0):
        raise NonPositiveScale(f"Scale constant must be positive, got {c}")


def plain_watersic_spacing(l: LowerTriangular, alpha: float) -> SpacingVector:
    """
    Spacings alpha_i = alpha * |L|^{1/n} / l_ii.

    The geometric mean of the alphas equals alpha, so the grid has the same point
    density as a uniform grid of step alpha, while every cell alpha_i * l_ii is equal.
    """
    _check_scale(alpha)
    gm = float(np.exp(l.log_geometric_mean()))
    return SpacingVector(alpha * gm / l.diag, alpha * gm)


def uniform_spacing(l: LowerTriangular, alpha: float) -> SpacingVector:
    """Constant spacing alpha for every column (the GPTQ grid)."""
    _check_scale(alpha)
    gm = float(np.exp(l.log_geometric_mean()))
    return SpacingVector(np.full(l.dim, float(alpha)), alpha * gm)


def spacing_for_scale(l: LowerTriangular, c: float, mode: str = config.SPACING_WATERSIC) -> SpacingVector:
    """
    Spacing for a cell constant c under the chosen mode.

    watersic: alpha_i = c / l_ii. uniform: alpha_i = c / |L|^{1/n}. Both grids share
    the point density c / |L|^{1/n}, so one rate search serves both modes.
    """
    _check_scale(c)
    if mode == config.SPACING_WATERSIC:
        return SpacingVector(c / l.diag, c)
    if mode == config.SPACING_UNIFORM:
        gm = float(np.exp(l.log_geometric_mean()))
        return SpacingVector(np.full(l.dim, c / gm), c)
    raise ValueError(f"Unknown spacing mode {mode!r}; expected one of {config.SPACING_MODES}")


def _to_codes(z: np.ndarray, column: int) -> np.ndarray:
    if not np.all(np.isfinite(z)) or np.any(z > config.CODE_MAX) or np.any(z < config.CODE_MIN):
        raise CodeOverflow(f"Column {column} produced a code outside the 32-bit range")
    return z.astype(np.int32)


def sic_quantize(
    y, l: LowerTriangular, spacing: SpacingVector, lmmse: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Successive interference cancellation from the last column to the first.

    Each column is rounded to its grid, optionally rescaled by its LMMSE gain, and its
    contribution alpha_i * gamma_i * z_i * L[i, :] is removed from the remaining target.
    All rows are processed together.

    Args:
        y: Target matrix, a x n (not modified)
        l: Lower-triangular factor of dimension n
        spacing: Per-column spacings
        lmmse: Estimate the per-column gain gamma_i = z^T y_i / (alpha_i l_ii |z|^2)

    Returns:
        Tuple of (int32 codes a x n, gains of length n; all ones when lmmse is off)

    Raises:
        DimensionMismatch: If y, l and spacing disagree on n
        CodeOverflow: If a code leaves the 32-bit range
    """
    work = as_dense(y, "target").copy()
    n = work.shape[1]
    _check_factor(l, n)
    if spacing.dim != n:
        raise DimensionMismatch(f"Spacing has {spacing.dim} entries, target has {n} columns")

    codes = np.zeros(work.shape, dtype=np.int32)
    gammas = np.ones(n)
    cells = spacing.alphas * l.diag
    for i in range(n - 1, -1, -1):
        column = work[:, i]
        z = round_half_away(column / cells[i])
        codes[:, i] = _to_codes(z, i)

        gamma = 1.0
        if lmmse:
            energy = float(z @ z)
            gamma = float(z @ column) / (cells[i] * energy) if energy > 0 else 0.0
            gammas[i] = gamma

        work[:, : i + 1] -= np.outer((gamma * spacing.alphas[i]) * z, l.data[i, : i + 1])

    return codes, gammas


def zsic(y, l: LowerTriangular, spacing: SpacingVector) -> np.ndarray:
    """
    Plain ZSIC: integer codes Z with every residual y - Z diag(alpha) L inside the
    cell [-alpha_i l_ii / 2, alpha_i l_ii / 2).
    """
    codes, _ = sic_quantize(y, l, spacing, lmmse=False)
    return codes


def zsic_lmmse(y, l: LowerTriangular, scale_c: float) -> Tuple[np.ndarray, np.ndarray]:
    """ZSIC with LMMSE gains on the WaterSIC grid alpha_i = c / l_ii."""
    _check_scale(scale_c)
    return sic_quantize(y, l, spacing_for_scale(l, scale_c, config.SPACING_WATERSIC), lmmse=True)


def reconstruct(
    z, spacing: Union[SpacingVector, np.ndarray], gains, row_gains
) -> np.ndarray:
    """
    Dequantized weights W_hat[i][j] = t_i * z[i][j] * gamma_j * alpha_j.

    Args:
        z: Integer code matrix, a x n
        spacing: SpacingVector or raw alpha vector of length n
        gains: Column gains gamma, length n
        row_gains: Row gains t, length a

    Returns:
        Float64 matrix, a x n
    """
    codes = np.asarray(z)
    if codes.ndim != 2:
        raise DimensionMismatch(f"Codes must be 2-D, got shape {codes.shape}")
    alphas = spacing.alphas if isinstance(spacing, SpacingVector) else np.asarray(spacing, dtype=np.float64)
    gammas = np.asarray(gains, dtype=np.float64)
    t = np.asarray(row_gains, dtype=np.float64)
    a, n = codes.shape
    if alphas.shape != (n,) or gammas.shape != (n,) or t.shape != (a,):
        raise DimensionMismatch(
            f"Codes {codes.shape} need {n} spacings and gains and {a} row gains, got "
            f"{alphas.shape}, {gammas.shape}, {t.shape}"
        )
    return ((t[:, None] * codes.astype(np.float64)) * gammas) * alphas


def layer_distortion(w, w_hat, sigma_x) -> float:
    """
    Per-weight output distortion (1 / an) tr((W - W_hat) Sigma_x (W - W_hat)^T).
    """
    w = as_dense(w, "weights")
    w_hat = as_dense(w_hat, "reconstruction")
    sigma = as_symmetric(sigma_x, "sigma_x")
    if w.shape != w_hat.shape or sigma.shape[0] != w.shape[1]:
        raise DimensionMismatch(
            f"Weights {w.shape}, reconstruction {w_hat.shape} and covariance {sigma.shape} disagree"
        )
    diff = w - w_hat
    value = float(np.sum((diff @ sigma) * diff)) / diff.size
    return max(value, 0.0)
