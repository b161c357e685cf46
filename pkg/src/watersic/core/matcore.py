"""Dense linear algebra primitives shared by every quantization stage."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import TYPE_CHECKING, Tuple

import numpy as np
import scipy.linalg

from watersic.core import config
from watersic.core.errors import AllDead, DimensionMismatch, NotPositiveDefinite

if TYPE_CHECKING:
    from watersic.calibration.calib import CovarianceSet


def as_dense(m, name: str = "matrix") -> np.ndarray:
    """
    Validate and convert input to a 2-D float64 matrix.

    Args:
        m: Array-like input
        name: Name used in error messages

    Returns:
        A float64 ndarray with two dimensions and finite entries

    Raises:
        DimensionMismatch: If the input is not two dimensional or is empty
        ValueError: If an entry is NaN or infinite
    """
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return arr


def as_symmetric(m, name: str = "matrix") -> np.ndarray:
    """
    Validate a square matrix and symmetrize it exactly.

    Args:
        m: Array-like square input
        name: Name used in error messages

    Returns:
        (m + m^T) / 2 as float64, so that data[i][j] == data[j][i] bit for bit
    """
    arr = as_dense(m, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    return 0.5 * (arr + arr.T)


@dataclass(frozen=True, eq=False)
class LowerTriangular:
    """Cholesky factor with a strictly positive diagonal."""

    data: np.ndarray

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def diag(self) -> np.ndarray:
        return np.diagonal(self.data).copy()

    @staticmethod
    def from_array(m) -> LowerTriangular:
        """
        Wrap a lower-triangular array, discarding anything above the diagonal.

        Raises:
            NotPositiveDefinite: If a diagonal entry is not strictly positive
        """
        arr = np.tril(as_dense(m, "lower-triangular factor"))
        if arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch(f"Triangular factor must be square, got {arr.shape}")
        if np.any(np.diagonal(arr) <= 0):
            raise NotPositiveDefinite("Triangular factor has a non-positive diagonal entry")
        return LowerTriangular(arr)

    @staticmethod
    def identity(dim: int) -> LowerTriangular:
        return LowerTriangular(np.eye(dim))

    def log_geometric_mean(self) -> float:
        """Natural log of |L|^{1/n}."""
        return float(np.mean(np.log(np.diagonal(self.data))))


@dataclass(frozen=True, eq=False)
class FeatureMask:
    """Live/dead flags for the input dimensions of a layer."""

    live: np.ndarray

    def __post_init__(self):
        live = np.asarray(self.live, dtype=bool).copy()
        live.setflags(write=False)
        object.__setattr__(self, "live", live)

    @property
    def dim(self) -> int:
        return int(self.live.shape[0])

    @property
    def live_count(self) -> int:
        return int(np.count_nonzero(self.live))

    @property
    def dead_count(self) -> int:
        return self.dim - self.live_count

    @property
    def live_indices(self) -> np.ndarray:
        return np.flatnonzero(self.live)

    @staticmethod
    def all_live(dim: int) -> FeatureMask:
        return FeatureMask(np.ones(dim, dtype=bool))


def cholesky(h) -> LowerTriangular:
    """
    Factor a positive-definite matrix as L L^T.

    Args:
        h: Symmetric positive-definite matrix (after damping and dead-feature removal)

    Returns:
        Lower-triangular factor with strictly positive diagonal

    Raises:
        NotPositiveDefinite: If a pivot is not positive or falls below
            PIVOT_TOLERANCE times the mean diagonal
    """
    sym = as_symmetric(h, "covariance")
    mean_diag = float(np.mean(np.diagonal(sym)))
    try:
        factor = scipy.linalg.cholesky(sym, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(
            f"Matrix of dimension {sym.shape[0]} is not positive definite ({e}); "
            "increase damping or re-run dead-feature detection"
        ) from e

    pivots = np.diagonal(factor) ** 2
    floor = config.PIVOT_TOLERANCE * max(mean_diag, 0.0)
    if mean_diag <= 0 or np.any(pivots <= floor):
        worst = int(np.argmin(pivots))
        raise NotPositiveDefinite(
            f"Pivot {worst} is {pivots[worst]:.3e}, below {floor:.3e}; "
            "increase damping or re-run dead-feature detection"
        )
    return LowerTriangular(np.tril(factor))


def solve_upper_right(m, l: LowerTriangular) -> np.ndarray:
    """
    Compute M (L^T)^{-1} with a triangular solve.

    Args:
        m: Matrix with l.dim columns
        l: Lower-triangular factor

    Returns:
        X such that X L^T == M
    """
    m = as_dense(m, "right-hand side")
    if m.shape[1] != l.dim:
        raise DimensionMismatch(
            f"Right-hand side has {m.shape[1]} columns but factor has dimension {l.dim}"
        )
    # X L^T = M  <=>  L X^T = M^T
    xt = scipy.linalg.solve_triangular(l.data, m.T, lower=True, check_finite=False)
    return np.ascontiguousarray(xt.T)


def damp(covs: CovarianceSet, delta: float) -> CovarianceSet:
    """
    Add delta * mean(diag(Sigma_xhat)) to the diagonals of Sigma_x, Sigma_xhat and Sigma_x_xhat.

    Sigma_delta_xhat is returned unchanged.

    Args:
        covs: Covariance set to damp
        delta: Non-negative damping fraction

    Returns:
        A new CovarianceSet
    """
    if delta < 0:
        raise ValueError(f"Damping must be non-negative, got {delta}")
    if delta == 0:
        return covs

    shift = delta * float(np.mean(np.diagonal(covs.sigma_xhat)))
    bump = shift * np.eye(covs.dim)
    return dataclasses.replace(
        covs,
        sigma_x=covs.sigma_x + bump,
        sigma_xhat=covs.sigma_xhat + bump,
        sigma_x_xhat=covs.sigma_x_xhat + bump,
    )


def median_diagonal(sigma) -> float:
    """Median of the diagonal; even lengths average the two central values."""
    return float(np.median(np.diagonal(np.asarray(sigma, dtype=np.float64))))


def detect_dead(sigma_x, tau: float = config.DEAD_FEATURE_TAU) -> FeatureMask:
    """
    Flag input dimensions whose variance is negligible.

    A dimension is dead when its diagonal entry is below tau times the median diagonal.

    Raises:
        AllDead: If no dimension survives
    """
    diag = np.diagonal(np.asarray(sigma_x, dtype=np.float64))
    threshold = tau * median_diagonal(sigma_x)
    # A zero-variance feature is dead even when the median itself is zero
    mask = FeatureMask((diag >= threshold) & (diag > 0))
    if mask.live_count == 0:
        raise AllDead(
            f"All {mask.dim} dimensions fall below the dead-feature threshold {threshold:.3e}"
        )
    return mask


def reduce(m, mask: FeatureMask, axes: Tuple[int, ...] = (1,)) -> np.ndarray:
    """
    Remove dead rows/columns along the selected axes.

    Args:
        m: Vector or matrix
        mask: Feature mask whose dim matches every selected axis
        axes: Axes to reduce (0 = rows, 1 = columns)

    Returns:
        The reduced copy
    """
    arr = np.asarray(m)
    for axis in axes:
        if arr.shape[axis] != mask.dim:
            raise DimensionMismatch(
                f"Axis {axis} has length {arr.shape[axis]} but mask has dimension {mask.dim}"
            )
    out = arr
    for axis in axes:
        out = np.compress(mask.live, out, axis=axis)
    return out


def expand(m, mask: FeatureMask, axes: Tuple[int, ...] = (1,), fill: float = 0) -> np.ndarray:
    """
    Inverse of reduce: re-insert dead positions filled with `fill`.

    Args:
        m: Reduced vector or matrix
        mask: Feature mask whose live_count matches every selected axis
        axes: Axes to expand
        fill: Value placed at dead positions

    Returns:
        The expanded array
    """
    out = np.asarray(m)
    for axis in axes:
        if out.shape[axis] != mask.live_count:
            raise DimensionMismatch(
                f"Axis {axis} has length {out.shape[axis]} "
                f"but mask has {mask.live_count} live entries"
            )
        shape = list(out.shape)
        shape[axis] = mask.dim
        full = np.full(shape, fill, dtype=out.dtype)
        index = [slice(None)] * out.ndim
        index[axis] = mask.live_indices
        full[tuple(index)] = out
        out = full
    return out
