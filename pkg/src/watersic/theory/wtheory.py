"""Rate-distortion oracles: reverse waterfilling, the high-rate formula and predicted gaps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from watersic.core import config
from watersic.core.errors import DimensionMismatch, DistortionOutOfRange, PreconditionViolated
from watersic.core.matcore import LowerTriangular, as_symmetric
from watersic.quant.ziccore import SpacingVector


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues of Sigma_x (kept descending) and the weight variance sigma_w^2."""

    lambdas: np.ndarray
    sigma_w2: float = 1.0

    def __post_init__(self):
        lambdas = np.asarray(self.lambdas, dtype=np.float64).ravel()
        if lambdas.size == 0:
            raise DimensionMismatch("Spectrum needs at least one eigenvalue")
        if not np.all(np.isfinite(lambdas)) or np.any(lambdas <= 0):
            raise PreconditionViolated("Eigenvalues must be positive and finite")
        if not (math.isfinite(self.sigma_w2) and self.sigma_w2 > 0):
            raise PreconditionViolated(f"Weight variance must be positive, got {self.sigma_w2}")
        lambdas = np.sort(lambdas)[::-1].copy()
        lambdas.setflags(write=False)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "sigma_w2", float(self.sigma_w2))

    @staticmethod
    def from_covariance(sigma, sigma_w2: float = 1.0) -> Spectrum:
        """Spectrum of a covariance matrix; numerically zero eigenvalues are dropped."""
        eig = np.linalg.eigvalsh(as_symmetric(sigma, "covariance"))
        floor = eig.shape[0] * np.finfo(np.float64).eps * max(float(np.max(np.abs(eig))), 0.0)
        kept = eig[eig > floor]
        if kept.size == 0:
            raise PreconditionViolated("Covariance has no positive eigenvalue")
        return Spectrum(kept, sigma_w2)

    @property
    def dim(self) -> int:
        return int(self.lambdas.shape[0])

    @property
    def variances(self) -> np.ndarray:
        """Per-component variances sigma_w^2 * lambda_i."""
        return self.sigma_w2 * self.lambdas

    @property
    def full_energy(self) -> float:
        """Distortion of the zero-rate reconstruction, (sigma_w^2 / n) sum lambda_i."""
        return float(np.mean(self.variances))

    def log_geometric_mean(self) -> float:
        return float(np.mean(np.log(self.lambdas)))


@dataclass(frozen=True)
class WaterLevel:
    """Water level tau and the (rate, distortion) pair it induces."""

    tau: float
    rate: float
    distortion: float

    @staticmethod
    def from_tau(spec: Spectrum, tau: float) -> WaterLevel:
        v = spec.variances
        distortion = float(np.mean(np.minimum(v, tau)))
        rate = float(np.mean(0.5 * np.log2(np.maximum(1.0, v / tau))))
        return WaterLevel(tau=float(tau), rate=rate, distortion=distortion)


def waterfill_rate(spec: Spectrum, d: float) -> WaterLevel:
    """
    Reverse waterfilling: the smallest rate that reaches per-weight distortion d.

    Components with variance below the water level tau are not coded; the rest are
    coded down to distortion tau. Below the smallest variance tau equals d exactly;
    otherwise tau is found by bisection.

    Args:
        spec: Eigenvalue spectrum and weight variance
        d: Target distortion, 0 < d <= full energy

    Returns:
        WaterLevel with tau, rate in bits per weight and the achieved distortion

    Raises:
        DistortionOutOfRange: If d is not in (0, full energy]
    """
    v = spec.variances
    full = spec.full_energy
    if not (math.isfinite(d) and 0 < d <= full * (1 + config.WATERFILL_REL_TOL)):
        raise DistortionOutOfRange(f"Distortion {d} outside (0, {full}]")
    if d >= full:
        return WaterLevel(tau=float(np.max(v)), rate=0.0, distortion=full)
    if d <= float(np.min(v)):
        return WaterLevel.from_tau(spec, d)

    lo = config.WATERFILL_LOW_FACTOR * float(np.min(v))
    hi = float(np.max(v))
    for _ in range(config.WATERFILL_MAX_ITERS):
        tau = 0.5 * (lo + hi)
        if float(np.mean(np.minimum(v, tau))) < d:
            lo = tau
        else:
            hi = tau
        if hi - lo <= config.WATERFILL_REL_TOL * hi:
            break
    return WaterLevel.from_tau(spec, 0.5 * (lo + hi))


def waterfill_curve(spec: Spectrum, distortions: Sequence[float]) -> List[WaterLevel]:
    """The waterfilling bound evaluated at several distortions."""
    return [waterfill_rate(spec, d) for d in distortions]


def highrate_rate(spec: Spectrum, d: float) -> float:
    """
    High-rate form 1/2 log2(sigma_w^2 |Sigma|^{1/n} / d), valid for d below every variance.

    Raises:
        PreconditionViolated: If d <= 0 or d >= sigma_w^2 * min lambda
    """
    smallest = float(np.min(spec.variances))
    if not (0 < d < smallest):
        raise PreconditionViolated(
            f"High-rate formula needs 0 < d < {smallest:.6g}, got {d}"
        )
    return 0.5 * (math.log2(spec.sigma_w2) + spec.log_geometric_mean() / math.log(2.0) - math.log2(d))


def predicted_gap_watersic() -> float:
    """Asymptotic rate gap of WaterSIC spacing to the waterfilling bound, in bits."""
    return config.WATERSIC_GAP_BITS


def gptq_excess_bits(l: LowerTriangular) -> float:
    """1/2 log2 of the arithmetic over the geometric mean of the squared Cholesky diagonal."""
    log_sq = 2.0 * np.log(l.diag)
    am = float(np.log(np.mean(np.exp(log_sq))))
    gm = float(np.mean(log_sq))
    return max(0.0, 0.5 * (am - gm) / math.log(2.0))


def predicted_gap_gptq(l: LowerTriangular) -> float:
    """WaterSIC gap plus the spread penalty of a uniform grid."""
    return predicted_gap_watersic() + gptq_excess_bits(l)


def zsic_distortion_prediction(l: LowerTriangular, spacing: Union[SpacingVector, np.ndarray]) -> float:
    """High-rate ZSIC distortion (1/n) sum (alpha_i l_ii)^2 / 12."""
    alphas = spacing.alphas if isinstance(spacing, SpacingVector) else np.asarray(spacing, dtype=np.float64)
    if alphas.shape != (l.dim,):
        raise DimensionMismatch(f"Spacing has shape {alphas.shape}, factor dimension {l.dim}")
    cells = alphas * l.diag
    return float(np.mean(cells**2)) / 12.0
