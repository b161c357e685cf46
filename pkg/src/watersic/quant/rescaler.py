"""Diagonal row and column rescalers fitted by alternating closed-form updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from watersic.calibration.calib import CovarianceSet
from watersic.core import config
from watersic.core.errors import DegenerateRow, DimensionMismatch, SingularSystem
from watersic.core.matcore import as_dense

logger = logging.getLogger(__name__)


@dataclass
class RescalerPair:
    """Row gains t, column gains gamma and the objective after every half-step."""

    t: np.ndarray
    gamma: np.ndarray
    loss_history: List[float] = field(default_factory=list)

    @property
    def loss(self) -> float:
        return self.loss_history[-1]


class _Problem:
    """Precomputed pieces of J(T, Gamma) for one (W_hat0, W, covs) triple."""

    def __init__(self, w_hat0, w, covs: CovarianceSet):
        self.w_hat0 = as_dense(w_hat0, "initial reconstruction")
        self.w = as_dense(w, "weights")
        if self.w_hat0.shape != self.w.shape or self.w.shape[1] != covs.dim:
            raise DimensionMismatch(
                f"Reconstruction {self.w_hat0.shape}, weights {self.w.shape} and "
                f"covariance dimension {covs.dim} disagree"
            )
        self.rows, self.cols = self.w.shape
        self.sigma_xhat = covs.sigma_xhat
        self.cross = covs.target_cross(self.w)
        self.energy = float(np.sum((self.w @ covs.sigma_x) * self.w))

    def check(self, t: Optional[np.ndarray] = None, gamma: Optional[np.ndarray] = None) -> None:
        if t is not None and t.shape != (self.rows,):
            raise DimensionMismatch(f"Row gains have shape {t.shape}, expected ({self.rows},)")
        if gamma is not None and gamma.shape != (self.cols,):
            raise DimensionMismatch(f"Column gains have shape {gamma.shape}, expected ({self.cols},)")

    def objective(self, t: np.ndarray, gamma: np.ndarray) -> float:
        m = (t[:, None] * self.w_hat0) * gamma
        cross = float(np.sum(self.cross * m))
        quad = float(np.sum((m @ self.sigma_xhat) * m))
        return (self.energy - 2.0 * cross + quad) / (self.rows * self.cols)

    def gamma_step(self, t: np.ndarray, ridge: float) -> np.ndarray:
        scaled = t[:, None] * self.w_hat0
        g = self.sigma_xhat * (scaled.T @ scaled)
        d = np.sum(scaled * self.cross, axis=0)
        g[np.diag_indices_from(g)] += ridge
        try:
            factor = scipy.linalg.cho_factor(g, lower=True, check_finite=False)
        except np.linalg.LinAlgError as e:
            raise SingularSystem(
                f"Gamma-step system of dimension {self.cols} is singular with ridge {ridge:g}"
            ) from e
        return scipy.linalg.cho_solve(factor, d, check_finite=False)

    def t_step(self, gamma: np.ndarray, ridge: float) -> np.ndarray:
        v = self.w_hat0 * gamma
        p = np.sum(self.cross * v, axis=1)
        q = np.sum((v @ self.sigma_xhat) * v, axis=1) + ridge
        degenerate = np.flatnonzero(q <= 0)
        if degenerate.size:
            raise DegenerateRow(f"Row {int(degenerate[0])} has a zero T-step denominator")
        return p / q


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} must be a finite vector, got shape {arr.shape}")
    return arr


def default_ridge(covs: CovarianceSet) -> float:
    """lambda = RESCALER_RIDGE_FRACTION * mean(diag(Sigma_xhat))."""
    return config.RESCALER_RIDGE_FRACTION * float(np.mean(np.diagonal(covs.sigma_xhat)))


def rescaler_objective(t, gamma, w_hat0, w, covs: CovarianceSet) -> float:
    """
    J(T, Gamma) = (1/an) tr(W Sx W^T - 2 B (T W0 Gamma)^T + T W0 Gamma Sxhat Gamma W0^T T)
    with B = W Sigma_x_xhat + Sigma_delta_xhat.
    """
    problem = _Problem(w_hat0, w, covs)
    t = _as_vector(t, "row gains")
    gamma = _as_vector(gamma, "column gains")
    problem.check(t, gamma)
    return problem.objective(t, gamma)


def gamma_step(t, w_hat0, w, covs: CovarianceSet, ridge: float = 0.0) -> np.ndarray:
    """
    Minimize J over the column gains with the row gains fixed.

    Solves (G + ridge I) gamma = d with G = Sigma_xhat * (W0^T diag(t^2) W0) (Hadamard
    product) and d_j = sum_i W0_ij t_i B_ij.

    Raises:
        SingularSystem: If G + ridge I is not positive definite
    """
    problem = _Problem(w_hat0, w, covs)
    t = _as_vector(t, "row gains")
    problem.check(t=t)
    return problem.gamma_step(t, ridge)


def t_step(gamma, w_hat0, w, covs: CovarianceSet, ridge: float = 0.0) -> np.ndarray:
    """
    Minimize J over the row gains with the column gains fixed: t_i = p_i / (q_i + ridge).

    Raises:
        DegenerateRow: If some q_i + ridge is zero
    """
    problem = _Problem(w_hat0, w, covs)
    gamma = _as_vector(gamma, "column gains")
    problem.check(gamma=gamma)
    return problem.t_step(gamma, ridge)


def normalize(t: np.ndarray, gamma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rescale so that |t|_1 equals the row count; T W0 Gamma is unchanged."""
    s = float(np.sum(np.abs(t))) / t.shape[0]
    if s == 0:
        raise DegenerateRow("Every row gain is zero; cannot normalize")
    return t / s, gamma * s


def find_optimal_rescalers(
    w_hat0,
    w,
    covs: CovarianceSet,
    gamma_init,
    eps: float = config.RESCALER_EPS,
    ridge: Optional[float] = None,
    max_iters: int = config.RESCALER_MAX_ITERS,
) -> RescalerPair:
    """
    Alternate Gamma-steps and T-steps until the objective settles.

    Starts from t = 1 and gamma = gamma_init. Each sweep runs one Gamma-step and one
    T-step, then normalizes |t|_1 to the row count. Stops when
    |J - J_prev| / (|J_prev| + 1e-12) < eps or after max_iters sweeps.

    Args:
        w_hat0: Initial reconstruction Z diag(alpha), a x n
        w: Original weights, a x n
        covs: Covariances of the system being fitted
        gamma_init: Starting column gains (usually the LMMSE gains)
        eps: Relative-change stopping tolerance
        ridge: Ridge lambda; defaults to RESCALER_RIDGE_FRACTION * mean(diag(Sigma_xhat))
        max_iters: Maximum number of sweeps

    Returns:
        RescalerPair with the objective recorded at the start and after every half-step
    """
    problem = _Problem(w_hat0, w, covs)
    gamma = _as_vector(gamma_init, "initial column gains").copy()
    t = np.ones(problem.rows)
    problem.check(t, gamma)
    lam = default_ridge(covs) if ridge is None else float(ridge)

    history = [problem.objective(t, gamma)]
    prev = history[0]
    for sweep in range(max_iters):
        gamma = problem.gamma_step(t, lam)
        history.append(problem.objective(t, gamma))
        t = problem.t_step(gamma, lam)
        history.append(problem.objective(t, gamma))
        t, gamma = normalize(t, gamma)

        current = history[-1]
        logger.debug("Rescaler sweep %d: J=%.6e", sweep + 1, current)
        if abs(current - prev) / (abs(prev) + config.RESCALER_LOSS_FLOOR) < eps:
            break
        prev = current

    t, gamma = normalize(t, gamma)
    return RescalerPair(t=t, gamma=gamma, loss_history=history)
