"""Synthetic Gaussian layers with a controlled activation spectrum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def spectrum_eigenvalues(n: int, cond: float) -> np.ndarray:
    """
    Log-uniform eigenvalues lambda_i = cond^{-i/(n-1)}, rescaled to unit geometric mean.

    Returned in descending order; lambda_max / lambda_min equals cond.
    """
    if n < 1:
        raise ValueError(f"Dimension must be positive, got {n}")
    if cond < 1:
        raise ValueError(f"Condition number must be at least 1, got {cond}")
    if n == 1:
        return np.ones(1)
    exponents = -np.arange(n) / (n - 1)
    log_lambdas = exponents * np.log(cond)
    return np.exp(log_lambdas - np.mean(log_lambdas))


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Q from the QR factorization of a Gaussian matrix, with diag(R) made positive."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diagonal(r))
    signs[signs == 0] = 1.0
    return q * signs


@dataclass(eq=False)
class SyntheticLayer:
    """Weights W with iid N(0, sigma_w^2) entries and Sigma_x = Q diag(lambdas) Q^T."""

    w: np.ndarray
    sigma_x: np.ndarray
    lambdas: np.ndarray
    q: np.ndarray
    sigma_w: float


def covariance_from_spectrum(lambdas: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Q diag(lambdas) Q^T, exactly lambda * I when the spectrum is flat."""
    if np.all(lambdas == lambdas[0]):
        return lambdas[0] * np.eye(lambdas.shape[0])
    sigma = (q * lambdas) @ q.T
    return 0.5 * (sigma + sigma.T)


def synthetic_layer(
    a: int, n: int, cond: float, sigma_w: float = 1.0, seed: int = 0
) -> SyntheticLayer:
    """
    Draw one benchmark layer.

    Args:
        a: Rows of W
        n: Columns of W (input dimension)
        cond: Condition number of Sigma_x
        sigma_w: Standard deviation of the weights
        seed: Seed of the generator (same seed, same layer)

    Returns:
        SyntheticLayer
    """
    if a < 1:
        raise ValueError(f"Row count must be positive, got {a}")
    if sigma_w <= 0:
        raise ValueError(f"Weight standard deviation must be positive, got {sigma_w}")
    rng = np.random.default_rng(seed)
    lambdas = spectrum_eigenvalues(n, cond)
    q = random_orthogonal(n, rng)
    w = sigma_w * rng.standard_normal((a, n))
    return SyntheticLayer(
        w=w,
        sigma_x=covariance_from_spectrum(lambdas, q),
        lambdas=lambdas,
        q=q,
        sigma_w=float(sigma_w),
    )


def rotate_covariance(sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Conjugate a covariance by a fresh random rotation; the spectrum is unchanged."""
    q = random_orthogonal(sigma.shape[0], rng)
    rotated = q @ sigma @ q.T
    return 0.5 * (rotated + rotated.T)
