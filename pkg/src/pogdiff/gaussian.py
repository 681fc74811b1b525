"""Closed-form algebra for isotropic Gaussians N(mean, precision⁻¹·I)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["IsotropicGaussian", "LemmaResidual", "pog_product", "kl_isotropic", "lemma_residual"]


def _check_precision(*values: float) -> None:
    for lam in values:
        if not (lam > 0.0 and math.isfinite(lam)):
            raise ValueError(f"precision must be positive and finite, got {lam}")


@dataclass(frozen=True)
class IsotropicGaussian:
    mean: np.ndarray
    precision: float

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise ValueError("mean must be a finite vector")
        _check_precision(self.precision)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", float(self.precision))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def variance(self) -> float:
        return 1.0 / self.precision

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """Log density at rows of `x` (shape ``(n, d)`` or ``(d,)``)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        sq = np.sum((x - self.mean) ** 2, axis=1)
        return 0.5 * self.dim * math.log(self.precision / (2 * math.pi)) - 0.5 * self.precision * sq

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim)) / math.sqrt(self.precision)


def pog_product(g1: IsotropicGaussian, g2: IsotropicGaussian) -> IsotropicGaussian:
    """Renormalised product of two isotropic Gaussian densities.

    Precisions add; the mean is the precision-weighted average of the means.
    """
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    lam = g1.precision + g2.precision
    mean = (g1.precision * g1.mean + g2.precision * g2.mean) / lam
    return IsotropicGaussian(mean, lam)


def kl_isotropic(p: IsotropicGaussian, q: IsotropicGaussian) -> float:
    """KL(p ‖ q) for isotropic Gaussians."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    ratio = q.precision / p.precision
    d = p.dim
    kl = 0.5 * d * (ratio - 1.0 - math.log(ratio)) + 0.5 * q.precision * float(np.sum((p.mean - q.mean) ** 2))
    return max(kl, 0.0)


@dataclass(frozen=True)
class LemmaResidual:
    lhs: float
    rhs: float
    residual: float
    pog_mean: np.ndarray

    @property
    def defect(self) -> float:
        """Relative mismatch of ``lhs - rhs == residual``."""
        return abs(self.lhs - self.rhs - self.residual) / max(1.0, self.lhs)


def lemma_residual(mu_theta_y, mu_t, mu_theta_yp, lambda_t: float, lambda_yp: float) -> LemmaResidual:
    """Evaluate both sides of the PoG completing-the-square inequality.

    ``lhs = ½λ_t‖μ_θ(y)−μ_t‖² + ½λ_y'‖μ_θ(y)−μ_θ(y')‖²`` and
    ``rhs = ½(λ_t+λ_y')‖μ_θ(y)−μ_PoG‖²``; the gap is the non-negative
    ``λ_t·λ_y'·‖μ_t−μ_θ(y')‖² / (2(λ_t+λ_y'))``, computed independently.
    """
    _check_precision(lambda_t, lambda_yp)
    a = np.atleast_1d(np.asarray(mu_theta_y, dtype=np.float64))
    m = np.atleast_1d(np.asarray(mu_t, dtype=np.float64))
    b = np.atleast_1d(np.asarray(mu_theta_yp, dtype=np.float64))
    if not (a.shape == m.shape == b.shape):
        raise ValueError("all mean vectors must share one dimension")
    pog = pog_product(IsotropicGaussian(m, lambda_t), IsotropicGaussian(b, lambda_yp))
    lhs = 0.5 * lambda_t * float(np.sum((a - m) ** 2)) + 0.5 * lambda_yp * float(np.sum((a - b) ** 2))
    rhs = 0.5 * pog.precision * float(np.sum((a - pog.mean) ** 2))
    residual = lambda_t * lambda_yp * float(np.sum((m - b) ** 2)) / (2.0 * (lambda_t + lambda_yp))
    return LemmaResidual(lhs, rhs, residual, pog.mean)
