"""Bounded hyperparameters as transformed Gaussians.

A parameter vector theta with entries in (lower_i, upper_i) is represented by
a latent Gaussian vector z pushed through a per-coordinate scaled sigmoid:

    theta = lower + (upper - lower) / (1 + exp(-z)),   z ~ N(mean_z, cov_z)

The same family serves as hyperprior and as the propagated posterior; the
posterior is refit by moment matching in z-space.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

MIN_COV_EIG = 1e-10
DEFAULT_PRIOR_SD = 1.5


@dataclass(frozen=True)
class SigmoidGaussian:
    """Gaussian over z together with the sigmoid bounds mapping z to theta."""

    lower: np.ndarray
    upper: np.ndarray
    mean_z: np.ndarray
    cov_z: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        mean_z = np.atleast_1d(np.asarray(self.mean_z, dtype=float))
        cov_z = np.atleast_2d(np.asarray(self.cov_z, dtype=float))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "mean_z", mean_z)
        object.__setattr__(self, "cov_z", cov_z)
        if lower.shape != upper.shape or np.any(lower >= upper):
            raise ValueError("need lower < upper elementwise")
        if mean_z.shape[0] != lower.shape[0] or cov_z.shape != (lower.size, lower.size):
            raise ValueError("mean_z / cov_z dimensions do not match the bounds")

    @property
    def dim(self) -> int:
        return self.lower.size

    def chol_z(self) -> np.ndarray:
        return np.linalg.cholesky(self.cov_z)


def noninformative_prior(lower, upper, sd: float = DEFAULT_PRIOR_SD) -> SigmoidGaussian:
    """Wide z-space prior: zero mean, sd^2 * identity covariance."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    return SigmoidGaussian(
        lower, upper, np.zeros(lower.size), sd**2 * np.eye(lower.size)
    )


def to_bounded(z, spec: SigmoidGaussian) -> np.ndarray:
    """Map latent z to the bounded parameter vector (strictly inside bounds)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape[-1] != spec.dim:
        raise ValueError("z length does not match the bounds")
    return spec.lower + (spec.upper - spec.lower) * expit(z)


def to_latent(theta, spec: SigmoidGaussian, clip: bool = True) -> np.ndarray:
    """Invert the scaled sigmoid.

    Values strictly outside [lower, upper] raise. With clip=True (default),
    values inside the closed interval are first pulled into
    [lower + eps, upper - eps] with eps = 1e-12 * (upper - lower), so that
    numerically saturated parameters invert to large finite z.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape[-1] != spec.dim:
        raise ValueError("theta length does not match the bounds")
    width = spec.upper - spec.lower
    if np.any(theta < spec.lower) or np.any(theta > spec.upper):
        raise ValueError("theta outside its bounds")
    if clip:
        eps = 1e-12 * width
        theta = np.clip(theta, spec.lower + eps, spec.upper - eps)
    elif np.any(theta <= spec.lower) or np.any(theta >= spec.upper):
        raise ValueError("theta on its bounds")
    p = (theta - spec.lower) / width
    return np.log(p) - np.log1p(-p)


def moment_match(z_samples) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance (denominator M-1) of latent-space draws.

    The covariance is inflated along the diagonal when its smallest eigenvalue
    falls below MIN_COV_EIG, so the result always factorizes.
    """
    z = np.atleast_2d(np.asarray(z_samples, dtype=float))
    if z.shape[0] < 2:
        raise ValueError("need at least two rows to match moments")
    mean = z.mean(axis=0)
    cov = np.cov(z, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    eig_min = float(np.linalg.eigvalsh(cov).min())
    if eig_min < MIN_COV_EIG:
        cov = cov + (MIN_COV_EIG - min(eig_min, 0.0)) * np.eye(cov.shape[0])
    return mean, cov


def refit(spec: SigmoidGaussian, theta_samples) -> SigmoidGaussian:
    """Refit the z-space Gaussian to a sample of bounded parameter vectors."""
    z = to_latent(np.atleast_2d(np.asarray(theta_samples, dtype=float)), spec)
    mean, cov = moment_match(z)
    return replace(spec, mean_z=mean, cov_z=cov)


def marginal(spec: SigmoidGaussian, idx) -> SigmoidGaussian:
    """Marginal of a coordinate subset."""
    idx = np.asarray(idx, dtype=int)
    return SigmoidGaussian(
        spec.lower[idx],
        spec.upper[idx],
        spec.mean_z[idx],
        spec.cov_z[np.ix_(idx, idx)],
    )


def conditional(spec: SigmoidGaussian, free_idx, fixed_idx, z_fixed) -> SigmoidGaussian:
    """Gaussian over the free block conditioned on fixed z-coordinates.

    Standard partitioned-Gaussian conditioning in z-space; the bounds of the
    free block carry over unchanged. With zero cross-covariance this reduces
    to `marginal(spec, free_idx)`.
    """
    free_idx = np.asarray(free_idx, dtype=int)
    fixed_idx = np.asarray(fixed_idx, dtype=int)
    if fixed_idx.size == 0:
        return marginal(spec, free_idx)
    z_fixed = np.atleast_1d(np.asarray(z_fixed, dtype=float))
    K_ff = spec.cov_z[np.ix_(free_idx, free_idx)]
    K_fx = spec.cov_z[np.ix_(free_idx, fixed_idx)]
    K_xx = spec.cov_z[np.ix_(fixed_idx, fixed_idx)]
    gain = np.linalg.solve(K_xx, K_fx.T).T
    mean = spec.mean_z[free_idx] + gain @ (z_fixed - spec.mean_z[fixed_idx])
    cov = K_ff - gain @ K_fx.T
    cov = 0.5 * (cov + cov.T)
    eig_min = float(np.linalg.eigvalsh(cov).min())
    if eig_min < MIN_COV_EIG:
        cov = cov + (MIN_COV_EIG - min(eig_min, 0.0)) * np.eye(cov.shape[0])
    return SigmoidGaussian(spec.lower[free_idx], spec.upper[free_idx], mean, cov)
