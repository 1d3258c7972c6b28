"""Gaussian regression likelihood and synthetic data for it.

Observations at each step are noisy shifted readings of the latent block:
y_i = f_i + mu_f + eps_i, eps_i ~ N(0, sigma_y^2). The likelihood parameters
alpha = (mu_f, sigma_y) absorb the constant mean shift, keeping the latent
process zero-mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .gp import (
    DecompositionError,
    KernelParams,
    LatentBlock,
    chol_decompose,
    conditional_prior,
)

TRUE_ALPHA = np.array([0.5, 0.3])  # (mu_f, sigma_y) used for synthetic data
LENGTHSCALE_HIGH = np.sqrt(10.0)


class GaussianRegression:
    """Likelihood model: y ~ N(f + mu_f, sigma_y^2 I)."""

    dim_alpha = 2

    def loglik(self, f_values, alpha, data) -> float:
        return gauss_loglik(f_values, alpha, data)


def gauss_loglik(f_values, alpha, y) -> float:
    """Sum of independent Gaussian log-densities of y around f + mu_f."""
    f_values = np.asarray(f_values, dtype=float)
    y = np.asarray(y, dtype=float)
    if f_values.shape != y.shape:
        raise ValueError("latent values and observations have different lengths")
    mu_f, sigma_y = float(alpha[0]), float(alpha[1])
    if sigma_y <= 0:
        raise ValueError("sigma_y must be positive")
    resid = y - f_values - mu_f
    n = y.shape[0]
    return float(
        -0.5 * n * np.log(2.0 * np.pi * sigma_y**2) - 0.5 * resid @ resid / sigma_y**2
    )


@dataclass
class RegressionDataset:
    """Synthetic regression sequence plus its generating ground truth."""

    inputs: list[np.ndarray]   # per step: (N, 3) = (x1, x2, t_value)
    f_true: list[np.ndarray]
    y: list[np.ndarray]
    t_values: np.ndarray
    kernel_params: KernelParams
    alpha: np.ndarray          # (mu_f, sigma_y)

    @property
    def t_steps(self) -> int:
        return len(self.y)


def generate_regression_dataset(
    t_steps: int,
    n_per_step: int,
    seed: int = 0,
    lengthscales: np.ndarray | None = None,
    signal_sd: float = 1.0,
    alpha: np.ndarray | None = None,
    max_retries: int = 5,
) -> RegressionDataset:
    """Draw a latent space-time function and noisy observations of it.

    Spatial inputs are uniform on the unit square; the step times are equally
    spaced over the unit interval; the three lengthscales default to a
    uniform draw on (0, sqrt(10)). The latent sequence is one joint draw
    from the zero-mean prior over all steps, so consecutive blocks carry the
    temporal dependence the sampler is meant to exploit.

    Nearly singular Gram matrices (tiny lengthscales at high density) get a
    fresh lengthscale draw, up to max_retries attempts.
    """
    if t_steps < 1 or n_per_step < 1:
        raise ValueError("t_steps and n_per_step must be positive")
    rng = np.random.default_rng(seed)
    alpha = TRUE_ALPHA.copy() if alpha is None else np.asarray(alpha, dtype=float)
    t_values = np.linspace(0.0, 1.0, t_steps) if t_steps > 1 else np.zeros(1)

    xy = rng.uniform(size=(t_steps, n_per_step, 2))
    inputs = [
        np.column_stack([xy[k], np.full(n_per_step, t_values[k])])
        for k in range(t_steps)
    ]
    stacked = np.vstack(inputs)

    last_err: Exception | None = None
    for _ in range(max_retries):
        ls = (
            rng.uniform(0.0, LENGTHSCALE_HIGH, size=3)
            if lengthscales is None
            else np.asarray(lengthscales, dtype=float)
        )
        try:
            params = KernelParams(ls, signal_sd)
            cond = conditional_prior([], stacked, params)
        except (DecompositionError, ValueError) as err:
            if lengthscales is not None:
                raise
            last_err = err
            continue
        break
    else:
        raise DecompositionError(
            f"no factorizable prior after {max_retries} lengthscale draws: {last_err}",
            jitter=np.nan,
        )

    f_all = cond.chol @ rng.standard_normal(stacked.shape[0]) + cond.mean
    f_true = [f_all[k * n_per_step:(k + 1) * n_per_step] for k in range(t_steps)]
    mu_f, sigma_y = alpha
    y = [
        f + mu_f + sigma_y * rng.standard_normal(n_per_step)
        for f in f_true
    ]
    return RegressionDataset(inputs, f_true, y, t_values, params, alpha)


def split_half_plane(x_t: np.ndarray, boundary: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Train/test indices: first spatial coordinate <= boundary goes to train."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    train = np.where(x_t[:, 0] <= boundary)[0]
    test = np.where(x_t[:, 0] > boundary)[0]
    return train, test


def predictive_conditionals(
    f_obs: np.ndarray,
    x_obs: np.ndarray,
    x_star: np.ndarray,
    params: KernelParams,
    window: list[LatentBlock] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian conditional of held-out latent values given an observed-half
    sample, optionally also conditioning on the windowed history blocks.

    Returns (mean, covariance); empty query gives empty outputs.
    """
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    if x_star.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))
    blocks = list(window) if window else []
    blocks.append(LatentBlock(x_obs, f_obs))
    cond = conditional_prior(blocks, x_star, params)
    return cond.mean, cond.covariance()


def predictive_loglik(mean, cov, alpha, y_star) -> float:
    """Log-density of held-out observations under the Gaussian predictive:
    N(y_star; mean + mu_f, cov + sigma_y^2 I)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    y_star = np.atleast_1d(np.asarray(y_star, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    mu_f, sigma_y = float(alpha[0]), float(alpha[1])
    n = y_star.shape[0]
    if mean.shape[0] != n or cov.shape != (n, n):
        raise ValueError("predictive mean/covariance sizes do not match y_star")
    total = cov + sigma_y**2 * np.eye(n)
    L, _ = chol_decompose(total, scale=max(float(np.max(np.diag(total))), 1e-300))
    resid = solve_triangular(L, y_star - mean - mu_f, lower=True)
    return float(
        -0.5 * (n * np.log(2.0 * np.pi) + 2.0 * np.sum(np.log(np.diag(L))) + resid @ resid)
    )
