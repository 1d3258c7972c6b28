"""Gaussian-process core: squared-exponential kernel over space-time inputs,
Gram matrices, jittered Cholesky factorization, and conditional Gaussians for
latent blocks.

Input convention
----------------
A set of n inputs is an array of shape (n, D+1): the first D columns are
spatial coordinates, the last column is the (real-valued) time coordinate.
Kernel lengthscales follow the same ordering, spatial scales first, the time
scale last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

# Jitter escalation: fractions of the signal variance.
JITTER_START = 1e-8
JITTER_MAX = 1e-2
JITTER_GROWTH = 10.0


class DecompositionError(RuntimeError):
    """Cholesky factorization failed even at the largest jitter tried."""

    def __init__(self, message: str, jitter: float):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel hyperparameters.

    lengthscales holds the D spatial scales followed by the time scale;
    signal_sd is the prior standard deviation of the latent function.
    """

    lengthscales: np.ndarray
    signal_sd: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("lengthscales must be finite and positive")
        if not np.isfinite(self.signal_sd) or self.signal_sd <= 0:
            raise ValueError("signal_sd must be finite and positive")

    @classmethod
    def from_vector(cls, vec) -> "KernelParams":
        """Build from a flat vector (l_1, ..., l_{D+1}, signal_sd)."""
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:-1].copy(), float(vec[-1]))

    def to_vector(self) -> np.ndarray:
        return np.append(self.lengthscales, self.signal_sd)

    @property
    def ndim_inputs(self) -> int:
        return self.lengthscales.size


@dataclass(frozen=True)
class LatentBlock:
    """Latent function values at one time step's inputs."""

    inputs: np.ndarray  # (N, D+1)
    values: np.ndarray  # (N,)

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "values", values)
        if inputs.shape[0] != values.shape[0]:
            raise ValueError("inputs and values lengths differ")
        if not np.all(np.isfinite(values)):
            raise ValueError("latent values must be finite")


@dataclass(frozen=True)
class GaussianConditional:
    """Mean and lower Cholesky factor of a Gaussian over a latent block."""

    mean: np.ndarray
    chol: np.ndarray  # lower triangular
    jitter_used: float = 0.0

    @property
    def size(self) -> int:
        return self.mean.shape[0]

    def covariance(self) -> np.ndarray:
        return self.chol @ self.chol.T


def _check_inputs(pts: np.ndarray, params: KernelParams) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.shape[1] != params.ndim_inputs:
        raise ValueError(
            f"inputs have {pts.shape[1]} columns, kernel expects {params.ndim_inputs}"
        )
    return pts


def kernel_eval(p, q, params: KernelParams) -> float:
    """Squared-exponential covariance between two single inputs.

    k(p, q) = signal_sd^2 * exp(-0.5 * sum_j ((p_j - q_j) / l_j)^2)
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if p.shape != q.shape or p.size != params.ndim_inputs:
        raise ValueError("input dimensions do not match kernel parameters")
    d2 = np.sum(((p - q) / params.lengthscales) ** 2)
    return float(params.signal_sd**2 * np.exp(-0.5 * d2))


def gram_matrix(pts, params: KernelParams, jitter: float = 0.0) -> np.ndarray:
    """Kernel Gram matrix of a point set, plus `jitter` on the diagonal.

    Symmetric by construction; the diagonal is exactly signal_sd^2 + jitter.
    """
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    pts = _check_inputs(pts, params)
    scaled = pts / params.lengthscales
    d2 = cdist(scaled, scaled, metric="sqeuclidean")
    K = params.signal_sd**2 * np.exp(-0.5 * d2)
    if jitter > 0:
        K[np.diag_indices_from(K)] += jitter
    return K


def cross_gram(pts_a, pts_b, params: KernelParams) -> np.ndarray:
    """Rectangular kernel matrix between two point sets."""
    pts_a = _check_inputs(pts_a, params)
    pts_b = _check_inputs(pts_b, params)
    scaled_a = pts_a / params.lengthscales
    scaled_b = pts_b / params.lengthscales
    d2 = cdist(scaled_a, scaled_b, metric="sqeuclidean")
    return params.signal_sd**2 * np.exp(-0.5 * d2)


def chol_decompose(K: np.ndarray, scale: float | None = None) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K, escalating diagonal jitter on failure.

    Tries a plain factorization first, then jitter from JITTER_START*scale up
    to JITTER_MAX*scale in factors of JITTER_GROWTH. `scale` defaults to the
    largest diagonal entry of K (the natural variance scale).

    Returns (L, jitter_used). Raises DecompositionError when the matrix stays
    non-positive-definite at the largest jitter; the error carries that jitter.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("K must be a square matrix")
    if scale is None:
        scale = float(np.max(np.diag(K))) if K.size else 1.0
        if not np.isfinite(scale) or scale <= 0:
            scale = 1.0
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * scale
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * scale * (1 + 1e-12):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    final = jitter / JITTER_GROWTH
    raise DecompositionError(
        f"matrix not positive definite at jitter {final:.3e}", jitter=final
    )


def conditional_prior(
    window: list[LatentBlock], query_inputs, params: KernelParams
) -> GaussianConditional:
    """Gaussian conditional of a new latent block given retained past blocks.

    Parameters
    ----------
    window : list of LatentBlock
        The retained blocks, oldest first. Empty list gives the unconditional
        zero-mean prior over the query inputs.
    query_inputs : (N, D+1) array
        Inputs of the block being conditioned.
    params : KernelParams

    Returns
    -------
    GaussianConditional with
        mean = K_*^T K_w^{-1} f_w
        chol = Cholesky factor of K_** - K_*^T K_w^{-1} K_* (plus jitter)

    Solves go through the window Cholesky factor (two triangular solves);
    the window covariance is never inverted explicitly.
    """
    query = _check_inputs(query_inputs, params)
    var_scale = params.signal_sd**2
    K_qq = gram_matrix(query, params)
    if not window:
        L, jit = chol_decompose(K_qq, scale=var_scale)
        return GaussianConditional(np.zeros(query.shape[0]), L, jit)
    w_inputs = np.vstack([b.inputs for b in window])
    w_values = np.concatenate([b.values for b in window])
    if w_inputs.shape[1] != query.shape[1]:
        raise ValueError("window and query input dimensions differ")
    K_w = gram_matrix(w_inputs, params)
    L_w, _ = chol_decompose(K_w, scale=var_scale)
    K_cross = cross_gram(w_inputs, query, params)
    A = solve_triangular(L_w, K_cross, lower=True)
    b = solve_triangular(L_w, w_values, lower=True)
    mean = A.T @ b
    cov = K_qq - A.T @ A
    cov = 0.5 * (cov + cov.T)
    L, jit = chol_decompose(cov, scale=var_scale)
    return GaussianConditional(mean, L, jit)


def prior_draw(cond: GaussianConditional, nu) -> np.ndarray:
    """Map a standard-normal vector through the conditional: chol @ nu + mean."""
    nu = np.asarray(nu, dtype=float)
    if nu.shape[0] != cond.size:
        raise ValueError("nu length does not match the conditional dimension")
    return cond.chol @ nu + cond.mean
