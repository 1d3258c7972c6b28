"""Slice-sampling transitions.

Three building blocks:

* `ess_step` -- one elliptical slice-sampling transition for targets of the
  form Gaussian prior x likelihood.
* `whitened_kernel_step` -- kernel-hyperparameter update that keeps the
  whitened latent representation fixed while the covariance moves, run as
  ESS in the latent z-space of the bounded parameters.
* `surrogate_data_step` -- kernel-hyperparameter update through noisy
  surrogate observations of the latent block, for weak-prior regimes where
  the whitened update mixes poorly.

All transitions are reversible with respect to their stated targets and use
only likelihood evaluations (no gradients).
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .gp import (
    DecompositionError,
    GaussianConditional,
    KernelParams,
    LatentBlock,
    chol_decompose,
    conditional_prior,
    prior_draw,
)
from .transforms import SigmoidGaussian, to_bounded

MAX_SHRINK = 1000


class SamplerStallError(RuntimeError):
    """Slice shrinkage failed to find an acceptable point.

    Termination is almost sure for a valid likelihood, so hitting the cap
    indicates a broken likelihood function.
    """


class EssResult(NamedTuple):
    state: np.ndarray
    loglik: float
    n_shrink: int


def _rotate(current, aux, mean, theta) -> np.ndarray:
    """Point at angle theta on the ellipse through `current` and `aux`."""
    return (current - mean) * np.cos(theta) + (aux - mean) * np.sin(theta) + mean


def ess_step(
    current: np.ndarray,
    mean: np.ndarray,
    chol: np.ndarray,
    loglik: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    cur_loglik: float | None = None,
    max_shrink: int = MAX_SHRINK,
) -> EssResult:
    """One elliptical slice-sampling transition.

    Targets the distribution proportional to exp(loglik(f)) * N(f; mean, C)
    with C = chol chol^T. Draws an auxiliary point on the prior, picks a
    log slice height under the current likelihood, then shrinks an angular
    bracket [theta - 2*pi, theta] toward zero until a point on the ellipse
    clears the slice.

    Returns the accepted state, its log-likelihood, and the number of
    rejected proposals before acceptance.
    """
    current = np.asarray(current, dtype=float)
    if cur_loglik is None:
        cur_loglik = loglik(current)
    if np.isnan(cur_loglik):
        raise ValueError("log-likelihood of the current state is NaN")
    if cur_loglik == -np.inf:
        raise ValueError("current state has zero likelihood; cannot slice")
    aux = mean + chol @ rng.standard_normal(current.shape[0])
    log_u = cur_loglik + np.log(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * np.pi)
    lo, hi = theta - 2.0 * np.pi, theta
    for n_shrink in range(max_shrink):
        proposal = _rotate(current, aux, mean, theta)
        ll = loglik(proposal)
        if np.isnan(ll):
            raise ValueError("log-likelihood returned NaN")
        if ll > log_u:
            return EssResult(proposal, float(ll), n_shrink)
        if theta < 0.0:
            lo = theta
        else:
            hi = theta
        theta = rng.uniform(lo, hi)
    raise SamplerStallError(
        f"no acceptable point after {max_shrink} shrink iterations"
    )


class HyperResult(NamedTuple):
    z: np.ndarray
    params: KernelParams
    f_values: np.ndarray
    cond: GaussianConditional
    loglik: float
    n_shrink: int


def whitened_kernel_step(
    f_values: np.ndarray,
    window: list[LatentBlock],
    query_inputs: np.ndarray,
    z: np.ndarray,
    q_spec: SigmoidGaussian,
    loglik_f: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    cond: GaussianConditional | None = None,
    cur_loglik: float | None = None,
    make_params: Callable[[np.ndarray], KernelParams] = KernelParams.from_vector,
) -> HyperResult:
    """Update kernel hyperparameters with the latent whitening held fixed.

    The latent block is written f = L nu + m under its conditional prior at
    the current parameters; nu is computed once and frozen. A proposal z'
    re-evaluates the conditional prior at theta' = to_bounded(z'), maps nu
    through it, and scores the data likelihood there, so accepting z' moves
    f as a by-product. ESS in z-space against N(mean_z, cov_z) from `q_spec`.

    Proposals whose conditional prior fails to factorize score -inf and are
    rejected inside the slice loop rather than aborting the chain.
    """
    f_values = np.asarray(f_values, dtype=float)
    if cond is None:
        cond = conditional_prior(window, query_inputs, make_params(to_bounded(z, q_spec)))
    nu = solve_triangular(cond.chol, f_values - cond.mean, lower=True)

    stash: dict[bytes, tuple] = {}

    def z_loglik(z_prop: np.ndarray) -> float:
        theta = to_bounded(z_prop, q_spec)
        try:
            params_p = make_params(theta)
            cond_p = conditional_prior(window, query_inputs, params_p)
        except (DecompositionError, ValueError):
            return -np.inf
        f_prop = prior_draw(cond_p, nu)
        ll = loglik_f(f_prop)
        stash[z_prop.tobytes()] = (params_p, cond_p, f_prop, ll)
        return ll

    if cur_loglik is None:
        cur_loglik = loglik_f(f_values)
    result = ess_step(np.asarray(z, dtype=float), q_spec.mean_z, q_spec.chol_z(),
                      z_loglik, rng, cur_loglik=cur_loglik)
    key = result.state.tobytes()
    if key in stash:
        params_new, cond_new, f_new, ll_new = stash[key]
    else:  # pragma: no cover - accepted state is always the last evaluated
        params_new = make_params(to_bounded(result.state, q_spec))
        cond_new = conditional_prior(window, query_inputs, params_new)
        f_new = prior_draw(cond_new, nu)
        ll_new = loglik_f(f_new)
    return HyperResult(result.state, params_new, f_new, cond_new, float(ll_new),
                       result.n_shrink)


class ParamResult(NamedTuple):
    z: np.ndarray
    theta: np.ndarray
    loglik: float
    n_shrink: int


def bounded_param_step(
    z: np.ndarray,
    q_spec: SigmoidGaussian,
    loglik_theta: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    cur_loglik: float | None = None,
) -> ParamResult:
    """ESS in z-space for bounded parameters entering only the likelihood.

    Targets p(y | theta(z)) N(z; mean_z, cov_z); no latent-prior evaluation,
    so one transition costs a handful of likelihood calls.
    """
    z = np.asarray(z, dtype=float)

    def z_loglik(z_prop: np.ndarray) -> float:
        return loglik_theta(to_bounded(z_prop, q_spec))

    if cur_loglik is None:
        cur_loglik = loglik_theta(to_bounded(z, q_spec))
    result = ess_step(z, q_spec.mean_z, q_spec.chol_z(), z_loglik, rng,
                      cur_loglik=cur_loglik)
    return ParamResult(result.state, to_bounded(result.state, q_spec),
                       float(result.loglik), result.n_shrink)


class SurrogateResult(NamedTuple):
    z: np.ndarray
    params: KernelParams
    f_values: np.ndarray
    cond: GaussianConditional
    loglik: float
    n_shrink: int


def _surrogate_posterior(cond: GaussianConditional, g: np.ndarray, aux_scale: float,
                         var_scale: float):
    """Gaussian posterior of f given surrogate g = f + N(0, S), S = aux_scale*diag(K).

    Returns (post_mean, post_chol, log N(g; prior_mean, K + S)).
    """
    K = cond.covariance()
    s_diag = aux_scale * np.diag(K)
    KS = K + np.diag(s_diag)
    C, _ = chol_decompose(KS, scale=var_scale)
    resid = solve_triangular(C, g - cond.mean, lower=True)
    A = solve_triangular(C, K, lower=True)
    post_mean = cond.mean + A.T @ resid
    post_cov = K - A.T @ A
    post_cov = 0.5 * (post_cov + post_cov.T)
    R, _ = chol_decompose(post_cov, scale=var_scale)
    n = g.shape[0]
    log_g = -0.5 * (
        n * np.log(2.0 * np.pi) + 2.0 * np.sum(np.log(np.diag(C))) + resid @ resid
    )
    return post_mean, R, float(log_g)


def surrogate_data_step(
    f_values: np.ndarray,
    window: list[LatentBlock],
    query_inputs: np.ndarray,
    z: np.ndarray,
    q_spec: SigmoidGaussian,
    loglik_f: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    aux_scale: float = 1.0,
    cond: GaussianConditional | None = None,
    cur_loglik: float | None = None,
    make_params: Callable[[np.ndarray], KernelParams] = KernelParams.from_vector,
) -> SurrogateResult:
    """Kernel-hyperparameter update via surrogate observations of the latent block.

    Draws g ~ N(f, S) with S = aux_scale * diag(K) under the current prior
    covariance K, whitens f against the Gaussian posterior of f given g, and
    runs ESS over z with the whitened representation fixed. A proposal z' is
    scored by loglik(f(z')) + log N(g; m(z'), K(z') + S(z')), which leaves the
    joint posterior over (f, theta) invariant.

    With an empty window the prior is the unconditional zero-mean Gram prior.
    """
    if aux_scale <= 0:
        raise ValueError("aux_scale must be positive")
    f_values = np.asarray(f_values, dtype=float)
    params_cur = make_params(to_bounded(z, q_spec))
    if cond is None:
        cond = conditional_prior(window, query_inputs, params_cur)
    var_scale = params_cur.signal_sd**2
    s_diag = aux_scale * np.diag(cond.covariance())
    g = f_values + np.sqrt(s_diag) * rng.standard_normal(f_values.shape[0])
    post_mean, R, log_g_cur = _surrogate_posterior(cond, g, aux_scale, var_scale)
    eta = solve_triangular(R, f_values - post_mean, lower=True)

    stash: dict[bytes, tuple] = {}

    def z_loglik(z_prop: np.ndarray) -> float:
        theta = to_bounded(z_prop, q_spec)
        try:
            params_p = make_params(theta)
            cond_p = conditional_prior(window, query_inputs, params_p)
            post_mean_p, R_p, log_g = _surrogate_posterior(
                cond_p, g, aux_scale, params_p.signal_sd**2
            )
        except (DecompositionError, ValueError):
            return -np.inf
        f_prop = post_mean_p + R_p @ eta
        ll_f = loglik_f(f_prop)
        stash[z_prop.tobytes()] = (params_p, cond_p, f_prop, ll_f)
        return ll_f + log_g

    if cur_loglik is None:
        cur_loglik = loglik_f(f_values)
    result = ess_step(np.asarray(z, dtype=float), q_spec.mean_z, q_spec.chol_z(),
                      z_loglik, rng, cur_loglik=cur_loglik + log_g_cur)
    key = result.state.tobytes()
    if key in stash:
        params_new, cond_new, f_new, ll_new = stash[key]
    else:  # pragma: no cover
        theta = to_bounded(result.state, q_spec)
        params_new = make_params(theta)
        cond_new = conditional_prior(window, query_inputs, params_new)
        post_mean_p, R_p, _ = _surrogate_posterior(
            cond_new, g, aux_scale, params_new.signal_sd**2
        )
        f_new = post_mean_p + R_p @ eta
        ll_new = loglik_f(f_new)
    return SurrogateResult(result.state, params_new, f_new, cond_new,
                           float(ll_new), result.n_shrink)
