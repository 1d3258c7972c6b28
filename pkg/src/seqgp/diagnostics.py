"""Run diagnostics: posterior coverage of synthetic truth, bias-variance
comparison of sequential runs against the full baseline, and the held-out
prediction experiment."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .engine import RunConfig, SampleSet, StepDiagnostics, initial_sample, sequential_step
from .gp import KernelParams, LatentBlock
from .regression import predictive_conditionals, predictive_loglik, split_half_plane


def coverage_report(
    sample: SampleSet,
    truth_values: np.ndarray | None,
    y: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    seed: int = 0,
) -> dict:
    """Fraction of true latent values inside the +/-2 SD posterior band, and
    the number of observations outside their +/-2 SD posterior-predictive
    credible interval.

    The data interval adds a fresh noise draw per retained state (mean shift
    and noise SD taken from that state's likelihood parameters) rather than
    widening the band analytically. Missing truth simply omits the metric.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    out: dict = {"t": sample.t, "n_points": sample.f.shape[1]}
    mean_f = sample.f.mean(axis=0)
    sd_f = sample.f.std(axis=0, ddof=1)
    if truth_values is not None:
        truth_values = np.asarray(truth_values, dtype=float)
        inside = np.abs(truth_values - mean_f) <= 2.0 * sd_f
        out["coverage"] = float(inside.mean())
    if y is not None:
        y = np.asarray(y, dtype=float)
        mu = sample.alpha[:, 0][:, None]
        noise_sd = sample.alpha[:, 1][:, None]
        y_rep = sample.f + mu + noise_sd * rng.standard_normal(sample.f.shape)
        center = y_rep.mean(axis=0)
        half = 2.0 * y_rep.std(axis=0, ddof=1)
        out["y_exceedances"] = int(np.sum(np.abs(y - center) > half))
    return out


def phi_spatial_mean(sample: SampleSet) -> np.ndarray:
    """Default comparison functional: per-state spatial mean of the block."""
    return sample.f.mean(axis=1)


def phi_coordinate(j: int) -> Callable[[SampleSet], np.ndarray]:
    """Comparison functional picking out one latent coordinate."""
    return lambda sample: sample.f[:, j]


def bias_variance_report(
    seq_sets: Sequence[SampleSet],
    full_sets: Sequence[SampleSet],
    seq_diags: Sequence[StepDiagnostics],
    full_diags: Sequence[StepDiagnostics],
    tau: int,
    n_per_step: int,
    phi: Callable[[SampleSet], np.ndarray] = phi_spatial_mean,
    t_c: float | None = None,
) -> dict:
    """Per-step variance ratio, bias estimate and error-difference table.

    For each step: the sample variance of phi under the full run (treated as
    ground truth) and under the sequential run, their ratio, and the absolute
    difference of means. Complexity constants are fitted from wall times
    (full ~ t^3 N^3, sequential per step ~ tau^3 N^3) and combined into the
    estimated MSE difference `delta` between running full MCMC and the
    sequential approximation inside a fixed compute budget t_c.
    """
    if len(seq_sets) != len(full_sets) or not seq_sets:
        raise ValueError("need equally long, non-empty runs")
    for s, f in zip(seq_sets, full_sets):
        if s.t != f.t:
            raise ValueError("step indices of the two runs differ")
        if s.inputs.shape != f.inputs.shape or not np.allclose(s.inputs, f.inputs):
            raise ValueError("the two runs were not made on identical data")
    full_times = {d.t: d.wall_time_s for d in full_diags}
    seq_times = {d.t: d.wall_time_s for d in seq_diags}
    if t_c is None:
        t_c = float(sum(full_times.values()))

    n3 = float(n_per_step) ** 3
    c_full = float(np.median([
        full_times[s.t] / (s.t**3 * n3) for s in full_sets if s.t in full_times
    ]))
    seq_steps = [s.t for s in seq_sets if s.t in seq_times and s.t >= 2]
    if seq_steps:
        c_seq = float(np.median([seq_times[t] / (tau**3 * n3) for t in seq_steps]))
    else:
        c_seq = float(seq_times.get(1, 0.0) / (tau**3 * n3))

    rows = []
    for s, f in zip(seq_sets, full_sets):
        phi_seq = np.asarray(phi(s), dtype=float)
        phi_full = np.asarray(phi(f), dtype=float)
        var_seq = float(np.var(phi_seq, ddof=1))
        var_full = float(np.var(phi_full, ddof=1))
        bias = float(abs(phi_seq.mean() - phi_full.mean()))
        ratio = var_seq / var_full if var_full > 0 else np.inf
        delta = (
            var_full * c_full * s.t**3 * n3 / t_c
            - var_seq * c_seq * s.t * tau**3 * n3 / t_c
            - bias**2
        )
        rows.append({
            "t": s.t,
            "var_full": var_full,
            "var_seq": var_seq,
            "ratio": ratio,
            "bias": bias,
            "delta": delta,
            "time_full_s": full_times.get(s.t, float("nan")),
            "time_seq_s": seq_times.get(s.t, float("nan")),
        })
    return {"rows": rows, "c_full": c_full, "c_seq": c_seq, "t_c": t_c}


def predictive_trace(
    sample: SampleSet,
    window_sets: Sequence[SampleSet] | None,
    x_obs: np.ndarray,
    x_star: np.ndarray,
    y_star: np.ndarray,
) -> np.ndarray:
    """Running mean over retained states of the held-out predictive
    log-likelihood, conditioning each state's prediction on its own latent
    draw (and, when given, the matching window blocks)."""
    m = sample.m_samples
    lls = np.empty(m)
    for i in range(m):
        params = KernelParams.from_vector(sample.kappa[i])
        window = (
            [LatentBlock(s.inputs, s.f[i]) for s in window_sets]
            if window_sets
            else None
        )
        mean, cov = predictive_conditionals(sample.f[i], x_obs, x_star, params, window)
        lls[i] = predictive_loglik(mean, cov, sample.alpha[i], y_star)
    return np.cumsum(lls) / np.arange(1, m + 1)


def predict_experiment(
    history: Sequence[SampleSet],
    y_t: np.ndarray,
    x_t: np.ndarray,
    model,
    cfg: RunConfig,
    rng: np.random.Generator,
    boundary: float = 0.5,
    window_in_predictive: bool = True,
) -> dict:
    """Half-plane prediction experiment at one step.

    Splits the step's data into an observed half (first spatial coordinate
    below `boundary`) and a held-out half, then samples the observed-half
    latent values twice: once sequentially against the windowed conditional
    prior with the propagated hyperparameter posterior, and once from scratch
    with no history. Each variant's predictive log-likelihood trace of the
    held-out half is returned as a running mean over retained states.
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    y_t = np.asarray(y_t, dtype=float)
    train, test = split_half_plane(x_t, boundary)
    if train.size == 0 or test.size == 0:
        raise ValueError("half-plane split left one side empty")
    x_obs, y_obs = x_t[train], y_t[train]
    x_star, y_star = x_t[test], y_t[test]

    window = list(history[-cfg.tau:])
    seq_set, _ = sequential_step(history[-1], window, y_obs, x_obs, model, cfg, rng)
    free_set, _ = initial_sample(y_obs, x_obs, model, cfg, rng)

    seq_trace = predictive_trace(
        seq_set, window if window_in_predictive else None, x_obs, x_star, y_star
    )
    free_trace = predictive_trace(free_set, None, x_obs, x_star, y_star)
    return {
        "train_idx": train,
        "test_idx": test,
        "seq_trace": seq_trace,
        "free_trace": free_trace,
        "seq_final": float(seq_trace[-1]),
        "free_final": float(free_trace[-1]),
    }
