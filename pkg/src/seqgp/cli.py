"""Command-line harness: dataset generation, sequential runs, the full
baseline, prediction and comparison experiments, and metric regeneration
from persisted CSVs.

Exit codes: 0 success, 1 configuration error, 2 runtime sampler error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serialize
from .diagnostics import bias_variance_report, coverage_report, predict_experiment
from .engine import RunConfig, SampleSet, full_gibbs_baseline, run_sequence
from .gp import DecompositionError
from .pricing import OptionPricingModel, generate_option_dataset, softplus
from .regression import GaussianRegression, generate_regression_dataset
from .samplers import SamplerStallError

REGRESSION_KAPPA_MAX = (np.sqrt(10.0), np.sqrt(10.0), np.sqrt(10.0), 2.0)
REGRESSION_ALPHA_BOUNDS = ((0.0, 0.0), (1.0, 1.0))
OPTIONS_KAPPA_MAX = (1.0, 1.0, 1.0, 1.0)
OPTIONS_ALPHA_BOUNDS = ((-3.0, 0.0), (0.5, 0.5))


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _data_rng_seed(seed: int):
    return np.random.SeedSequence(seed, spawn_key=(0,))


def _chain_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))


def _coverage_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, t)))


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in str(text).split(",")])


def _bool(text) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


@dataclass
class Settings:
    model_name: str
    cfg: RunConfig
    out_dir: Path
    n_strikes: int = 15
    n_maturities: int = 5

    def make_model(self):
        if self.model_name == "regression":
            return GaussianRegression()
        return OptionPricingModel(
            maturities=np.linspace(0.25, 1.25, self.n_maturities),
            strikes=np.linspace(700.0, 1300.0, self.n_strikes),
        )


def load_settings(config_path, overrides: dict | None = None) -> Settings:
    path = Path(config_path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = serialize.read_keyvalue(path)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return settings_from_mapping(raw)
    except (ValueError, KeyError) as err:
        raise ConfigError(f"bad config: {err}") from err


def settings_from_mapping(raw: dict) -> Settings:
    model_name = str(raw.get("model", "regression"))
    if model_name not in ("regression", "options"):
        raise ValueError(f"unknown model {model_name!r}")
    n_strikes = int(raw.get("n_strikes", 15))
    n_maturities = int(raw.get("n_maturities", 5))
    if model_name == "options":
        n_default = n_strikes * n_maturities
        kappa_max = OPTIONS_KAPPA_MAX
        alpha_min, alpha_max = OPTIONS_ALPHA_BOUNDS
    else:
        n_default = 50
        kappa_max = REGRESSION_KAPPA_MAX
        alpha_min, alpha_max = REGRESSION_ALPHA_BOUNDS
    kappa_max = _floats(raw["kappa_max"]) if "kappa_max" in raw else np.array(kappa_max)
    alpha_max = _floats(raw["alpha_max"]) if "alpha_max" in raw else np.array(alpha_max)
    alpha_min = np.asarray(alpha_min, dtype=float)[: alpha_max.size]
    cfg = RunConfig(
        n_per_step=int(raw.get("n_per_step", n_default)),
        t_steps=int(raw.get("t_steps", 10)),
        tau=int(raw.get("tau", 1)),
        m_samples=int(raw.get("m_samples", 1000)),
        n_initial=int(raw.get("n_initial", 6000)),
        burn_in=int(raw.get("burn_in", 1000)),
        thin=int(raw.get("thin", 5)),
        ess_reps=int(raw.get("ess_reps", 5)),
        seed=int(raw.get("seed", 0)),
        sdss_every_step=_bool(raw.get("sdss_every_step", "false")),
        aux_scale=float(raw.get("aux_scale", 1.0)),
        kappa_min=np.zeros(kappa_max.size),
        kappa_max=kappa_max,
        alpha_min=alpha_min,
        alpha_max=alpha_max,
    )
    cfg.validate(sequential=cfg.t_steps > 1)
    if model_name == "options" and cfg.n_per_step != n_strikes * n_maturities:
        raise ValueError("n_per_step must equal n_strikes * n_maturities for options")
    out_dir = Path(raw.get("out_dir", "runs/out"))
    return Settings(model_name, cfg, out_dir, n_strikes, n_maturities)


def _build_dataset(settings: Settings):
    """Deterministic dataset for a run: data stream is independent of the
    chain stream but derived from the same seed."""
    cfg = settings.cfg
    data_seed = _data_rng_seed(cfg.seed)
    if settings.model_name == "regression":
        ds = generate_regression_dataset(cfg.t_steps, cfg.n_per_step, seed=data_seed)
        model = settings.make_model()
        return ds, model, ds.y, ds.inputs
    model = settings.make_model()
    ds = generate_option_dataset(
        t_steps=cfg.t_steps,
        n_maturities=settings.n_maturities,
        n_strikes=settings.n_strikes,
        seed=data_seed,
        model=model,
    )
    x = [model.gp_inputs(tv) for tv in ds.t_values]
    return ds, model, ds.quotes, x


def _write_dataset(settings: Settings, ds, out_dir: Path) -> None:
    if settings.model_name == "regression":
        serialize.write_regression_dataset(out_dir, ds)
    else:
        serialize.write_option_dataset(out_dir, ds)


def _coverage_records(settings: Settings, ds, samples: list[SampleSet]) -> list[dict]:
    cfg = settings.cfg
    records = []
    for s in samples:
        if settings.model_name == "regression":
            rep = coverage_report(
                s, ds.f_true[s.t - 1], ds.y[s.t - 1], rng=_coverage_rng(cfg.seed, s.t)
            )
            records.append(serialize.metric_record(s.t, "coverage", rep["coverage"], cfg.seed))
            records.append(
                serialize.metric_record(s.t, "y_exceedances", rep["y_exceedances"], cfg.seed)
            )
        else:
            sigma_samples = softplus(s.f + s.alpha[:, 0][:, None])
            mean = sigma_samples.mean(axis=0)
            sd = sigma_samples.std(axis=0, ddof=1)
            inside = np.abs(ds.sigma_true[s.t - 1] - mean) <= 2.0 * sd
            records.append(
                serialize.metric_record(s.t, "sigma_coverage", float(inside.mean()), cfg.seed)
            )
    return records


def cmd_generate(ns) -> int:
    out = Path(ns.out)
    if ns.model == "regression":
        ds = generate_regression_dataset(ns.t_steps, ns.n, seed=_data_rng_seed(ns.seed))
        serialize.write_regression_dataset(out, ds)
    else:
        ds = generate_option_dataset(
            t_steps=ns.t_steps,
            n_maturities=ns.n_maturities,
            n_strikes=ns.n_strikes,
            seed=_data_rng_seed(ns.seed),
        )
        serialize.write_option_dataset(out, ds)
    print(f"wrote {ns.model} dataset for {ns.t_steps} steps to {out}")
    return 0


def _overrides(ns) -> dict:
    keys = ("seed", "out_dir", "t_steps", "n_per_step", "tau", "m_samples",
            "n_initial", "burn_in", "thin", "ess_reps")
    return {k: getattr(ns, k, None) for k in keys}


def cmd_run(ns) -> int:
    settings = load_settings(ns.config, _overrides(ns))
    cfg = settings.cfg
    out = settings.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ds, model, data, x = _build_dataset(settings)
    _write_dataset(settings, ds, out / "data")
    samples, diags = run_sequence(data, x, model, cfg, rng=_chain_rng(cfg.seed))
    for s in samples:
        serialize.write_sample_csv(out / serialize.sample_filename(s.t), s)
    records = []
    for d in diags:
        records.append(serialize.metric_record(d.t, "wall_time_s", d.wall_time_s, cfg.seed))
        records.append(
            serialize.metric_record(d.t, "mean_posterior_sd", float(d.posterior_sd.mean()), cfg.seed)
        )
        records.append(serialize.metric_record(d.t, "shrink_count", d.shrink_count, cfg.seed))
    records.extend(_coverage_records(settings, ds, samples))
    metrics = out / "metrics.jsonl"
    metrics.unlink(missing_ok=True)
    serialize.append_metrics(metrics, records)
    serialize.write_sidecar(out / "run_config.txt", _echo_config(settings))
    print(f"run complete: {len(samples)} sample sets in {out}")
    return 0


def _echo_config(settings: Settings) -> dict:
    cfg = settings.cfg
    return {
        "model": settings.model_name,
        "t_steps": cfg.t_steps,
        "n_per_step": cfg.n_per_step,
        "tau": cfg.tau,
        "m_samples": cfg.m_samples,
        "n_initial": cfg.n_initial,
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "ess_reps": cfg.ess_reps,
        "seed": cfg.seed,
        "sdss_every_step": str(cfg.sdss_every_step).lower(),
        "aux_scale": cfg.aux_scale,
        "kappa_max": ",".join(serialize.FMT % v for v in cfg.kappa_max),
        "alpha_max": ",".join(serialize.FMT % v for v in cfg.alpha_max),
        "n_strikes": settings.n_strikes,
        "n_maturities": settings.n_maturities,
        "out_dir": str(settings.out_dir),
    }


def cmd_baseline(ns) -> int:
    settings = load_settings(ns.config, _overrides(ns))
    cfg = settings.cfg
    out = settings.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ds, model, data, x = _build_dataset(settings)
    samples, diags = full_gibbs_baseline(
        data, x, model, cfg, rng=_chain_rng(cfg.seed), max_points=ns.max_points
    )
    records = []
    for s, d in zip(samples, diags):
        serialize.write_sample_csv(out / f"baseline_samples_t{s.t}.csv", s)
        records.append(serialize.metric_record(d.t, "baseline_wall_time_s", d.wall_time_s, cfg.seed))
    serialize.append_metrics(out / "baseline_metrics.jsonl", records)
    print(f"baseline complete: {len(samples)} sample sets in {out}")
    return 0


def cmd_predict(ns) -> int:
    settings = load_settings(ns.config, _overrides(ns))
    if settings.model_name != "regression":
        raise ConfigError("predict supports the regression model only")
    cfg = settings.cfg
    if cfg.t_steps < 2:
        raise ConfigError("predict needs t_steps >= 2")
    out = settings.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ds, model, data, x = _build_dataset(settings)
    rng = _chain_rng(cfg.seed)
    import dataclasses

    hist_cfg = dataclasses.replace(cfg, t_steps=cfg.t_steps - 1)
    history, _ = run_sequence(data[:-1], x[:-1], model, hist_cfg, rng=rng)
    result = predict_experiment(history, data[-1], x[-1], model, cfg, rng)
    with open(out / "predict_trace.csv", "w") as fh:
        fh.write("iter,ll_running_sequential,ll_running_independent\n")
        for i in range(len(result["seq_trace"])):
            fh.write(
                f"{i + 1},{serialize.FMT % result['seq_trace'][i]},"
                f"{serialize.FMT % result['free_trace'][i]}\n"
            )
    serialize.append_metrics(out / "metrics.jsonl", [
        serialize.metric_record(cfg.t_steps, "predictive_ll_sequential", result["seq_final"], cfg.seed),
        serialize.metric_record(cfg.t_steps, "predictive_ll_independent", result["free_final"], cfg.seed),
    ])
    print(
        f"predict complete: sequential {result['seq_final']:.4f} "
        f"vs independent {result['free_final']:.4f}"
    )
    return 0


def cmd_compare(ns) -> int:
    settings = load_settings(ns.config, _overrides(ns))
    cfg = settings.cfg
    out = settings.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ds, model, data, x = _build_dataset(settings)
    seq_samples, seq_diags = run_sequence(data, x, model, cfg, rng=_chain_rng(cfg.seed))
    full_samples, full_diags = full_gibbs_baseline(
        data, x, model, cfg, rng=_chain_rng(cfg.seed + 1), max_points=ns.max_points
    )
    report = bias_variance_report(
        seq_samples, full_samples, seq_diags, full_diags,
        tau=cfg.tau, n_per_step=cfg.n_per_step,
    )
    with open(out / "rtable.csv", "w") as fh:
        fh.write("t,var_full,var_seq,ratio,bias,delta,time_full_s,time_seq_s\n")
        for row in report["rows"]:
            fh.write(",".join([str(row["t"])] + [
                serialize.FMT % row[k]
                for k in ("var_full", "var_seq", "ratio", "bias", "delta",
                          "time_full_s", "time_seq_s")
            ]) + "\n")
    records = [
        serialize.metric_record(row["t"], "variance_ratio", row["ratio"], cfg.seed)
        for row in report["rows"]
    ]
    serialize.append_metrics(out / "metrics.jsonl", records)
    print(f"compare complete: ratio table in {out / 'rtable.csv'}")
    return 0


def cmd_report(ns) -> int:
    run_dir = Path(ns.run_dir)
    if not run_dir.exists():
        raise ConfigError(f"run directory not found: {run_dir}")
    data_dir = Path(ns.data_dir) if ns.data_dir else run_dir / "data"
    if not data_dir.exists():
        raise ConfigError(f"data directory not found: {data_dir}")
    echo_path = run_dir / "run_config.txt"
    echo = serialize.read_keyvalue(echo_path) if echo_path.exists() else {}
    seed = int(echo.get("seed", 0))
    truth = serialize.read_keyvalue(data_dir / "truth.txt")
    model_name = truth.get("model", "regression")
    records = []
    if model_name == "regression":
        ds = serialize.read_regression_dataset(data_dir)
        t = 1
        while (run_dir / serialize.sample_filename(t)).exists():
            raw = serialize.read_sample_csv(run_dir / serialize.sample_filename(t))
            mean_f = raw["f"].mean(axis=0)
            sd_f = raw["f"].std(axis=0, ddof=1)
            inside = np.abs(ds["f_true"][t - 1] - mean_f) <= 2.0 * sd_f
            records.append(serialize.metric_record(t, "coverage", float(inside.mean()), seed))
            rng = _coverage_rng(seed, t)
            mu = raw["alpha"][:, 0][:, None]
            noise = raw["alpha"][:, 1][:, None]
            y_rep = raw["f"] + mu + noise * rng.standard_normal(raw["f"].shape)
            half = 2.0 * y_rep.std(axis=0, ddof=1)
            n_exc = int(np.sum(np.abs(ds["y"][t - 1] - y_rep.mean(axis=0)) > half))
            records.append(serialize.metric_record(t, "y_exceedances", n_exc, seed))
            t += 1
    else:
        ds = serialize.read_option_dataset(data_dir)
        t = 1
        while (run_dir / serialize.sample_filename(t)).exists():
            raw = serialize.read_sample_csv(run_dir / serialize.sample_filename(t))
            sigma_samples = softplus(raw["f"] + raw["alpha"][:, 0][:, None])
            mean = sigma_samples.mean(axis=0)
            sd = sigma_samples.std(axis=0, ddof=1)
            inside = np.abs(ds["sigma_true"][t - 1] - mean) <= 2.0 * sd
            records.append(serialize.metric_record(t, "sigma_coverage", float(inside.mean()), seed))
            t += 1
    if not records:
        raise ConfigError(f"no sample CSVs found in {run_dir}")
    report_path = run_dir / "report.jsonl"
    report_path.unlink(missing_ok=True)
    serialize.append_metrics(report_path, records)
    print(f"report written: {report_path} ({len(records)} metrics)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="seqgp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("--model", choices=("regression", "options"), required=True)
    gen.add_argument("--t-steps", type=int, default=10)
    gen.add_argument("--n", type=int, default=50)
    gen.add_argument("--n-strikes", type=int, default=15)
    gen.add_argument("--n-maturities", type=int, default=5)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    def add_run_args(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", dest="out_dir", default=None)
        p.add_argument("--t-steps", dest="t_steps", type=int, default=None)
        p.add_argument("--n-per-step", dest="n_per_step", type=int, default=None)
        p.add_argument("--tau", type=int, default=None)
        p.add_argument("--m-samples", dest="m_samples", type=int, default=None)
        p.add_argument("--n-initial", dest="n_initial", type=int, default=None)
        p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
        p.add_argument("--thin", type=int, default=None)
        p.add_argument("--ess-reps", dest="ess_reps", type=int, default=None)

    run = sub.add_parser("run", help="sequential sampling run")
    add_run_args(run)
    run.set_defaults(func=cmd_run)

    base = sub.add_parser("baseline", help="full blocked-Gibbs baseline")
    add_run_args(base)
    base.add_argument("--max-points", dest="max_points", type=int, default=2000)
    base.set_defaults(func=cmd_baseline)

    pred = sub.add_parser("predict", help="half-plane prediction experiment")
    add_run_args(pred)
    pred.set_defaults(func=cmd_predict)

    comp = sub.add_parser("compare", help="sequential vs full comparison")
    add_run_args(comp)
    comp.add_argument("--max-points", dest="max_points", type=int, default=2000)
    comp.set_defaults(func=cmd_compare)

    rep = sub.add_parser("report", help="recompute metrics from persisted CSVs")
    rep.add_argument("--run-dir", dest="run_dir", required=True)
    rep.add_argument("--data-dir", dest="data_dir", default=None)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    start = time.perf_counter()
    try:
        code = ns.func(ns)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (SamplerStallError, DecompositionError, RuntimeError, ArithmeticError) as err:
        print(f"sampler error: {err}", file=sys.stderr)
        return 2
    if code == 0:
        print(f"done in {time.perf_counter() - start:.1f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
