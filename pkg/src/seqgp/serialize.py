"""File formats: sample CSVs, dataset CSVs, key=value sidecars/configs and
JSONL metrics. All floats print with 17 significant digits so round-trips
are exact and reruns are byte-comparable."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .engine import SampleSet
from .pricing import OptionDataset, StepQuotes
from .regression import RegressionDataset

FMT = "%.17g"


def _fmt(v: float) -> str:
    return FMT % float(v)


def write_sample_csv(path, sample: SampleSet) -> None:
    """samples_t<t>.csv: iter,f_1..f_N,kappa_1..,alpha_1.. one row per state."""
    n = sample.f.shape[1]
    dk = sample.kappa.shape[1]
    da = sample.alpha.shape[1]
    header = (
        ["iter"]
        + [f"f_{j + 1}" for j in range(n)]
        + [f"kappa_{j + 1}" for j in range(dk)]
        + [f"alpha_{j + 1}" for j in range(da)]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(sample.m_samples):
            row = [str(i + 1)]
            row += [_fmt(v) for v in sample.f[i]]
            row += [_fmt(v) for v in sample.kappa[i]]
            row += [_fmt(v) for v in sample.alpha[i]]
            fh.write(",".join(row) + "\n")


def read_sample_csv(path) -> dict:
    """Read a sample CSV back into f/kappa/alpha arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(v) for v in row[1:]] for row in rows])
    n = sum(1 for h in header if h.startswith("f_"))
    dk = sum(1 for h in header if h.startswith("kappa_"))
    return {
        "f": data[:, :n],
        "kappa": data[:, n:n + dk],
        "alpha": data[:, n + dk:],
    }


def sample_filename(t: int) -> str:
    return f"samples_t{t}.csv"


def write_sidecar(path, values: dict) -> None:
    with open(path, "w") as fh:
        for key, val in values.items():
            fh.write(f"{key}={_fmt(val) if isinstance(val, float) else val}\n")


def read_keyvalue(path) -> dict[str, str]:
    """Line-oriented key=value file; blank lines and #-comments skipped."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def write_regression_dataset(out_dir, ds: RegressionDataset) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k in range(ds.t_steps):
        path = out_dir / f"step_t{k + 1}.csv"
        with open(path, "w") as fh:
            fh.write("t_index,t_value,x1,x2,f_true,y\n")
            for j in range(ds.y[k].shape[0]):
                x1, x2, tv = ds.inputs[k][j]
                fh.write(
                    f"{k + 1},{_fmt(tv)},{_fmt(x1)},{_fmt(x2)},"
                    f"{_fmt(ds.f_true[k][j])},{_fmt(ds.y[k][j])}\n"
                )
    truth = {
        "model": "regression",
        "t_steps": ds.t_steps,
        "l_x1": float(ds.kernel_params.lengthscales[0]),
        "l_x2": float(ds.kernel_params.lengthscales[1]),
        "l_t": float(ds.kernel_params.lengthscales[2]),
        "sigma_f": float(ds.kernel_params.signal_sd),
        "mu_f": float(ds.alpha[0]),
        "sigma_y": float(ds.alpha[1]),
    }
    write_sidecar(out_dir / "truth.txt", truth)


def read_regression_dataset(data_dir) -> dict:
    """Load per-step dataset CSVs; returns inputs/f_true/y lists plus truth."""
    data_dir = Path(data_dir)
    truth = read_keyvalue(data_dir / "truth.txt")
    t_steps = int(truth["t_steps"])
    inputs, f_true, y = [], [], []
    for k in range(1, t_steps + 1):
        arr = np.loadtxt(data_dir / f"step_t{k}.csv", delimiter=",", skiprows=1, ndmin=2)
        inputs.append(arr[:, [2, 3, 1]])
        f_true.append(arr[:, 4])
        y.append(arr[:, 5])
    return {"inputs": inputs, "f_true": f_true, "y": y, "truth": truth}


def write_option_dataset(out_dir, ds: OptionDataset) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, step in enumerate(ds.quotes):
        with open(out_dir / f"quotes_t{k + 1}.csv", "w") as fh:
            fh.write("t_index,spot,maturity_years,strike,price\n")
            for j in range(step.prices.shape[0]):
                tm, kk = step.coords[j]
                fh.write(
                    f"{k + 1},{_fmt(step.spot)},{_fmt(tm)},{_fmt(kk)},"
                    f"{_fmt(step.prices[j])}\n"
                )
        with open(out_dir / f"surface_t{k + 1}.csv", "w") as fh:
            fh.write("t_index,maturity_years,strike,sigma_true\n")
            for j in range(step.prices.shape[0]):
                tm, kk = step.coords[j]
                fh.write(f"{k + 1},{_fmt(tm)},{_fmt(kk)},{_fmt(ds.sigma_true[k][j])}\n")
    truth = {
        "model": "options",
        "t_steps": ds.t_steps,
        "l_T": float(ds.kernel_params.lengthscales[0]),
        "l_K": float(ds.kernel_params.lengthscales[1]),
        "l_t": float(ds.kernel_params.lengthscales[2]),
        "sigma_f": float(ds.kernel_params.signal_sd),
        "mu_f": float(ds.alpha[0]),
        "sigma_c": float(ds.alpha[1]),
        "strike_scale": float(ds.model.strike_scale),
    }
    write_sidecar(out_dir / "truth.txt", truth)


def read_option_dataset(data_dir) -> dict:
    data_dir = Path(data_dir)
    truth = read_keyvalue(data_dir / "truth.txt")
    t_steps = int(truth["t_steps"])
    quotes, sigma_true = [], []
    for k in range(1, t_steps + 1):
        arr = np.loadtxt(data_dir / f"quotes_t{k}.csv", delimiter=",", skiprows=1, ndmin=2)
        quotes.append(StepQuotes(float(arr[0, 1]), arr[:, [2, 3]], arr[:, 4]))
        surf = np.loadtxt(data_dir / f"surface_t{k}.csv", delimiter=",", skiprows=1, ndmin=2)
        sigma_true.append(surf[:, 3])
    return {"quotes": quotes, "sigma_true": sigma_true, "truth": truth}


def append_metrics(path, records: list[dict]) -> None:
    """metrics.jsonl: one self-describing JSON object per line."""
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def metric_record(t: int, metric: str, value, seed: int) -> dict:
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    return {"t": int(t), "metric": str(metric), "value": value, "seed": int(seed)}
