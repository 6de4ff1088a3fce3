"""End-to-end runs behind the command line: train, sample, evaluate, analyze, synth.

Each run writes a JSON manifest into its output directory listing the
configuration, seed, file-format versions and every file it produced.
"""

from __future__ import annotations

import json
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .config import CONFIG_FORMAT, RunConfig, dump_config, load_config
from .data import DatasetSpec, generate_synthetic, load_csv, write_csv
from .diffusion import ancestral_sample, read_forecast, write_forecast
from .errors import ContractError
from .evaluation import (
    MetricReport,
    evaluate_samples,
    mse_distribution,
    persistence_forecast,
    write_histogram,
)
from .rng import RandomSource
from .scheduler import (
    RealizedSchedule,
    flatness_trajectory,
    run_pgd,
    synthetic_quadratic,
    write_schedule,
)
from .training import CHECKPOINT_FORMAT, TrainResult, load_params, make_windows, save_params, train

FORMATS = {
    "config": CONFIG_FORMAT,
    "checkpoint": CHECKPOINT_FORMAT,
    "schedule": "stats-ts-schedule/1 (t beta alpha alpha_bar sigma_sq, %.17g)",
    "forecast": "stats-ts-forecast/1 (sample,step,channel,value; original scale)",
    "metrics": "stats-ts-metrics/1 (json)",
    "histogram": "stats-ts-histogram/1 (bin_left,bin_right,count)",
}


def load_series(cfg: RunConfig) -> np.ndarray:
    d = cfg.data
    if d.source == "synthetic":
        return generate_synthetic(d.synthetic, d.length, d.channels, cfg.train.seed, d.noise)
    if d.source == "csv":
        if not d.path:
            raise ContractError("[data] path is required when source = csv")
        delimiter = "\t" if d.delimiter == "tab" else d.delimiter
        return load_csv(DatasetSpec(d.path, delimiter, d.header, d.timestamp or None))
    raise ContractError(f"unknown data source {d.source!r}")


def split_windows(cfg: RunConfig, series=None):
    series = load_series(cfg) if series is None else series
    t = cfg.train
    return make_windows(series, t.history, t.horizon, t.stride, t.split)


def eval_windows(cfg: RunConfig, test):
    return test.subset(np.arange(0, len(test), cfg.eval.stride))


def _manifest(out: Path, command: str, cfg: RunConfig, files, extra=None):
    manifest = {
        "command": command,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "seed": cfg.train.seed,
        "config": cfg.as_dict(),
        "formats": FORMATS,
        "files": sorted(str(Path(f).relative_to(out)) for f in files),
    }
    if extra:
        manifest.update(extra)
    path = out / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=_jsonable))
    return manifest


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(type(obj))


def write_checkpoint(out: Path, result: TrainResult):
    ckpt = out / "checkpoint"
    ckpt.mkdir(parents=True, exist_ok=True)
    files = [*save_params(ckpt / "sts", result.sts_params), *save_params(ckpt / "fgd", result.fgd_params)]
    schedule_path = ckpt / "schedule.txt"
    write_schedule(schedule_path, result.schedule)
    return files + [schedule_path]


def run_train(cfg: RunConfig, out) -> TrainResult:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set, test_set = split_windows(cfg)
    result = train(cfg.train, train_set, val_set)
    files = write_checkpoint(out, result)
    cfg_path = out / "config.ini"
    cfg_path.write_text(dump_config(cfg))
    files.append(cfg_path)
    _manifest(
        out,
        "train",
        cfg,
        files,
        {
            "windows": {"train": len(train_set), "val": len(val_set), "test": len(test_set)},
            "losses": result.history,
            "schedule_snapshots": [s.tolist() for s in result.snapshots],
            "best_epoch": result.best_epoch,
            "final_beta": result.schedule.beta.value.tolist(),
        },
    )
    return result


def load_trained(cfg: RunConfig, checkpoint):
    ckpt = Path(checkpoint) / "checkpoint"
    if not (ckpt / "fgd.json").exists():
        raise ContractError(f"no checkpoint under {ckpt}")
    scheduler = cfg.train.build_scheduler()
    model = cfg.train.build_denoiser()
    sts_params = load_params(ckpt / "sts")
    fgd_params = load_params(ckpt / "fgd")
    expected = model.init_params(RandomSource(0))
    for name, arr in expected.items():
        if name not in fgd_params or fgd_params[name].shape != arr.shape:
            raise ContractError(f"checkpoint parameter {name!r} does not match the configured model")
    schedule = scheduler.realize(sts_params).detached()
    if not cfg.train.learn_schedule:
        schedule = RealizedSchedule.from_beta(scheduler.realize(scheduler.init_params(RandomSource(0))).beta.value, cfg.train.variance)
    return scheduler, sts_params, model, fgd_params, schedule


def run_sample(cfg: RunConfig, out, checkpoint=None):
    out = Path(out)
    checkpoint = out if checkpoint is None else Path(checkpoint)
    _, _, model, fgd_params, schedule = load_trained(cfg, checkpoint)
    _, _, test = split_windows(cfg)
    windows = eval_windows(cfg, test)
    rng = RandomSource(cfg.train.seed).child(11)
    dist = ancestral_sample(
        model.sampler(fgd_params, schedule), windows.history, schedule, cfg.eval.num_samples, rng, model.H
    )
    samples = dist.denormalized()
    fdir = out / "forecasts"
    fdir.mkdir(parents=True, exist_ok=True)
    files = []
    for start, s in zip(windows.starts, samples):
        path = fdir / f"window_{int(start):07d}.csv"
        write_forecast(path, s)
        files.append(path)
    index = fdir / "index.json"
    index.write_text(
        json.dumps(
            {
                "format": FORMATS["forecast"],
                "window_starts": [int(s) for s in windows.starts],
                "files": [p.name for p in files],
                "failed_chains": int(dist.failed.sum()),
            },
            indent=2,
        )
    )
    files.append(index)
    _manifest(out, "sample", cfg, files, {"checkpoint": str(checkpoint)})
    return samples, windows


def read_forecasts(fdir):
    fdir = Path(fdir)
    index = json.loads((fdir / "index.json").read_text())
    samples = np.stack([read_forecast(fdir / name) for name in index["files"]])
    return samples, np.asarray(index["window_starts"], dtype=int)


def run_evaluate(cfg: RunConfig, out, forecasts=None) -> MetricReport:
    out = Path(out)
    fdir = out / "forecasts" if forecasts is None else Path(forecasts)
    samples, starts = read_forecasts(fdir)
    _, _, test = split_windows(cfg)
    windows = eval_windows(cfg, test)
    if len(starts) != len(windows) or np.any(starts != windows.starts):
        raise ContractError("forecast window indices do not match the held-out truth windows")
    report = evaluate_samples(samples, windows.target, cfg.eval.point, windows.starts)
    baseline = evaluate_samples(persistence_forecast(windows.history, cfg.train.horizon), windows.target)
    metrics_path, base_path, hist_path = out / "metrics.json", out / "baseline_metrics.json", out / "mse_hist.csv"
    report.write(metrics_path)
    baseline.write(base_path)
    edges, counts = mse_distribution(report.per_instance_mse)
    write_histogram(hist_path, edges, counts, report.per_instance_mse)
    raw = out / "mse_hist_values.csv"
    _manifest(out, "evaluate", cfg, [metrics_path, base_path, hist_path, raw])
    return report


def run_analyze(cfg: RunConfig, out, checkpoint=None):
    """Export the realized schedule, its flatness trajectory and a PGD verification trace."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    scheduler = cfg.train.build_scheduler()
    ckpt = None if checkpoint is None else Path(checkpoint)
    if ckpt is not None and (ckpt / "checkpoint" / "sts.json").exists():
        params = load_params(ckpt / "checkpoint" / "sts")
    else:
        params = scheduler.init_params(RandomSource(cfg.train.seed).child(0))
    schedule = scheduler.realize(params).detached()
    sched_path = out / "schedule.txt"
    write_schedule(sched_path, schedule)

    train_set, _, _ = split_windows(cfg)
    hist, _, _ = train_set.normalized()
    rng = RandomSource(cfg.train.seed).child(21)
    traj = flatness_trajectory(hist, schedule, rng)
    flat_path = out / "flatness.csv"
    with open(flat_path, "w") as fh:
        fh.write("t,alpha_bar,flatness\n")
        abar = np.concatenate([[1.0], schedule.alpha_bar.value])
        for t, (ab, sf) in enumerate(zip(abar, traj)):
            fh.write(f"{t},{ab:.17g},{sf:.17g}\n")

    bounds = (1e-4, 0.999)
    R, grad, L, _ = synthetic_quadratic(scheduler.num_steps, rng.child(1), bounds)
    _, trace = run_pgd(R, grad, schedule.beta.value, 1.0 / L, bounds)
    pgd_path = out / "pgd_trace.csv"
    eta = 1.0 / L
    with open(pgd_path, "w") as fh:
        fh.write("k,R,R_next,grad_map_norm,descent_slack\n")
        for k, r, r_next, g in trace:
            slack = r - 0.5 * eta * g * g - r_next
            fh.write(f"{k},{r:.17g},{r_next:.17g},{g:.17g},{slack:.17g}\n")
    _manifest(out, "analyze-schedule", cfg, [sched_path, flat_path, pgd_path], {"smoothness_L": L})
    return schedule, traj, trace


def run_synth(cfg: RunConfig, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    d = cfg.data
    series = generate_synthetic(d.synthetic, d.length, d.channels, cfg.train.seed, d.noise)
    path = out / f"{d.synthetic}.csv"
    write_csv(path, series)
    _manifest(out, "synth", cfg, [path])
    return path


def resolve_config(config_path, out, checkpoint=None, seed=None) -> RunConfig:
    """``--config`` if given, else the config saved next to a checkpoint, else the defaults."""
    if config_path is not None:
        cfg = load_config(config_path)
    else:
        saved = Path(checkpoint or out) / "config.ini"
        cfg = load_config(saved if saved.exists() else None)
    if seed is not None:
        cfg.train.seed = int(seed)
    return cfg
