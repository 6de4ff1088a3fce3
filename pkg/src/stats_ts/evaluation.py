"""Sample-based CRPS, point errors and per-instance error histograms."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError


def crps_from_samples(samples, observation) -> float:
    """Energy-form estimate ``mean|X - x| - mean_{i,j}|X_i - X_j| / 2``."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ContractError("empty sample set")
    return float(crps_ensemble(x[:, None], np.asarray([observation], dtype=np.float64), axis=0)[0])


def crps_ensemble(samples, observations, axis: int = 0) -> np.ndarray:
    """Vectorized energy-form CRPS; ``samples`` carries the ensemble on ``axis``.

    The pairwise term uses the sorted-sample identity
    ``sum_{i,j} |X_i - X_j| = 2 sum_k (2k - S + 1) X_(k)`` (``k`` zero-based).
    """
    x = np.moveaxis(np.asarray(samples, dtype=np.float64), axis, 0)
    if x.shape[0] == 0:
        raise ContractError("empty sample set")
    obs = np.asarray(observations, dtype=np.float64)
    if obs.shape != x.shape[1:]:
        raise ContractError(f"observation shape {obs.shape} != sample shape {x.shape[1:]}")
    S = x.shape[0]
    spread = np.abs(x - obs).mean(axis=0)
    ordered = np.sort(x, axis=0)
    weights = (2 * np.arange(S) - S + 1).reshape((S,) + (1,) * obs.ndim)
    # weights sum to zero, so centering only removes cancellation error
    pairwise = 2.0 * np.sum(weights * (ordered - ordered.mean(axis=0)), axis=0)
    return np.maximum(spread - pairwise / (2.0 * S * S), 0.0)


def mae_mse(prediction, truth):
    prediction = np.asarray(prediction, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if prediction.shape != truth.shape:
        raise ContractError(f"shape mismatch {prediction.shape} vs {truth.shape}")
    err = prediction - truth
    return float(np.mean(np.abs(err))), float(np.mean(err**2))


@dataclass
class MetricReport:
    crps: float
    mae: float
    mse: float
    per_instance_mse: list = field(repr=False)
    num_samples: int
    num_instances: int
    window_starts: list = field(default=None, repr=False)

    def as_dict(self):
        return asdict(self)

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2)

    @classmethod
    def read(cls, path) -> "MetricReport":
        with open(path) as fh:
            return cls(**json.load(fh))


def evaluate_samples(samples, truth, point: str = "mean", window_starts=None) -> MetricReport:
    """Metrics for ``(B, S, H, d)`` samples against ``(B, H, d)`` truth, both in original scale."""
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.ndim != 4 or samples.shape[:1] + samples.shape[2:] != truth.shape:
        raise ContractError(f"samples {samples.shape} do not align with truth {truth.shape}")
    crps = crps_ensemble(samples, truth, axis=1)
    pred = samples.mean(axis=1) if point == "mean" else np.median(samples, axis=1)
    err = pred - truth
    per_instance = np.mean(err**2, axis=(1, 2))
    return MetricReport(
        crps=float(crps.mean()),
        mae=float(np.mean(np.abs(err))),
        mse=float(np.mean(err**2)),
        per_instance_mse=per_instance.tolist(),
        num_samples=samples.shape[1],
        num_instances=samples.shape[0],
        window_starts=None if window_starts is None else [int(s) for s in window_starts],
    )


def persistence_forecast(history, horizon: int) -> np.ndarray:
    """Repeat the last observed value; shape ``(B, 1, H, d)``."""
    history = np.asarray(history, dtype=np.float64)
    last = history[:, -1:, :]
    return np.repeat(last, horizon, axis=1)[:, None]


def mse_distribution(per_instance, bins: int = 64):
    """Fixed-bin histogram over the observed range; returns ``(edges, counts)``."""
    values = np.asarray(per_instance, dtype=np.float64)
    if values.size == 0:
        raise ContractError("no instances")
    lo, hi = values.min(), values.max()
    if hi == lo:
        hi = lo + 1.0 if lo == 0 else lo + abs(lo) * 1e-9 + 1e-12
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return edges, counts


def write_histogram(path, edges, counts, values=None):
    with open(path, "w") as fh:
        fh.write("bin_left,bin_right,count\n")
        for left, right, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{left:.17g},{right:.17g},{int(c)}\n")
    if values is not None:
        raw = str(path).rsplit(".", 1)[0] + "_values.csv"
        with open(raw, "w") as fh:
            fh.write("instance,mse\n")
            for i, v in enumerate(values):
                fh.write(f"{i},{v:.17g}\n")
