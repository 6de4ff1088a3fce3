"""Windowing, the Adam optimizer and the two-stage STS/FGD training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import FrequencyGuidedDenoiser, denoiser_loss, denoiser_terms, instance_normalize
from .errors import ContractError, DivergenceError, NumericError
from .rng import RandomSource
from .scheduler import (
    RealizedSchedule,
    SpectralTrajectoryScheduler,
    StsWeights,
    sts_total_loss,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "stats-ts-params/1"


@dataclass
class TrainConfig:
    num_steps: int = 50
    history: int = 168
    horizon: int = 192
    batch_size: int = 32
    lr: float = 1e-3
    sts_lr: float = 1e-3
    epochs: int = 50
    sts_epochs: int = 3
    seed: int = 1
    learn_schedule: bool = True
    template: str = "linear"
    beta_start: float = 1e-5
    beta_end: float = 0.1
    clamp_eps: float = 1e-5
    variance: str = "posterior"
    weights: StsWeights = field(default_factory=StsWeights)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    split: tuple = (0.7, 0.1, 0.2)
    stride: int = 1
    patience: int = 10
    grad_clip: float = 10.0
    divergence: float = 1e6
    bands: int = 2
    hidden: int = 128
    gate_hidden: int = 64
    embed_dim: int = 64
    r_min: float = -10.0
    r_max: float = 10.0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = StsWeights(**self.weights)
        self.split = tuple(float(f) for f in self.split)
        for name in ("num_steps", "history", "horizon", "batch_size", "epochs", "stride"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.learn_schedule and not 1 <= self.sts_epochs <= self.epochs:
            raise ContractError("need 1 <= sts_epochs <= epochs")
        if self.lr <= 0 or self.sts_lr <= 0:
            raise ContractError("learning rates must be positive")

    def as_dict(self):
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    def build_scheduler(self) -> SpectralTrajectoryScheduler:
        return SpectralTrajectoryScheduler(
            self.num_steps,
            self.template,
            self.beta_start,
            self.beta_end,
            self.embed_dim,
            64,
            self.clamp_eps,
            self.variance,
        )

    def build_denoiser(self) -> FrequencyGuidedDenoiser:
        return FrequencyGuidedDenoiser(
            self.history,
            self.horizon,
            self.num_steps,
            self.bands,
            self.hidden,
            self.gate_hidden,
            self.embed_dim,
            self.r_min,
            self.r_max,
        )


# -- windows -------------------------------------------------------------------
@dataclass
class WindowSet:
    history: np.ndarray
    target: np.ndarray
    starts: np.ndarray

    def __len__(self):
        return len(self.starts)

    def normalized(self, eps: float = 1e-5):
        if len(self) == 0:
            return self.history, self.target, None
        return instance_normalize(self.history, self.target, eps)

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.history[idx], self.target[idx], self.starts[idx])


def sliding_windows(series, L: int, H: int, stride: int = 1, offset: int = 0, count=None) -> WindowSet:
    series = np.asarray(series, dtype=np.float64)
    n = series.shape[0]
    if n < L + H:
        raise ContractError(f"series of length {n} is shorter than L + H = {L + H}")
    total = (n - L - H) // stride + 1
    count = total if count is None else count
    starts = offset + stride * np.arange(count)
    idx_h = starts[:, None] + np.arange(L)
    idx_t = starts[:, None] + L + np.arange(H)
    return WindowSet(series[idx_h - offset], series[idx_t - offset], starts)


def make_windows(series, L: int, H: int, stride: int = 1, fractions=(0.7, 0.1, 0.2)):
    """Chronological train/val/test windows with no shared time index.

    Each split lives on its own contiguous stretch of the series, sized so the
    window counts follow ``fractions`` of the total that fits.
    """
    series = np.asarray(series, dtype=np.float64)
    n = series.shape[0]
    if n < L + H:
        raise ContractError(f"series of length {n} is shorter than L + H = {L + H}")
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or np.any(fractions < 0) or not np.isclose(fractions.sum(), 1.0):
        raise ContractError("fractions must be three nonnegative numbers summing to 1")
    active = int(np.count_nonzero(fractions))
    span = L + H
    budget = n - active * span
    if budget < 0:
        raise ContractError(f"series too short to hold {active} disjoint splits")
    total = budget // stride + active
    counts = [int(np.floor(f * total + 1e-9)) if f > 0 else 0 for f in fractions[:2]]
    counts.append(total - sum(counts) if fractions[2] > 0 else 0)
    if fractions[2] == 0:
        last = max(i for i in range(2) if fractions[i] > 0)
        counts[last] += total - sum(counts)
    out, cursor = [], 0
    for c in counts:
        if c <= 0:
            out.append(WindowSet(np.empty((0, L, series.shape[1])), np.empty((0, H, series.shape[1])), np.empty(0, int)))
            continue
        length = (c - 1) * stride + span
        segment = series[cursor : cursor + length]
        out.append(sliding_windows(segment, L, H, stride, offset=cursor, count=c))
        cursor += length
    return tuple(out)


# -- optimizer -------------------------------------------------------------------
class Adam:
    """Bias-corrected adaptive moment optimizer over a dict of arrays."""

    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter group {name!r}", op=name)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        new = {}
        for name, p in params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            new[name] = p - self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
        return new


def optimizer_step(params, grads, state: Adam, lr=None):
    if lr is not None:
        state.lr = lr
    return state.step(params, grads), state


def clip_gradients(grads: dict, max_norm: float) -> dict:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and total > max_norm:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}
    return grads


# -- training --------------------------------------------------------------------
@dataclass
class TrainResult:
    config: TrainConfig
    scheduler: SpectralTrajectoryScheduler
    sts_params: dict
    model: FrequencyGuidedDenoiser
    fgd_params: dict
    schedule: RealizedSchedule
    history: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    best_epoch: int | None = None


class Trainer:
    def __init__(self, config: TrainConfig, train: WindowSet, val: WindowSet | None = None):
        self.cfg = config
        self.rng = RandomSource(config.seed)
        self.scheduler = config.build_scheduler()
        self.model = config.build_denoiser()
        self.sts_params = self.scheduler.init_params(self.rng.child(0))
        self.fgd_params = self.model.init_params(self.rng.child(1))
        self.fgd_opt = Adam(self.fgd_params, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.sts_opt = Adam(self.sts_params, config.sts_lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.train_h, self.train_t, _ = train.normalized()
        self.val = None
        if val is not None and len(val):
            vh, vt, _ = val.normalized()
            self.val = (vh, vt)
        self.history: list = []
        self.snapshots: list = []

    def current_schedule(self) -> RealizedSchedule:
        return self.scheduler.realize(self.sts_params).detached()

    def _batches(self, rng):
        n = len(self.train_h)
        order = rng.permutation(n)
        bs = self.cfg.batch_size
        for i in range(0, n, bs):
            yield order[i : i + bs]

    def _check(self, loss, stage, index):
        if not np.isfinite(loss) or loss > self.cfg.divergence:
            raise DivergenceError(f"loss {loss:.4g} at stage {stage}, round/epoch {index}")

    def fgd_epoch(self, schedule, rng, stage, index) -> float:
        losses = []
        for b, idx in enumerate(self._batches(rng)):
            loss, grads = denoiser_loss(
                self.model, self.fgd_params, self.train_h[idx], self.train_t[idx], schedule, rng.child(b)
            )
            self._check(loss, stage, index)
            grads = clip_gradients(grads, self.cfg.grad_clip)
            self.fgd_params = self.fgd_opt.step(self.fgd_params, grads)
            losses.append(loss)
        return float(np.mean(losses))

    def sts_epoch(self, rng, stage, index) -> float:
        losses = []
        for b, idx in enumerate(self._batches(rng)):
            loss, grads = sts_total_loss(
                self.scheduler,
                self.sts_params,
                self.cfg.weights,
                self.train_h[idx],
                self.train_t[idx],
                self.model,
                self.fgd_params,
                rng.child(b),
            )
            self._check(loss, stage, index)
            grads = clip_gradients(grads, self.cfg.grad_clip)
            self.sts_params = self.sts_opt.step(self.sts_params, grads)
            losses.append(loss)
        return float(np.mean(losses))

    def validation_loss(self, schedule, params=None) -> float | None:
        """Objective on held-out windows with a fixed noise stream; no parameter updates."""
        if self.val is None:
            return None
        params = self.fgd_params if params is None else params
        vh, vt = self.val
        rng = RandomSource(self.cfg.seed).child(99)
        bs = 256
        total = 0.0
        for b, i in enumerate(range(0, len(vh), bs)):
            sl = slice(i, i + bs)
            val = denoiser_terms(self.model, params, vh[sl], vt[sl], schedule, rng.child(b)).item()
            total += val * len(vh[sl])
        return total / len(vh)

    def stage_one(self):
        rounds = self.cfg.sts_epochs if self.cfg.learn_schedule else 0
        for r in range(rounds):
            schedule = self.current_schedule()
            loss = self.fgd_epoch(schedule, self.rng.child(2, r, 0), 1, r)
            self.history.append(
                {"stage": 1, "round": r, "phase": "fgd", "loss": loss, "val": self.validation_loss(schedule)}
            )
            before = {k: v.copy() for k, v in self.fgd_params.items()}
            sts_loss = self.sts_epoch(self.rng.child(2, r, 1), 1, r)
            assert all(np.array_equal(before[k], self.fgd_params[k]) for k in before)
            self.history.append({"stage": 1, "round": r, "phase": "sts", "loss": sts_loss})
            self.snapshots.append(self.current_schedule().beta.value.copy())
            log.info("stage 1 round %d: fgd %.5f sts %.5f", r, loss, sts_loss)
        return rounds

    def stage_two(self, done: int):
        schedule = self.current_schedule()
        best, best_params, best_epoch, stale = np.inf, None, None, 0
        for e in range(done, self.cfg.epochs):
            loss = self.fgd_epoch(schedule, self.rng.child(3, e), 2, e)
            val = self.validation_loss(schedule)
            self.history.append({"stage": 2, "epoch": e, "phase": "fgd", "loss": loss, "val": val})
            log.info("stage 2 epoch %d: fgd %.5f val %s", e, loss, val)
            score = loss if val is None else val
            if score < best:
                best, best_epoch, stale = score, e, 0
                best_params = {k: v.copy() for k, v in self.fgd_params.items()}
            else:
                stale += 1
                if stale >= self.cfg.patience:
                    break
        if best_params is not None:
            self.fgd_params = best_params
        return schedule, best_epoch

    def run(self) -> TrainResult:
        done = self.stage_one()
        schedule, best_epoch = self.stage_two(done)
        return TrainResult(
            self.cfg,
            self.scheduler,
            self.sts_params,
            self.model,
            self.fgd_params,
            schedule,
            self.history,
            self.snapshots,
            best_epoch,
        )


def train(config: TrainConfig, train_set: WindowSet, val_set: WindowSet | None = None) -> TrainResult:
    return Trainer(config, train_set, val_set).run()


# -- checkpoints -------------------------------------------------------------------
def save_params(prefix, params: dict):
    """Write ``<prefix>.bin`` (little-endian float64) and a ``<prefix>.json`` manifest."""
    prefix = Path(prefix)
    entries, offset = [], 0
    with open(prefix.with_suffix(".bin"), "wb") as fh:
        for name, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(arr.tobytes())
            entries.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "offset": offset,
                    "byte_offset": offset * 8,
                    "count": int(arr.size),
                }
            )
            offset += arr.size
    manifest = {"format": CHECKPOINT_FORMAT, "dtype": "<f8", "total": offset, "params": entries}
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    return prefix.with_suffix(".bin"), prefix.with_suffix(".json")


def load_params(prefix) -> dict:
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"unsupported checkpoint format {manifest.get('format')!r}")
    flat = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8")
    if flat.size != manifest["total"]:
        raise ContractError("checkpoint payload size disagrees with its manifest")
    return {
        e["name"]: flat[e["offset"] : e["offset"] + e["count"]].reshape(e["shape"]).astype(np.float64)
        for e in manifest["params"]
    }
