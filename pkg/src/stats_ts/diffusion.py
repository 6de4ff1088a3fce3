"""Forward corruption, x0-parameterized reverse steps and ancestral sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, PreconditionError, SamplingError
from .scheduler import RealizedSchedule

log = logging.getLogger(__name__)


def _values(schedule: RealizedSchedule):
    return schedule.beta.value, schedule.alpha.value, schedule.alpha_bar.value


def forward_sample(x0, t, schedule: RealizedSchedule, noise):
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) noise``.

    ``t`` is a scalar step or one step per leading-axis instance. Returns a
    :class:`Tensor` that stays differentiable w.r.t. ``x0`` and ``alpha_bar``.
    """
    x0, noise = ad.as_tensor(x0), ad.as_tensor(noise)
    if x0.shape != noise.shape:
        raise ContractError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    T = schedule.num_steps
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > T):
        raise ContractError(f"t must lie in [1, {T}]")
    ab = schedule.alpha_bar[t_arr - 1]
    if t_arr.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return ad.sqrt(ab) * x0 + ad.sqrt(1.0 - ab) * noise


def posterior_coefficients(t: int, schedule: RealizedSchedule):
    """Weights ``(c_x0, c_xt)`` of the Gaussian posterior mean at step ``t``."""
    beta, alpha, abar = _values(schedule)
    if t == 1:
        return 1.0, 0.0
    ab_t, ab_prev = abar[t - 1], abar[t - 2]
    c_x0 = np.sqrt(ab_prev) * beta[t - 1] / (1.0 - ab_t)
    c_xt = np.sqrt(alpha[t - 1]) * (1.0 - ab_prev) / (1.0 - ab_t)
    return c_x0, c_xt


def reverse_mean(x_t, x0_hat, t: int, schedule: RealizedSchedule):
    if not 1 <= t <= schedule.num_steps:
        raise ContractError(f"t must lie in [1, {schedule.num_steps}]")
    c_x0, c_xt = posterior_coefficients(t, schedule)
    if t == 1:
        return np.array(x0_hat, dtype=np.float64)
    return c_x0 * np.asarray(x0_hat) + c_xt * np.asarray(x_t)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-5

    def normalize(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x) * self.std + self.mean


@dataclass
class ForecastDistribution:
    """Samples ``(S, H, d)`` per instance, or ``(B, S, H, d)`` for a batch, in normalized space."""

    samples: np.ndarray
    stats: NormStats
    failed: np.ndarray = field(default=None)
    trajectory: list = field(default=None, repr=False)

    def denormalized(self) -> np.ndarray:
        mean, std = self.stats.mean, self.stats.std
        if self.samples.ndim == 4:
            mean, std = mean[:, None], std[:, None]
        return self.samples * std + mean

    def point_forecast(self, kind: str = "mean") -> np.ndarray:
        x = self.denormalized()
        return x.mean(axis=-3) if kind == "mean" else np.median(x, axis=-3)


def history_stats(history, eps: float = 1e-5) -> NormStats:
    history = np.asarray(history, dtype=np.float64)
    if history.shape[-2] < 2:
        raise ContractError("history needs at least two steps")
    mean = history.mean(axis=-2, keepdims=True)
    # a constant channel keeps its exact level so it normalizes to exact zeros
    first = history[..., :1, :]
    mean = np.where(np.all(history == first, axis=-2, keepdims=True), first, mean)
    std = np.maximum(history.std(axis=-2, keepdims=True), eps)
    return NormStats(mean, std, eps)


def ancestral_sample(
    denoiser,
    c0,
    schedule: RealizedSchedule,
    num_samples: int,
    rng,
    horizon: int,
    keep_trajectory: bool = False,
    max_fail_fraction: float = 0.01,
    eps: float = 1e-5,
    clip_x0: float | None = None,
) -> ForecastDistribution:
    """Run ``num_samples`` reverse chains per history window.

    ``denoiser(x_t, t, c0_norm, rng)`` returns the clean-target estimate for a
    stack of chains in normalized space. ``c0`` is a raw ``(L, d)`` history or a
    ``(B, L, d)`` batch. Each instance ``i`` draws from ``rng.child(i)``.
    ``clip_x0`` bounds the clean estimate to ``[-clip_x0, clip_x0]``; off by default.
    """
    if num_samples < 1:
        raise ContractError("need at least one sample")
    c0 = np.asarray(c0, dtype=np.float64)
    single = c0.ndim == 2
    batch = c0[None] if single else c0
    stats = history_stats(batch, eps)
    c0n = stats.normalize(batch)
    B, d = batch.shape[0], batch.shape[-1]
    T = schedule.num_steps
    sigma = np.sqrt(schedule.sigma_sq.value)

    out = np.empty((B, num_samples, horizon, d))
    traj = [] if keep_trajectory else None
    for i in range(B):
        chain_rng = rng.child(i)
        ctx = np.broadcast_to(c0n[i], (num_samples,) + c0n.shape[1:])
        x = chain_rng.normal((num_samples, horizon, d))
        steps = [x] if keep_trajectory else None
        for t in range(T, 0, -1):
            x0_hat = np.asarray(denoiser(x, t, ctx, chain_rng), dtype=np.float64)
            if clip_x0 is not None:
                x0_hat = np.clip(x0_hat, -clip_x0, clip_x0)
            mean = reverse_mean(x, x0_hat, t, schedule)
            if t > 1:
                x = mean + sigma[t - 1] * chain_rng.normal(x.shape)
            else:
                x = mean
            if keep_trajectory:
                steps.append(x)
        out[i] = x
        if keep_trajectory:
            traj.append(steps)

    failed = ~np.all(np.isfinite(out), axis=(-2, -1))
    frac = failed.mean()
    if frac > 0:
        log.warning("%d of %d chains produced non-finite values", failed.sum(), failed.size)
    if frac > max_fail_fraction:
        raise SamplingError(f"{failed.sum()} of {failed.size} chains failed")
    if single:
        stats = NormStats(stats.mean[0], stats.std[0], eps)
        return ForecastDistribution(out[0], stats, failed[0], traj[0] if traj else None)
    return ForecastDistribution(out, stats, failed, traj)


# -- Gaussian KL and the drift bound -----------------------------------------
@dataclass
class IsotropicGaussian:
    mean: np.ndarray
    variance: float

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64)).ravel()
        if not self.variance > 0:
            raise ContractError("variance must be positive")


def kl_isotropic(p: IsotropicGaussian, q: IsotropicGaussian, D: int | None = None) -> float:
    """``KL(p || q)`` for ``N(mu_p, v_p I)`` and ``N(mu_q, v_q I)`` in ``R^D``."""
    D = p.mean.size if D is None else D
    ratio = p.variance / q.variance
    shift = float(np.sum((p.mean - q.mean) ** 2))
    return 0.5 * (D * (ratio - 1.0 - np.log(ratio)) + shift / q.variance)


def drift_constant(t: int, D: int, x0_norm_sq: float, a: float, beta_max: float) -> float:
    lead = (t / (1.0 - beta_max)) ** 2
    return lead * (D * (1.0 - a) ** 2 / (4.0 * a**4) + x0_norm_sq / (8.0 * a**2))


def drift_bound(beta, beta_prime, t: int, x0, a: float, beta_max: float):
    """KL between the two forward marginals at step ``t`` and its schedule-drift bound."""
    beta = np.asarray(beta, dtype=np.float64)
    beta_prime = np.asarray(beta_prime, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if not 0 < a < 0.5:
        raise ContractError("a must lie in (0, 1/2)")
    if not 1 <= t <= beta.size or beta.shape != beta_prime.shape:
        raise ContractError("schedules must share length T and 1 <= t <= T")
    if np.any(beta <= 0) or np.any(beta_prime <= 0) or max(beta.max(), beta_prime.max()) > beta_max:
        raise PreconditionError("schedules must lie in (0, beta_max]")
    ab = np.prod(1.0 - beta[:t])
    ab_p = np.prod(1.0 - beta_prime[:t])
    for v in (ab, ab_p):
        if not a <= v <= 1 - a:
            raise PreconditionError(f"alpha_bar_t = {v:.6g} outside [{a}, {1 - a}]")
    q = IsotropicGaussian(np.sqrt(ab) * x0, 1.0 - ab)
    p = IsotropicGaussian(np.sqrt(ab_p) * x0, 1.0 - ab_p)
    kl = kl_isotropic(p, q, x0.size)
    delta = float(np.max(np.abs(beta_prime - beta)))
    return kl, drift_constant(t, x0.size, float(x0 @ x0), a, beta_max) * delta**2


def write_forecast(path, samples: np.ndarray):
    """Write ``(S, H, d)`` samples as ``sample,step,channel,value`` rows."""
    S, H, d = samples.shape
    s, h, c = np.meshgrid(np.arange(S), np.arange(H), np.arange(d), indexing="ij")
    with open(path, "w") as fh:
        fh.write("sample,step,channel,value\n")
        for row in zip(s.ravel(), h.ravel(), c.ravel(), samples.ravel()):
            fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]:.17g}\n")


def read_forecast(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    idx = data[:, :3].astype(int)
    shape = tuple(idx.max(axis=0) + 1)
    out = np.full(shape, np.nan)
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = data[:, 3]
    return out


__all__ = [
    "forward_sample",
    "reverse_mean",
    "posterior_coefficients",
    "ancestral_sample",
    "ForecastDistribution",
    "NormStats",
    "history_stats",
    "IsotropicGaussian",
    "kl_isotropic",
    "drift_bound",
    "drift_constant",
    "write_forecast",
    "read_forecast",
]
