"""Learnable variance schedule with spectral regularizers.

``beta(t) = clamp(sigmoid(f(s_t) + template_logit(t)), eps, 1 - eps)`` where
``s_t`` is a sinusoidal embedding of ``t / T`` and ``f`` a one-hidden-layer
MLP whose output layer starts at zero, so the realized schedule equals the
chosen template until training moves it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import logit

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .spectral import kl_to_uniform, spectral_flatness, spectral_mass

TEMPLATES = ("linear", "cosine", "quadratic", "constant")


def step_embedding(t, num_steps: int, dim: int = 64) -> np.ndarray:
    """Sinusoidal features of ``t / num_steps`` with geometric frequencies in [1, 1000]."""
    if dim % 2:
        raise ContractError("embedding dimension must be even")
    tau = np.asarray(t, dtype=np.float64)[..., None] / num_steps
    freqs = np.geomspace(1.0, 1000.0, dim // 2)
    angle = tau * freqs
    return np.concatenate([np.sin(angle), np.cos(angle)], axis=-1)


def template_betas(name: str, num_steps: int, beta_start=1e-5, beta_end=0.1, eps=1e-5):
    if name == "linear":
        betas = np.linspace(beta_start, beta_end, num_steps)
    elif name == "quadratic":
        betas = np.linspace(beta_start**0.5, beta_end**0.5, num_steps) ** 2
    elif name == "cosine":
        s = 0.008
        x = np.linspace(0, num_steps, num_steps + 1)
        abar = np.cos(((x / num_steps) + s) / (1 + s) * np.pi * 0.5) ** 2
        abar = abar / abar[0]
        betas = 1 - abar[1:] / abar[:-1]
    elif name == "constant":
        betas = np.full(num_steps, beta_end)
    else:
        raise ContractError(f"unknown schedule template {name!r}; choose from {TEMPLATES}")
    return np.clip(betas, eps, min(1 - eps, 0.999))


@dataclass
class RealizedSchedule:
    """Per-step ``beta, alpha, alpha_bar, sigma_sq``; index ``i`` holds step ``t = i + 1``."""

    beta: Tensor
    alpha: Tensor
    alpha_bar: Tensor
    sigma_sq: Tensor

    @classmethod
    def from_beta(cls, beta, variance: str = "posterior") -> "RealizedSchedule":
        beta = ad.as_tensor(beta)
        if beta.ndim != 1 or beta.size < 1:
            raise ContractError("beta must be a nonempty vector")
        if np.any(beta.value <= 0) or np.any(beta.value >= 1):
            raise ContractError("beta entries must lie in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = ad.cumprod(alpha)
        if variance == "posterior":
            prev = np.concatenate([[1.0], alpha_bar.value[:-1]])
            sigma_sq = (1.0 - prev) / (1.0 - alpha_bar.value) * beta.value
        elif variance == "beta":
            sigma_sq = beta.value.copy()
        else:
            raise ContractError(f"unknown reverse variance {variance!r}")
        return cls(beta, alpha, alpha_bar, ad.Tensor(sigma_sq))

    @property
    def num_steps(self) -> int:
        return self.beta.size

    def detached(self) -> "RealizedSchedule":
        return RealizedSchedule(*(ad.constant(getattr(self, f.name)) for f in fields(self)))

    def arrays(self):
        return {f.name: getattr(self, f.name).value for f in fields(self)}


def write_schedule(path, schedule: RealizedSchedule):
    arr = schedule.arrays()
    with open(path, "w") as fh:
        for i in range(schedule.num_steps):
            row = [arr[k][i] for k in ("beta", "alpha", "alpha_bar", "sigma_sq")]
            fh.write(" ".join([str(i + 1)] + [f"{v:.17g}" for v in row]) + "\n")


def read_schedule(path) -> dict:
    data = np.loadtxt(path, ndmin=2)
    return {
        "t": data[:, 0].astype(int),
        "beta": data[:, 1],
        "alpha": data[:, 2],
        "alpha_bar": data[:, 3],
        "sigma_sq": data[:, 4],
    }


class SpectralTrajectoryScheduler:
    """Parametric ``beta(t)`` over ``T`` steps."""

    def __init__(
        self,
        num_steps: int,
        template: str = "linear",
        beta_start: float = 1e-5,
        beta_end: float = 0.1,
        embed_dim: int = 64,
        hidden: int = 64,
        eps: float = 1e-5,
        variance: str = "posterior",
    ):
        if num_steps < 1:
            raise ContractError("T must be >= 1")
        if not 0 < eps < 0.5:
            raise ContractError("clamp constant must lie in (0, 0.5)")
        self.num_steps = num_steps
        self.template = template
        self.beta_start, self.beta_end = beta_start, beta_end
        self.embed_dim, self.hidden, self.eps = embed_dim, hidden, eps
        self.variance = variance
        self.embedding = step_embedding(np.arange(1, num_steps + 1), num_steps, embed_dim)
        self.base_logit = logit(template_betas(template, num_steps, beta_start, beta_end, eps))

    def init_params(self, rng) -> dict:
        bound = 1.0 / np.sqrt(self.embed_dim)
        return {
            "w1": rng.uniform(-bound, bound, (self.embed_dim, self.hidden)),
            "b1": np.zeros(self.hidden),
            "w2": np.zeros((self.hidden, 1)),
            "b2": np.zeros(1),
        }

    def betas(self, params) -> Tensor:
        p = {k: ad.as_tensor(v) for k, v in params.items()}
        h = ad.silu(ad.affine(self.embedding, p["w1"], p["b1"]))
        raw = ad.affine(h, p["w2"], p["b2"]).reshape(self.num_steps) + self.base_logit
        return ad.clamp(ad.sigmoid(raw), self.eps, 1.0 - self.eps)

    def realize(self, params) -> RealizedSchedule:
        return RealizedSchedule.from_beta(self.betas(params), self.variance)


def realize_schedule(scheduler: SpectralTrajectoryScheduler, params) -> RealizedSchedule:
    return scheduler.realize(params)


# -- regularizers -------------------------------------------------------------
def barrier_loss(beta) -> Tensor:
    beta = ad.as_tensor(beta)
    if beta.size < 2:
        raise ContractError("barrier loss needs T >= 2")
    return -ad.mean(ad.log(beta[1:]))


def smoothness_loss(beta) -> Tensor:
    beta = ad.as_tensor(beta)
    if beta.size < 2:
        raise ContractError("smoothness loss needs T >= 2")
    return ad.sum(ad.square(beta[1:] - beta[:-1]))


def init_loss(beta) -> Tensor:
    return ad.square(ad.as_tensor(beta)[0])


def _forward(x0, alpha_bar_t, noise):
    # alpha_bar_t: (B,) tensor gathered per instance
    ab = alpha_bar_t.reshape(-1, 1, 1)
    return ad.sqrt(ab) * x0 + ad.sqrt(1.0 - ab) * noise


def endpoint_losses(x0_batch, schedule: RealizedSchedule, rng=None, noise=None):
    """Terminal KL-to-uniform averaged over the batch, and ``beta(1)**2``."""
    x0 = np.asarray(x0_batch, dtype=np.float64)
    if noise is None:
        noise = rng.normal(x0.shape)
    T = schedule.num_steps
    x_T = _forward(x0, schedule.alpha_bar[np.full(x0.shape[0], T - 1)], noise)
    l_end = ad.mean(kl_to_uniform(spectral_mass(x_T).mass))
    return l_end, init_loss(schedule.beta)


def sample_steps(rng, batch: int, num_steps: int) -> np.ndarray:
    return rng.integers(1, num_steps, size=batch)


def flatness_progression_loss(x0_batch, schedule: RealizedSchedule, rng=None, t=None, noise=None):
    """Mean of ``(SF(x_t) - [(1 - t/T) SF(x_0) + (t/T) SF(x_T)])**2`` with shared noise.

    ``t`` may contain 0, in which case ``x_t`` is ``x_0``.
    """
    x0 = np.asarray(x0_batch, dtype=np.float64)
    B, T = x0.shape[0], schedule.num_steps
    if t is None:
        t = sample_steps(rng, B, T)
    if noise is None:
        noise = rng.normal(x0.shape)
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > T):
        raise ContractError("t out of range")
    abar_ext = ad.concat([np.ones(1), schedule.alpha_bar])
    x_t = _forward(x0, abar_ext[t], noise)
    x_T = _forward(x0, schedule.alpha_bar[np.full(B, T - 1)], noise)
    gamma = t / T
    target = (1.0 - gamma) * spectral_flatness(x0).value + gamma * spectral_flatness(x_T)
    return ad.mean(ad.square(spectral_flatness(x_t) - target))


# -- combined objective -------------------------------------------------------
@dataclass
class StsWeights:
    bar: float = 5e-3
    end: float = 0.5
    init: float = 0.5
    prog: float = 0.5
    smooth: float = 5.0
    obj: float = 0.01

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ContractError(f"weight lambda_{name} must be nonnegative, got {value}")

    def as_dict(self):
        return asdict(self)


def sts_terms(
    scheduler: SpectralTrajectoryScheduler,
    params,
    history,
    target,
    denoiser,
    denoiser_params,
    rng=None,
    t=None,
    noise=None,
    history_noise=None,
):
    """All six STS terms as tensors. The denoiser parameters enter as constants."""
    x0 = np.asarray(target, dtype=np.float64)
    c0 = np.asarray(history, dtype=np.float64)
    B, T = x0.shape[0], scheduler.num_steps
    if t is None:
        t = sample_steps(rng, B, T)
    if noise is None:
        noise = rng.normal(x0.shape)
    if history_noise is None:
        history_noise = rng.normal(c0.shape)
    sched = scheduler.realize(params)
    beta = sched.beta
    l_end, l_init = endpoint_losses(x0, sched, noise=noise)
    terms = {
        "bar": barrier_loss(beta) if T >= 2 else ad.Tensor(0.0),
        "end": l_end,
        "init": l_init,
        "prog": flatness_progression_loss(x0, sched, t=t, noise=noise),
        "smooth": smoothness_loss(beta) if T >= 2 else ad.Tensor(0.0),
    }
    frozen = {k: ad.constant(v) for k, v in denoiser_params.items()}
    ab = sched.alpha_bar[np.asarray(t) - 1]
    x_t = _forward(x0, ab, noise)
    c_t = _forward(c0, ab, history_noise)
    pred = denoiser.predict(frozen, x_t, t, c0, c_t)
    terms["obj"] = ad.mean(ad.square(x0 - pred))
    return terms


def combine_terms(terms: dict, weights: StsWeights) -> Tensor:
    w = weights.as_dict()
    total = ad.Tensor(0.0)
    for name, value in terms.items():
        if w[name]:
            total = total + w[name] * value
    return total


def sts_total_loss(scheduler, params, weights, history, target, denoiser, denoiser_params, rng, **kw):
    """Weighted STS objective and its gradient w.r.t. the scheduler parameters only."""

    def objective(leaves):
        terms = sts_terms(scheduler, leaves, history, target, denoiser, denoiser_params, rng, **kw)
        return combine_terms(terms, weights)

    return ad.value_and_grad(objective, params)


# -- projected gradient mode --------------------------------------------------
def pgd_step(beta_vec, objective_grad, eta: float, bounds):
    """One projected step onto the box; returns ``(beta_next, G_eta)``."""
    lo, hi = bounds
    if lo >= hi:
        raise ContractError(f"empty box [{lo}, {hi}]")
    if eta <= 0:
        raise ContractError("step size must be positive")
    beta_vec = np.asarray(beta_vec, dtype=np.float64)
    nxt = np.clip(beta_vec - eta * np.asarray(objective_grad), lo, hi)
    return nxt, (beta_vec - nxt) / eta


def run_pgd(objective, gradient, beta0, eta, bounds, max_iter=10_000, tol=1e-6):
    """Iterate :func:`pgd_step` and record ``(R_k, R_{k+1}, ||G_eta||)`` per step."""
    beta = np.clip(np.asarray(beta0, dtype=np.float64), *bounds)
    trace = []
    for k in range(max_iter):
        r_k = objective(beta)
        nxt, g_map = pgd_step(beta, gradient(beta), eta, bounds)
        gnorm = float(np.linalg.norm(g_map))
        trace.append((k, r_k, objective(nxt), gnorm))
        beta = nxt
        if gnorm < tol:
            break
    return beta, trace


def synthetic_quadratic(num_steps: int, rng, bounds=(1e-4, 0.999), cond: float = 50.0):
    """``R(b) = 0.5 (b - c)^T A (b - c)`` with known smoothness ``L = max eig(A)``.

    The center ``c`` straddles the box so some coordinates end on the boundary.
    Returns ``(R, grad_R, L, c)``.
    """
    q, _ = np.linalg.qr(rng.normal((num_steps, num_steps)))
    eig = np.geomspace(1.0, cond, num_steps)
    A = (q * eig) @ q.T
    lo, hi = bounds
    c = rng.uniform(lo - 0.2 * (hi - lo), hi + 0.2 * (hi - lo), num_steps)

    def R(b):
        r = b - c
        return 0.5 * float(r @ A @ r)

    def grad(b):
        return A @ (b - c)

    return R, grad, float(eig.max()), c


def flatness_trajectory(windows, schedule: RealizedSchedule, rng=None, noise=None) -> np.ndarray:
    """Batch-mean spectral flatness of ``x_t`` for ``t = 0..T`` with one noise draw per window."""
    x0 = np.asarray(windows, dtype=np.float64)
    if noise is None:
        noise = rng.normal(x0.shape)
    abar = np.concatenate([[1.0], schedule.alpha_bar.value])
    out = np.empty(abar.size)
    for t, ab in enumerate(abar):
        out[t] = spectral_flatness(np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise).value.mean()
    return out
