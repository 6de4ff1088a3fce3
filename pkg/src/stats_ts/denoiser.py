"""Frequency guided denoiser.

Two branches share the normalized history ``c0``:

* the anchor branch gates the history spectrum by its own log-magnitude,
  rescales it with per-band complex gains, inverts it and maps ``L -> H``;
* the diffusion branch estimates how much the forward process distorted the
  history spectrum, turns that into a multiplicative gate on ``x_t`` and
  runs a FiLM-conditioned MLP over each channel's ``H``-vector.

A learnable sigmoid weight mixes the two predictions.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import NormStats, history_stats
from .errors import ContractError
from .scheduler import step_embedding
from .spectral import ComplexSpectrum, inverse_real_dft, num_bins, real_dft


def instance_normalize(history, target=None, eps: float = 1e-5):
    """Standardize history (and target) per channel with history statistics."""
    stats = history_stats(history, eps)
    hist = stats.normalize(history)
    if target is None:
        return hist, stats
    return hist, stats.normalize(target), stats


def denormalize(x, stats: NormStats):
    return stats.denormalize(x)


def band_partition(num_bins_: int, bands: int):
    """``B`` contiguous bands of near-equal size; the first ``F mod B`` get one extra bin."""
    if not 1 <= bands <= num_bins_:
        raise ContractError(f"need 1 <= B <= F, got B={bands}, F={num_bins_}")
    return np.array_split(np.arange(num_bins_), bands)


def spectral_distortion(c0, c_t, r_min=-10.0, r_max=10.0, eps=1e-6) -> Tensor:
    """Clipped relative change of per-bin magnitude, shape ``(..., F, d)``."""
    ref = real_dft(ad.constant(c0)).magnitude().value
    cur = real_dft(c_t).magnitude()
    return ad.clamp((cur - ref) / (ref + eps), r_min, r_max)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class FrequencyGuidedDenoiser:
    def __init__(
        self,
        history: int,
        horizon: int,
        num_steps: int,
        bands: int = 2,
        hidden: int = 128,
        gate_hidden: int = 64,
        embed_dim: int = 64,
        r_min: float = -10.0,
        r_max: float = 10.0,
        eps_r: float = 1e-6,
    ):
        if history < 2 or horizon < 1:
            raise ContractError("need L >= 2 and H >= 1")
        self.L, self.H, self.T = history, horizon, num_steps
        self.F = num_bins(history)
        self.bands = band_partition(self.F, bands)
        self.hidden, self.gate_hidden, self.embed_dim = hidden, gate_hidden, embed_dim
        self.r_min, self.r_max, self.eps_r = r_min, r_max, eps_r
        self._embed_cache = step_embedding(np.arange(num_steps + 1), num_steps, embed_dim)

    def init_params(self, rng) -> dict:
        L, H, F, n, g, e = self.L, self.H, self.F, self.hidden, self.gate_hidden, self.embed_dim
        p = {"gate_a": np.zeros(F), "gate_b": np.zeros(F)}
        for i, idx in enumerate(self.bands):
            p[f"band{i}_re"] = np.ones(len(idx))
            p[f"band{i}_im"] = np.zeros(len(idx))
        p["anchor_w"] = _uniform(rng, L, (L, H))
        p["dist_w1"] = _uniform(rng, F, (F, g))
        p["dist_b1"] = np.zeros(g)
        p["dist_w2"] = _uniform(rng, g, (g, H))
        p["dist_b2"] = np.zeros(H)
        p["raw_w"] = _uniform(rng, H, (H, n))
        p["raw_b"] = np.zeros(n)
        p["guided_w"] = _uniform(rng, H, (H, n))
        for k in (1, 2):
            p[f"film{k}_scale_w"] = _uniform(rng, e, (e, n)) * 0.1
            p[f"film{k}_scale_b"] = np.zeros(n)
            p[f"film{k}_shift_w"] = _uniform(rng, e, (e, n)) * 0.1
            p[f"film{k}_shift_b"] = np.zeros(n)
        p["refine_w"] = _uniform(rng, n, (n, n))
        p["refine_b"] = np.zeros(n)
        p["out_w"] = _uniform(rng, n, (n, H))
        p["out_b"] = np.zeros(H)
        p["fusion_logit"] = np.zeros(1)
        return p

    # -- anchor branch --------------------------------------------------
    def band_gains(self, p):
        re = ad.concat([p[f"band{i}_re"] for i in range(len(self.bands))])
        im = ad.concat([p[f"band{i}_im"] for i in range(len(self.bands))])
        return re, im

    def frequency_gate(self, p, spectrum: ComplexSpectrum) -> Tensor:
        """``sigmoid(a * log(1 + mean_d |C|) + b)``, shape ``(..., F)``."""
        energy = ad.log(1.0 + ad.mean(spectrum.magnitude().value, axis=-1))
        return ad.sigmoid(p["gate_a"] * energy + p["gate_b"])

    def filter_history(self, p, c0) -> Tensor:
        p = _wrap(p)
        spec = real_dft(c0)
        gate = self.frequency_gate(p, spec)
        h_re, h_im = self.band_gains(p)
        g_re = (h_re * gate).reshape(gate.shape + (1,))
        g_im = (h_im * gate).reshape(gate.shape + (1,))
        re = g_re * spec.real - g_im * spec.imag
        im = g_re * spec.imag + g_im * spec.real
        return inverse_real_dft(ComplexSpectrum(re, im, self.L), self.L)

    def anchor(self, p, c0) -> Tensor:
        p = _wrap(p)
        filtered = self.filter_history(p, c0)
        return ad.matmul(filtered.swapaxes(-1, -2), p["anchor_w"]).swapaxes(-1, -2)

    # -- diffusion branch -----------------------------------------------
    def distortion(self, c0, c_t) -> Tensor:
        return spectral_distortion(c0, c_t, self.r_min, self.r_max, self.eps_r)

    def distortion_gate(self, p, c0, c_t) -> Tensor:
        """Per-channel gate ``(..., d, H)`` in (0, 1)."""
        r = self.distortion(c0, c_t).swapaxes(-1, -2)
        h = ad.silu(ad.affine(r, p["dist_w1"], p["dist_b1"]))
        return ad.sigmoid(ad.affine(h, p["dist_w2"], p["dist_b2"]))

    def _film(self, p, k, h, emb):
        scale = ad.affine(emb, p[f"film{k}_scale_w"], p[f"film{k}_scale_b"])
        shift = ad.affine(emb, p[f"film{k}_shift_w"], p[f"film{k}_shift_b"])
        return h * (1.0 + scale) + shift

    def embed(self, t, batch_shape):
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ContractError(f"t must lie in [1, {self.T}]")
        emb = self._embed_cache[t]
        if t.ndim == 0:
            emb = np.broadcast_to(emb, batch_shape + emb.shape)
        # one row per instance, broadcast across channels
        return emb.reshape(emb.shape[:-1] + (1, emb.shape[-1]))

    def denoise(self, p, x_t, t, c0, c_t) -> Tensor:
        p = _wrap(p)
        x_t = ad.as_tensor(x_t)
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise ContractError(f"t must lie in [1, {self.T}]")
        gate = self.distortion_gate(p, c0, c_t)
        xs = x_t.swapaxes(-1, -2)
        h = ad.affine(xs, p["raw_w"], p["raw_b"]) + ad.matmul(xs * gate, p["guided_w"])
        emb = self.embed(t_arr, x_t.shape[:-2])
        h = ad.silu(self._film(p, 1, h, emb))
        h = ad.silu(self._film(p, 2, h, emb))
        h = ad.affine(h, p["refine_w"], p["refine_b"])
        return ad.affine(h, p["out_w"], p["out_b"]).swapaxes(-1, -2)

    # -- fusion ------------------------------------------------------------
    def mixing_weight(self, p) -> Tensor:
        return ad.sigmoid(_wrap(p)["fusion_logit"])

    def fuse(self, p, x_freq, x_diff) -> Tensor:
        w = self.mixing_weight(p)
        return w * x_freq + (1.0 - w) * x_diff

    def predict(self, p, x_t, t, c0, c_t) -> Tensor:
        p = _wrap(p)
        return self.fuse(p, self.anchor(p, c0), self.denoise(p, x_t, t, c0, c_t))

    def sampler(self, params, schedule):
        """Callable for :func:`ancestral_sample`; draws a fresh corrupted history per step."""
        frozen = {k: ad.constant(v) for k, v in params.items()}
        abar = schedule.alpha_bar.value

        def call(x_t, t, c0, rng):
            ab = abar[t - 1]
            c_t = np.sqrt(ab) * c0 + np.sqrt(1.0 - ab) * rng.normal(c0.shape)
            return self.predict(frozen, x_t, t, c0, c_t).value

        return call


def _wrap(p):
    return {k: ad.as_tensor(v) for k, v in p.items()}


def denoiser_terms(model, params, history, target, schedule, rng=None, t=None, noise=None, history_noise=None):
    """Fused prediction error ``mean((x0 - x0_hat)**2)`` over sampled steps."""
    x0 = np.asarray(target, dtype=np.float64)
    c0 = np.asarray(history, dtype=np.float64)
    B, T = x0.shape[0], schedule.num_steps
    if t is None:
        t = rng.integers(1, T, size=B)
    if noise is None:
        noise = rng.normal(x0.shape)
    if history_noise is None:
        history_noise = rng.normal(c0.shape)
    ab = schedule.alpha_bar.value[np.asarray(t) - 1].reshape(-1, 1, 1)
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
    c_t = np.sqrt(ab) * c0 + np.sqrt(1.0 - ab) * history_noise
    pred = model.predict(params, x_t, t, c0, c_t)
    return ad.mean(ad.square(pred - x0))


def denoiser_loss(model, params, history, target, schedule, rng=None, **kw):
    """Objective value and gradients for every denoiser parameter."""
    sched = schedule.detached()
    return ad.value_and_grad(
        lambda leaves: denoiser_terms(model, leaves, history, target, sched, rng, **kw), params
    )
