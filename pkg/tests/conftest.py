import numpy as np
import pytest

from stats_ts.rng import RandomSource


def central_difference(fn, params: dict, name: str, index, step: float = 1e-5) -> float:
    """Central difference of scalar ``fn(params)`` along one coordinate."""
    plus = {k: v.copy() for k, v in params.items()}
    minus = {k: v.copy() for k, v in params.items()}
    plus[name][index] += step
    minus[name][index] -= step
    return (fn(plus) - fn(minus)) / (2 * step)


def probe_coordinates(params: dict, count: int, rng):
    """``count`` random (name, index) pairs spread over all parameter groups."""
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    flat = rng.integers(0, sizes.sum() - 1, size=count)
    bounds = np.cumsum(sizes)
    out = []
    for f in flat:
        g = int(np.searchsorted(bounds, f, side="right"))
        local = int(f - (bounds[g - 1] if g else 0))
        out.append((names[g], np.unravel_index(local, params[names[g]].shape)))
    return out


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / (abs(analytic) + 1e-8)


@pytest.fixture
def rng():
    return RandomSource(1234)


def small_models(T: int = 6, L: int = 16, H: int = 8, bands: int = 2, seed: int = 0):
    """Tiny scheduler/denoiser pair with randomized output layers for gradient checks."""
    from stats_ts.denoiser import FrequencyGuidedDenoiser
    from stats_ts.scheduler import SpectralTrajectoryScheduler

    rng = RandomSource(seed)
    scheduler = SpectralTrajectoryScheduler(T, embed_dim=8, hidden=8)
    sts = scheduler.init_params(rng.child(0))
    sts["w2"] = 0.3 * rng.child(1).normal(sts["w2"].shape)
    sts["b2"] = 0.1 * rng.child(2).normal(1)
    model = FrequencyGuidedDenoiser(L, H, T, bands=bands, hidden=12, gate_hidden=6, embed_dim=8)
    fgd = model.init_params(rng.child(3))
    perturb = rng.child(4)
    for k in ("gate_a", "gate_b", "fusion_logit") + tuple(k for k in fgd if k.startswith("band")):
        fgd[k] = fgd[k] + 0.2 * perturb.normal(fgd[k].shape)
    return scheduler, sts, model, fgd


def small_batch(B: int = 3, L: int = 16, H: int = 8, d: int = 2, seed: int = 0):
    from stats_ts.data import generate_synthetic
    from stats_ts.denoiser import instance_normalize

    series = generate_synthetic("sin2", B * (L + H) + 5, d, seed)
    starts = 5 * np.arange(B)
    hist = np.stack([series[s : s + L] for s in starts])
    tgt = np.stack([series[s + L : s + L + H] for s in starts])
    return instance_normalize(hist, tgt)[:2]
