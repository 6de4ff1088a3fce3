import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stats_ts.errors import ContractError
from stats_ts.rng import RandomSource
from stats_ts.scheduler import (
    RealizedSchedule,
    SpectralTrajectoryScheduler,
    StsWeights,
    barrier_loss,
    combine_terms,
    endpoint_losses,
    flatness_progression_loss,
    pgd_step,
    read_schedule,
    run_pgd,
    smoothness_loss,
    sts_terms,
    sts_total_loss,
    synthetic_quadratic,
    template_betas,
    write_schedule,
)

from conftest import central_difference, probe_coordinates, relative_error, small_batch, small_models


def random_params(scheduler, rng, scale=1.0):
    p = scheduler.init_params(rng)
    p["b1"] = rng.normal(p["b1"].shape)
    p["w2"] = scale * rng.normal(p["w2"].shape) / np.sqrt(scheduler.hidden)
    p["b2"] = scale * rng.normal(1)
    return p


def assert_valid(sched):
    abar = sched.alpha_bar.value
    assert np.all((sched.beta.value > 0) & (sched.beta.value < 1))
    assert np.all((abar > 0) & (abar < 1))
    assert np.all(np.diff(abar) < 0)
    assert np.all(sched.sigma_sq.value >= 0)


def test_random_parameters_give_valid_schedule():
    sch = SpectralTrajectoryScheduler(50)
    for i in range(20):
        assert_valid(sch.realize(random_params(sch, RandomSource(i), scale=3.0)))


def test_constant_output_gives_geometric_alpha_bar():
    sch = SpectralTrajectoryScheduler(30, template="constant", beta_end=0.1)
    sched = sch.realize(sch.init_params(RandomSource(0)))
    np.testing.assert_allclose(sched.alpha_bar.value, 0.9 ** np.arange(1, 31), rtol=1e-12)


def test_linear_template_alpha_bar_against_loop():
    sch = SpectralTrajectoryScheduler(50)
    sched = sch.realize(sch.init_params(RandomSource(0)))
    prod = 1.0
    for b in np.linspace(1e-5, 0.1, 50):
        prod *= 1.0 - b
    assert sched.alpha_bar.value[-1] == pytest.approx(prod, abs=1e-12)
    np.testing.assert_allclose(sched.beta.value, np.linspace(1e-5, 0.1, 50), rtol=1e-12)


@pytest.mark.parametrize("name", ["linear", "quadratic", "cosine", "constant"])
def test_templates_are_reproduced_at_initialization(name):
    sch = SpectralTrajectoryScheduler(20, template=name)
    beta = sch.betas(sch.init_params(RandomSource(1))).value
    np.testing.assert_allclose(beta, template_betas(name, 20), rtol=1e-10)


def test_realized_beta_respects_clamp():
    sch = SpectralTrajectoryScheduler(10, eps=1e-3)
    beta = sch.betas(random_params(sch, RandomSource(2), scale=50.0)).value
    assert beta.min() >= 1e-3 and beta.max() <= 1 - 1e-3


def test_posterior_variance_terminal_step():
    sched = RealizedSchedule.from_beta(np.linspace(0.01, 0.2, 8))
    assert sched.sigma_sq.value[0] == 0.0
    b, ab = sched.beta.value, sched.alpha_bar.value
    np.testing.assert_allclose(sched.sigma_sq.value[1:], (1 - ab[:-1]) / (1 - ab[1:]) * b[1:], rtol=1e-14)
    np.testing.assert_array_equal(RealizedSchedule.from_beta(b, "beta").sigma_sq.value, b)


def test_barrier_examples():
    assert barrier_loss(np.full(11, np.exp(-1))).item() == pytest.approx(1.0, abs=1e-14)
    assert barrier_loss(np.full(11, 1 - 1e-12)).item() == pytest.approx(0.0, abs=1e-11)
    beta = RandomSource(3).uniform(0.01, 0.9, 50)
    oracle = -sum(np.log(beta[t]) for t in range(1, 50)) / 49
    assert barrier_loss(beta).item() == pytest.approx(oracle, abs=1e-12)
    with pytest.raises(ContractError):
        barrier_loss(np.array([0.5]))


def test_smoothness_examples():
    assert smoothness_loss(np.full(7, 0.2)).item() == 0.0
    assert smoothness_loss(np.array([0.1, 0.3])).item() == pytest.approx(0.04, abs=1e-15)
    beta = RandomSource(4).uniform(0.01, 0.9, 50)
    oracle = sum((beta[t] - beta[t - 1]) ** 2 for t in range(1, 50))
    assert smoothness_loss(beta).item() == pytest.approx(oracle, abs=1e-12)
    with pytest.raises(ContractError):
        smoothness_loss(np.array([0.5]))


def test_endpoint_init_term():
    sched = RealizedSchedule.from_beta(np.array([0.1, 0.2, 0.3]))
    _, l_init = endpoint_losses(np.ones((1, 8, 1)), sched, RandomSource(0))
    assert l_init.item() == pytest.approx(0.01, abs=1e-15)


def test_endpoint_uniform_terminal_mass_has_zero_kl():
    # x0 = 0 and an impulse as noise give a flat terminal spectrum
    sched = RealizedSchedule.from_beta(np.full(5, 0.3))
    noise = np.zeros((2, 16, 3))
    noise[:, 0, :] = 1.0
    l_end, _ = endpoint_losses(np.zeros_like(noise), sched, noise=noise)
    assert l_end.item() == pytest.approx(0.0, abs=1e-12)


def _kl_oracle(x):
    power = np.mean(np.abs(np.fft.rfft(x, axis=-2)) ** 2, axis=-1)
    p = power / power.sum(axis=-1, keepdims=True)
    return np.mean(np.sum(np.where(p > 0, p * np.log(p.shape[-1] * p), 0.0), axis=-1))


def test_endpoint_terminal_noise_is_near_flat():
    sched = RealizedSchedule.from_beta(np.full(10, 0.99))
    x0 = small_batch(8, 16, 24, 2)[1]
    noise = RandomSource(5).normal(x0.shape)
    l_end, _ = endpoint_losses(x0, sched, noise=noise)
    ab = sched.alpha_bar.value[-1]
    assert l_end.item() == pytest.approx(_kl_oracle(np.sqrt(ab) * x0 + np.sqrt(1 - ab) * noise), abs=1e-12)
    # frozen from the oracle: white noise with H=24, d=2 sits near 0.24 on average
    assert l_end.item() <= 0.3


def test_progression_boundaries_vanish():
    x0 = small_batch(4)[1]
    sched = RealizedSchedule.from_beta(np.linspace(0.05, 0.4, 6))
    noise = RandomSource(6).normal(x0.shape)
    for t in (0, 6):
        loss = flatness_progression_loss(x0, sched, t=np.full(4, t), noise=noise)
        assert loss.item() == pytest.approx(0.0, abs=1e-24)


def test_progression_midpoint_oracle():
    x0 = small_batch(1)[1]
    T = 10
    sched = RealizedSchedule.from_beta(np.linspace(0.01, 0.3, T))
    noise = RandomSource(7).normal(x0.shape)
    loss = flatness_progression_loss(x0, sched, t=np.array([T // 2]), noise=noise).item()

    def sf(x):
        p = np.mean(np.abs(np.fft.rfft(x[0], axis=0)) ** 2, axis=1) + 1e-12
        return np.exp(np.mean(np.log(p))) / np.mean(p)

    ab = np.cumprod(1 - np.linspace(0.01, 0.3, T))
    x_half = np.sqrt(ab[4]) * x0 + np.sqrt(1 - ab[4]) * noise
    x_end = np.sqrt(ab[-1]) * x0 + np.sqrt(1 - ab[-1]) * noise
    target = 0.5 * sf(x0) + 0.5 * sf(x_end)
    assert loss == pytest.approx((sf(x_half) - target) ** 2, abs=1e-12)


def _fixed_draws(hist, tgt, T, seed):
    rng = RandomSource(seed)
    return {
        "t": rng.integers(1, T, size=len(tgt)),
        "noise": rng.normal(tgt.shape),
        "history_noise": rng.normal(hist.shape),
    }


def test_total_is_sum_of_weighted_terms():
    scheduler, sts, model, fgd = small_models(seed=9)
    hist, tgt = small_batch(3, seed=9)
    draws = _fixed_draws(hist, tgt, scheduler.num_steps, 9)
    w = StsWeights()
    total, _ = sts_total_loss(scheduler, sts, w, hist, tgt, model, fgd, None, **draws)
    terms = sts_terms(scheduler, sts, hist, tgt, model, fgd, **draws)
    manual = sum(getattr(w, k) * terms[k].item() for k in terms)
    assert set(terms) == {"bar", "end", "init", "prog", "smooth", "obj"}
    assert total == pytest.approx(manual, abs=1e-10)


def test_only_smoothness_on_constant_schedule_is_zero():
    scheduler = SpectralTrajectoryScheduler(6, template="constant", embed_dim=8, hidden=8)
    _, _, model, fgd = small_models()
    hist, tgt = small_batch(3)
    w = StsWeights(bar=0, end=0, init=0, prog=0, smooth=5.0, obj=0)
    total, grads = sts_total_loss(
        scheduler, scheduler.init_params(RandomSource(0)), w, hist, tgt, model, fgd, RandomSource(1)
    )
    assert total == 0.0


def test_negative_weight_rejected():
    with pytest.raises(ContractError):
        StsWeights(prog=-0.1)


def test_disabling_a_term_never_increases_total():
    scheduler, sts, model, fgd = small_models(seed=10)
    hist, tgt = small_batch(3, seed=10)
    draws = _fixed_draws(hist, tgt, scheduler.num_steps, 10)
    terms = sts_terms(scheduler, sts, hist, tgt, model, fgd, **draws)
    full = combine_terms(terms, StsWeights()).item()
    for name in terms:
        assert terms[name].item() >= 0
        reduced = combine_terms(terms, StsWeights(**{name: 0.0})).item()
        assert reduced <= full


def test_denoiser_is_frozen_inside_sts_loss():
    scheduler, sts, model, fgd = small_models(seed=11)
    hist, tgt = small_batch(3, seed=11)
    _, grads = sts_total_loss(scheduler, sts, StsWeights(), hist, tgt, model, fgd, RandomSource(0))
    assert set(grads) == set(sts)


def test_sts_gradients_match_finite_differences():
    scheduler, sts, model, fgd = small_models(seed=12)
    hist, tgt = small_batch(3, seed=12)
    draws = _fixed_draws(hist, tgt, scheduler.num_steps, 12)
    w = StsWeights()
    _, grads = sts_total_loss(scheduler, sts, w, hist, tgt, model, fgd, None, **draws)
    value = lambda p: sts_total_loss(scheduler, p, w, hist, tgt, model, fgd, None, **draws)[0]
    for name, idx in probe_coordinates(sts, 64, RandomSource(13)):
        fd = central_difference(value, sts, name, idx)
        assert relative_error(grads[name][idx], fd) <= 1e-4, (name, idx)


def test_pgd_step_examples():
    beta = np.array([0.2, 0.5])
    nxt, g = pgd_step(beta, np.zeros(2), 0.1, (1e-4, 0.999))
    np.testing.assert_array_equal(nxt, beta)
    np.testing.assert_array_equal(g, 0.0)
    nxt, _ = pgd_step(np.array([0.5]), np.array([-100.0]), 0.01, (1e-4, 0.999))
    assert nxt[0] == 0.999
    c = np.array([0.3, 0.7, 0.01])
    b0 = np.array([0.5, 0.5, 0.5])
    nxt, _ = pgd_step(b0, b0 - c, 1.0, (1e-4, 0.999))
    np.testing.assert_allclose(nxt, c, rtol=0, atol=1e-16)
    with pytest.raises(ContractError):
        pgd_step(b0, b0, 0.1, (0.5, 0.5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_pgd_descent_inequality(seed, T):
    rng = RandomSource(seed)
    bounds = (1e-4, 0.999)
    R, grad, L, _ = synthetic_quadratic(T, rng, bounds, cond=20.0)
    eta = 1.0 / L
    _, trace = run_pgd(R, grad, rng.uniform(*bounds, T), eta, bounds, max_iter=2000)
    for _, r, r_next, g in trace:
        assert r_next <= r - 0.5 * eta * g * g + 1e-12


def test_schedule_export_roundtrip(tmp_path):
    sched = RealizedSchedule.from_beta(RandomSource(14).uniform(0.001, 0.3, 12))
    path = tmp_path / "schedule.txt"
    write_schedule(path, sched)
    lines = path.read_text().splitlines()
    assert len(lines) == 12 and len(lines[0].split(" ")) == 5
    back = read_schedule(path)
    np.testing.assert_array_equal(back["t"], np.arange(1, 13))
    for key, arr in sched.arrays().items():
        np.testing.assert_array_equal(back[key], arr)
