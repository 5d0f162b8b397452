import numpy as np
import pytest

from hazediff.diffusion import (
    EpsOracle,
    NoiseSchedule,
    ddim_chain,
    ddim_sample,
    ddim_timesteps,
    ddpm_step,
    forward_diffuse,
    from_model_range,
    make_schedule,
    predict_x0,
    to_model_range,
    training_loss,
)
from hazediff.imaging import make_rng


@pytest.fixture(scope="module")
def sched():
    return make_schedule()


def _fixed_gamma(gammas):
    g = np.asarray(gammas, dtype=np.float64)
    alpha = np.concatenate([[g[0]], g[1:] / g[:-1]])
    return NoiseSchedule(alpha=alpha, gamma=g)


# ----------------------------------------------------------------- schedule


def test_schedule_examples():
    s = make_schedule(T=1, beta_start=0.01, beta_end=0.01)
    assert np.allclose(s.gamma, [0.99])
    c = make_schedule(T=50, beta_start=0.02, beta_end=0.02)
    assert np.allclose(c.gamma, 0.98 ** np.arange(1, 51), rtol=1e-12)


def test_default_schedule_terminal(sched):
    betas = np.linspace(1e-6, 1e-2, 2000)
    prod = 1.0
    for b in betas:
        prod *= 1 - b
    assert sched.T == 2000
    assert np.isclose(sched.gamma_at(2000), prod, rtol=1e-10)
    assert sched.gamma_at(2000) < 1e-3


def test_schedule_invariants(sched):
    g, a = sched.gamma, sched.alpha
    assert np.all(np.diff(g) < 0) and np.all((g > 0) & (g < 1))
    assert np.max(np.abs(g[1:] - a[1:] * g[:-1])) <= 1e-7
    assert np.max(np.abs(np.sqrt(g) ** 2 + np.sqrt(1 - g) ** 2 - 1)) <= 1e-6


def test_schedule_errors(sched):
    for kw in ({"T": 0}, {"beta_start": 0.0}, {"beta_start": 0.1, "beta_end": 0.05}, {"beta_end": 1.0}, {"kind": "cosine"}):
        with pytest.raises(ValueError):
            make_schedule(**kw)
    with pytest.raises(ValueError):
        sched.gamma_at(2001)
    with pytest.raises(ValueError):
        sched.alpha_at(0)
    assert sched.gamma_at(0) == 1.0


# ---------------------------------------------------------------- forward


def test_forward_limits():
    rng = make_rng(0)
    J0 = rng.uniform(-1, 1, size=(4, 4, 3))
    eps = rng.normal(size=(4, 4, 3))
    s = _fixed_gamma([1.0, 0.25, 0.0])
    assert np.array_equal(forward_diffuse(J0, 1, eps, s), J0)
    assert np.allclose(forward_diffuse(np.ones((2, 2, 1)), 2, np.zeros((2, 2, 1)), s), 0.5)
    assert np.array_equal(forward_diffuse(J0, 3, eps, s), eps)
    with pytest.raises(ValueError):
        forward_diffuse(J0, 1, eps[:2], s)


def test_variance_law(sched):
    rng = make_rng(1)
    for t in (10, 300, 1200, 2000):
        eps = rng.standard_normal((64, 64, 3))
        x = forward_diffuse(np.zeros((64, 64, 3)), t, eps, sched)
        assert abs(x.var() / (1 - sched.gamma_at(t)) - 1) <= 0.05


def test_inversion(sched):
    rng = make_rng(2)
    J0 = to_model_range(rng.uniform(size=(8, 8, 3))).astype(np.float64)
    for t in (1, 15, 500, 2000):
        eps = rng.standard_normal(J0.shape)
        x = forward_diffuse(J0, t, eps, sched)
        assert np.max(np.abs(predict_x0(x, eps, sched.gamma_at(t)) - J0)) <= 1e-5


def test_range_maps():
    x = np.array([0.0, 0.25, 1.0, 1.5, -0.2])
    assert np.allclose(to_model_range(x), [-1, -0.5, 1, 1, -1])
    assert np.allclose(from_model_range(to_model_range(x)), np.clip(x, 0, 1))


# ------------------------------------------------------------------- loss


def test_loss_oracle_and_offset(sched):
    rng = make_rng(3)
    I = rng.uniform(-1, 1, size=(8, 8, 3))
    J0 = rng.uniform(-1, 1, size=(8, 8, 3))
    loss, grads = training_loss(EpsOracle(J0), I, J0, make_rng(4), sched)
    assert loss <= 1e-6 and grads is None

    oracle = EpsOracle(J0)
    shifted = lambda c, x, g: oracle(c, x, g) + 0.3  # noqa: E731
    loss, _ = training_loss(shifted, I, J0, make_rng(4), sched)
    assert abs(loss - 0.3) <= 1e-6


def test_loss_batched_and_reproducible(sched):
    rng = make_rng(5)
    I = rng.uniform(-1, 1, size=(3, 8, 8, 3)).astype(np.float32)
    J0 = rng.uniform(-1, 1, size=(3, 8, 8, 3)).astype(np.float32)
    model = lambda c, x, g: 0.5 * x  # noqa: E731
    a = training_loss(model, I, J0, make_rng(6), sched)[0]
    b = training_loss(model, I, J0, make_rng(6), sched)[0]
    assert a == b
    with pytest.raises(ValueError):
        training_loss(model, I[:, :4], J0, make_rng(6), sched)


# ------------------------------------------------------------------- DDPM


def test_ddpm_degenerate_alpha():
    s = _fixed_gamma([1.0, 1.0, 0.5])
    x = make_rng(7).normal(size=(4, 4, 3))
    out = ddpm_step(x, make_rng(8).normal(size=x.shape), 2, s, make_rng(9))
    assert np.array_equal(out, x)


def test_ddpm_single_step_recovers():
    s = make_schedule(T=1, beta_start=0.3, beta_end=0.3)
    rng = make_rng(10)
    J0 = rng.uniform(-1, 1, size=(6, 6, 3))
    eps = rng.standard_normal(J0.shape)
    x1 = forward_diffuse(J0, 1, eps, s)
    assert np.max(np.abs(ddpm_step(x1, eps, 1, s) - J0)) <= 1e-5


def test_ddpm_formula_and_determinism(sched):
    rng = make_rng(11)
    x = rng.standard_normal((4, 4, 3))
    e = rng.standard_normal((4, 4, 3))
    t = 700
    a, g = sched.alpha_at(t), sched.gamma_at(t)
    noise = make_rng(12).standard_normal(x.shape)
    want = (x - (1 - a) / np.sqrt(1 - g) * e) / np.sqrt(a) + np.sqrt(1 - a) * noise
    got = ddpm_step(x, e, t, sched, make_rng(12))
    assert np.allclose(got, want, atol=1e-12)
    assert np.array_equal(got, ddpm_step(x, e, t, sched, make_rng(12)))
    with pytest.raises(ValueError):
        ddpm_step(x, e, t, sched, None)


# ------------------------------------------------------------------- DDIM


def test_timesteps(sched):
    ts = ddim_timesteps(2000, 20)
    assert len(ts) == 20 and ts[0] == 2000 and ts[-1] == 1 and np.all(np.diff(ts) < 0)
    assert np.array_equal(ddim_timesteps(50, 50), np.arange(50, 0, -1))
    with pytest.raises(ValueError):
        ddim_timesteps(10, 11)


@pytest.mark.parametrize("steps", [1, 2, 5, 20, 50])
def test_ddim_oracle_recovers(sched, steps):
    rng = make_rng(13)
    J0 = to_model_range(rng.uniform(size=(8, 8, 3))).astype(np.float64)
    x_T = rng.standard_normal(J0.shape)
    out = ddim_chain(EpsOracle(J0), J0, x_T, sched, steps)
    assert np.max(np.abs(out - J0)) <= 1e-4


def test_ddim_full_schedule_small_T():
    s = make_schedule(T=30, beta_start=1e-3, beta_end=0.2)
    J0 = to_model_range(make_rng(14).uniform(size=(4, 4, 1))).astype(np.float64)
    seen = []

    def oracle(c, x, g):
        seen.append(g)
        return EpsOracle(J0)(c, x, g)

    out = ddim_chain(oracle, J0, make_rng(15).standard_normal(J0.shape), s, 30)
    assert np.allclose(seen, s.gamma[::-1])
    assert np.max(np.abs(out - J0)) <= 1e-4


def test_ddim_initialization_independent(sched):
    J0 = to_model_range(make_rng(16).uniform(size=(8, 8, 3))).astype(np.float64)
    a = ddim_chain(EpsOracle(J0), J0, make_rng(1).standard_normal(J0.shape), sched, 20)
    b = ddim_chain(EpsOracle(J0), J0, make_rng(2).standard_normal(J0.shape), sched, 20)
    assert np.max(np.abs(a - b)) <= 1e-4


def test_ddim_sample_oracle_and_errors(sched):
    clean = make_rng(17).uniform(size=(8, 8, 3)).astype(np.float32)
    J0 = to_model_range(clean).astype(np.float64)
    out = ddim_sample(EpsOracle(J0), clean, sched, rng=make_rng(3))
    assert out.dtype == np.float32 and np.max(np.abs(out - clean)) <= 1e-4
    with pytest.raises(ValueError):
        ddim_sample(EpsOracle(J0), clean, sched, n_steps=2001)
    with pytest.raises(ValueError):
        ddim_sample(EpsOracle(J0), clean, sched, n_avg=0)
