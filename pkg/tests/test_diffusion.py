import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idm import diffusion as dm
from idm.autodiff import Tensor


def test_single_step_schedule():
    s = dm.schedule_from_betas([0.5])
    assert s.alpha[1:].tolist() == [0.5]
    assert s.alpha_bar[1:].tolist() == [0.5]


def test_two_step_schedule():
    s = dm.schedule_from_betas([0.5, 0.5])
    assert s.alpha_bar[1:].tolist() == [0.5, 0.25]


def test_linear_schedule_matches_running_product():
    s = dm.make_linear_schedule(100, 1e-4, 0.02)
    prod = 1.0
    for i in range(100):
        prod *= 1.0 - (1e-4 + i * (0.02 - 1e-4) / 99)
    assert s.alpha_bar[100] == pytest.approx(prod, rel=1e-12)
    assert s.beta[1] == 1e-4 and s.beta[100] == pytest.approx(0.02)


@given(st.integers(1, 200), st.floats(1e-5, 0.5), st.floats(0.0, 0.49))
@settings(max_examples=60, deadline=None)
def test_schedule_invariants(steps, b0, extra):
    s = dm.make_linear_schedule(steps, b0, min(b0 + extra, 0.99))
    ab = s.alpha_bar
    assert np.all(np.diff(ab) < 0)
    assert np.array_equal(ab[1:], s.alpha[1:] * ab[:-1])
    assert np.all((s.beta[1:] > 0) & (s.beta[1:] < 1))
    assert s.beta_tilde[1] == 0.0 and ab[0] == 1.0


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_schedule_bounds(args):
    with pytest.raises(ValueError):
        dm.make_linear_schedule(*args)


def test_forward_marginal_cases():
    s = dm.schedule_from_betas([0.75])  # alpha_bar_1 = 0.25
    clean = np.array([1.0, 1.0])
    assert np.allclose(dm.forward_marginal(clean, 1, s, np.zeros(2)), 0.5 * clean)
    out = dm.forward_marginal(clean, 1, s, np.array([1.0, -1.0]))
    assert np.allclose(out, [0.5 + np.sqrt(0.75), 0.5 - np.sqrt(0.75)], atol=1e-15)
    tiny = dm.schedule_from_betas([1e-300])  # alpha_bar == 1 in floating point
    assert np.array_equal(dm.forward_marginal(clean, 1, tiny, np.array([3.0, -2.0])), clean + 0.0 * 3)


def test_forward_marginal_per_sample_steps_and_tensors():
    s = dm.make_linear_schedule(10, 1e-4, 0.05)
    clean = np.arange(12.0).reshape(3, 2, 2)
    noise = np.ones_like(clean)
    k = np.array([1, 5, 10])
    out = dm.forward_marginal(clean, k, s, noise)
    for i in range(3):
        assert np.allclose(out[i], dm.forward_marginal(clean[i], int(k[i]), s, noise[i]))
    t = dm.forward_marginal(Tensor(clean), k, s, noise)
    assert np.array_equal(t.data, out)


def test_forward_marginal_errors():
    s = dm.make_linear_schedule(5, 1e-4, 0.02)
    with pytest.raises(IndexError):
        dm.forward_marginal(np.zeros(2), 6, s, np.zeros(2))
    with pytest.raises(IndexError):
        dm.forward_marginal(np.zeros(2), 0, s, np.zeros(2))
    with pytest.raises(ValueError):
        dm.forward_marginal(np.zeros(2), 1, s, np.zeros(3))


@pytest.mark.parametrize("k", [1, 5, 100])
def test_marginal_consistency_monte_carlo(k):
    s = dm.make_linear_schedule(100, 1e-4, 0.02)
    rng = np.random.default_rng(k)
    n = 100_000
    y0 = np.array([1.5, -0.7])
    y = np.broadcast_to(y0, (n, 2)).copy()
    for j in range(1, k + 1):
        y = dm.forward_step(y, j, s, rng.standard_normal((n, 2)))
    mean_cf, var_cf = np.sqrt(s.alpha_bar[k]) * y0, 1.0 - s.alpha_bar[k]
    se_mean = np.sqrt(var_cf / n)
    se_var = var_cf * np.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(y.mean(0) - mean_cf) <= 4 * se_mean)
    assert np.all(np.abs(y.var(0, ddof=1) - var_cf) <= 4 * se_var)


def test_posterior_first_step_is_clean():
    s = dm.make_linear_schedule(10, 1e-4, 0.05)
    clean, noisy = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
    mean, var = dm.posterior_params(clean, noisy, 1, s)
    assert np.allclose(mean, clean, atol=1e-15)
    assert var == 0.0


def test_posterior_two_forms_agree_random():
    rng = np.random.default_rng(0)
    s = dm.make_linear_schedule(100, 1e-4, 0.1)
    for _ in range(200):
        k = int(rng.integers(1, 101))
        clean = rng.standard_normal((12, 2))
        eps = rng.standard_normal((12, 2))
        noisy = dm.forward_marginal(clean, k, s, eps)
        mean, _ = dm.posterior_params(clean, noisy, k, s)
        assert np.max(np.abs(mean - dm.posterior_mean_from_noise(noisy, eps, k, s))) <= 1e-10


def test_posterior_variance_formula():
    s = dm.schedule_from_betas([0.1, 0.2, 0.3])
    ab = [1.0, 0.9, 0.72, 0.504]
    for k, b in zip((1, 2, 3), (0.1, 0.2, 0.3)):
        assert dm.posterior_params(np.zeros(2), np.zeros(2), k, s)[1] == pytest.approx((1 - ab[k - 1]) / (1 - ab[k]) * b)


def test_reverse_mean_cases():
    s = dm.make_linear_schedule(10, 1e-4, 0.05)
    noisy = np.array([0.3, -1.2])
    assert np.allclose(dm.reverse_mean(noisy, np.zeros(2), 4, s), noisy / np.sqrt(s.alpha[4]))
    clean, eps = np.array([2.0, -1.0]), np.array([0.4, 0.9])
    y1 = dm.forward_marginal(clean, 1, s, eps)
    assert np.allclose(dm.reverse_mean(y1, eps, 1, s), clean, atol=1e-13)
    rng = np.random.default_rng(3)
    for _ in range(20):
        k = int(rng.integers(1, 11))
        y, e = rng.standard_normal(6), rng.standard_normal(6)
        b, a, ab = s.beta[k], 1 - s.beta[k], np.prod(1 - s.beta[1:k + 1])
        expected = [(yi - b / np.sqrt(1 - ab) * ei) / np.sqrt(a) for yi, ei in zip(y, e)]
        assert np.allclose(dm.reverse_mean(y, e, k, s), expected, atol=1e-13)
    with pytest.raises(ValueError):
        dm.reverse_mean(np.zeros(2), np.zeros(3), 1, s)


def test_stochastic_reverse_adds_noise_only_after_first_step():
    s = dm.make_linear_schedule(10, 1e-4, 0.05)
    y, e = np.ones(2), np.zeros(2)
    rng = np.random.default_rng(0)
    assert np.array_equal(dm.reverse_step(y, e, 1, s, rng, stochastic=True), dm.reverse_mean(y, e, 1, s))
    assert not np.array_equal(dm.reverse_step(y, e, 5, s, rng, stochastic=True), dm.reverse_mean(y, e, 5, s))
    assert np.array_equal(dm.reverse_step(y, e, 5, s), dm.reverse_mean(y, e, 5, s))


def test_noise_prediction_loss():
    assert dm.noise_prediction_loss(np.ones((3, 2)), np.ones((3, 2))).item() == 0.0
    assert dm.noise_prediction_loss(np.array([1.0, 0.0]), np.zeros(2)).item() == 1.0
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((5, 4, 2)), rng.standard_normal((5, 4, 2))
    total = 0.0
    for i in range(5):
        for j in range(4):
            for c in range(2):
                total += (a[i, j, c] - b[i, j, c]) ** 2
    assert dm.noise_prediction_loss(a, b).item() == pytest.approx(total / 5, rel=1e-13)
    with pytest.raises(ValueError):
        dm.noise_prediction_loss(np.zeros(2), np.zeros(3))


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2), st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2))
def test_loss_nonnegative_zero_at_truth(a, b):
    assert dm.noise_prediction_loss(np.array(a), np.array(b)).item() >= 0
    assert dm.noise_prediction_loss(np.array(a), np.array(a)).item() == 0
