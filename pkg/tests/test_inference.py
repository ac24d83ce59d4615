import numpy as np
import pytest

from idm.autodiff import Tensor
from idm.inference import predict, predict_baseline, predict_dataset, sample_goal, sample_trajectory
from idm.networks import ModelBundle, NetworkConfig
from idm.data import ScenarioSpec, generate

from test_networks import tiny_config


def straight_history(t_p=8):
    return np.cumsum(np.tile([[0.2, 0.0]], (t_p, 1)), axis=0)


def test_zero_endnet_is_pure_rescaling():
    model = ModelBundle(tiny_config())
    model.endnet = lambda c, x, k: Tensor(np.zeros_like(c))
    goal = sample_goal(np.zeros(5), model, np.random.default_rng(3))
    c_K = np.random.default_rng(3).standard_normal(2)
    expected = c_K / np.prod(np.sqrt(model.goal_sched.alpha[1:]))
    np.testing.assert_allclose(goal, expected, rtol=1e-12)


def test_different_streams_give_different_goals():
    model = ModelBundle(tiny_config())
    x = np.zeros(5)
    a = sample_goal(x, model, np.random.default_rng(0))
    b = sample_goal(x, model, np.random.default_rng(1))
    assert not np.allclose(a, b)


def test_empty_trajectory_chain_returns_prior_mean():
    model = ModelBundle(tiny_config(traj_steps=0))
    mu = np.arange(6.0).reshape(3, 2)
    model.priornet = lambda x, goal: Tensor(np.broadcast_to(mu, (x.shape[0], 3, 2)).copy())
    out = sample_trajectory(np.zeros(5), np.zeros(2), model, np.random.default_rng(0))
    np.testing.assert_array_equal(out, mu)


def test_true_noise_oracle_recovers_clean_path_at_single_step():
    model = ModelBundle(tiny_config(traj_steps=1))
    ab = model.traj_sched.alpha_bar[1]
    y0 = np.random.default_rng(9).normal(size=(3, 2))
    mu = np.sqrt(ab) * y0
    eps = np.random.default_rng(4).standard_normal((3, 2))   # replays the sampler's draw
    model.priornet = lambda x, goal: Tensor(mu[None].copy())
    model.pathnet = lambda y, x, s: Tensor(eps[None].copy())
    out = sample_trajectory(np.zeros(5), np.zeros(2), model, np.random.default_rng(4))
    np.testing.assert_allclose(out, y0, rtol=1e-12, atol=1e-14)


def test_zero_pathnet_baseline_is_rescaled_gaussian():
    model = ModelBundle(tiny_config(kind="baseline"))
    model.pathnet = lambda y, x, s: Tensor(np.zeros_like(np.asarray(y)))
    hist = straight_history(4)
    ps = predict_baseline(hist, [], model, 2, np.random.default_rng(6))
    draws = np.random.default_rng(6).spawn(2)
    for i, r in enumerate(draws):
        y = r.standard_normal((3, 2)) / np.prod(np.sqrt(model.traj_sched.alpha[1:]))
        np.testing.assert_allclose(ps.trajectories[i], y + hist[-1], rtol=1e-12)


def test_call_counts_under_defaults():
    model = ModelBundle(NetworkConfig())
    hist = straight_history()
    one = predict(hist, [], model, 1, np.random.default_rng(0))
    assert (one.denoiser_calls["endnet"], one.denoiser_calls["priornet"], one.denoiser_calls["pathnet"]) == (100, 1, 10)
    twenty = predict(hist, [], model, 20, np.random.default_rng(0))
    assert twenty.total_calls == 2220
    assert twenty.trajectories.shape == (20, 12, 2) and twenty.goals.shape == (20, 2)


def test_baseline_call_count():
    model = ModelBundle(NetworkConfig(kind="baseline"))
    ps = predict(straight_history(), [], model, 20, np.random.default_rng(0))
    assert ps.denoiser_calls == {"endnet": 0, "priornet": 0, "pathnet": 2000}
    with pytest.raises(ValueError):
        predict_baseline(straight_history(), [], ModelBundle(NetworkConfig()), 2, 0)


def test_prediction_is_bit_identical_for_same_seed():
    model = ModelBundle(tiny_config())
    hist = straight_history(4)
    a = predict(hist, [], model, 5, np.random.default_rng(12))
    b = predict(hist, [], model, 5, np.random.default_rng(12))
    assert np.array_equal(a.trajectories, b.trajectories)
    assert np.array_equal(a.goals, b.goals)


def test_draws_do_not_depend_on_count():
    model = ModelBundle(tiny_config())
    hist = straight_history(4)
    a = predict(hist, [], model, 3, np.random.default_rng(2))
    b = predict(hist, [], model, 7, np.random.default_rng(2))
    assert np.array_equal(a.trajectories, b.trajectories[:3])


def test_batched_matches_single_agent():
    model = ModelBundle(tiny_config())
    data = generate(ScenarioSpec(n_samples=4, t_p=4, t_q=3, seed=2))
    batched = predict_dataset(model, data.samples, 3, seed=8, chunk=3)
    for i, s in enumerate(data.samples):
        single = predict(s.history, s.neighbors, model, 3, np.random.default_rng([8, i]))
        np.testing.assert_allclose(single.trajectories, batched[i].trajectories, rtol=1e-12, atol=1e-12)


def test_stochastic_flag_changes_samples():
    model = ModelBundle(tiny_config())
    hist = straight_history(4)
    a = predict(hist, [], model, 2, np.random.default_rng(1))
    b = predict(hist, [], model, 2, np.random.default_rng(1), stochastic=True)
    assert not np.allclose(a.goals, b.goals)


def test_count_must_be_positive():
    with pytest.raises(ValueError):
        predict(straight_history(4), [], ModelBundle(tiny_config()), 0, 0)


def test_outputs_in_scene_frame():
    model = ModelBundle(tiny_config(coord_scale=3.0))
    model.priornet = lambda x, goal: Tensor(np.zeros((x.shape[0], 3, 2)))
    model.pathnet = lambda y, x, s: Tensor(np.zeros_like(np.asarray(y)))
    hist = straight_history(4) + np.array([50.0, -20.0])
    ps = predict(hist, [], model, 4, np.random.default_rng(0))
    sched = model.traj_sched
    for i, r in enumerate(np.random.default_rng(0).spawn(4)):
        r.standard_normal(2)                     # goal-chain start
        eps = r.standard_normal((3, 2))
        y = np.sqrt(1 - sched.alpha_bar[-1]) * eps / np.prod(np.sqrt(sched.alpha[1:]))
        np.testing.assert_allclose(ps.trajectories[i], 3.0 * y + hist[-1], rtol=1e-12)
