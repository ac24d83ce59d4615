import numpy as np
import pytest

from idm import autodiff as ad
from idm.autodiff import Tensor
from idm.layers import GRU, ParamSet
from idm.networks import (ModelBundle, NetworkConfig, encode, endnet_eval, pathnet_eval,
                          priornet_eval)

from conftest import finite_difference, max_rel_error

SEEDS = [0, 1, 2, 3, 4]


def tiny_config(seed=0, **kw):
    base = dict(t_p=4, t_q=3, context_dim=5, enc_hidden=3, step_embed=4, endnet_layers=2,
                endnet_width=6, priornet_width=6, pathnet_width=6, pathnet_hidden=3,
                goal_steps=20, traj_steps=5, base_steps=20, seed=seed)
    base.update(kw)
    return NetworkConfig(**base)


def scene(rng, B=3, t_p=4, counts=(2, 0, 1)):
    hist = np.cumsum(rng.normal(0.2, 0.1, size=(B, t_p, 2)), axis=1)
    nbrs = [hist[i] + rng.normal(0, 1.0, size=(c, t_p, 2)) for i, c in enumerate(counts)]
    return hist, nbrs


def check_grads(model, loss_fn, prefixes):
    params = {k: v for k, v in model.params.items() if k.startswith(prefixes)}
    loss = loss_fn()
    analytic = ad.gradient(loss, params)
    numeric = finite_difference(lambda: loss_fn().item(), params)
    return max_rel_error(analytic, numeric)


@pytest.mark.parametrize("seed", SEEDS)
def test_encoder_gradients(seed):
    rng = np.random.default_rng(seed)
    model = ModelBundle(tiny_config(seed))
    hist, nbrs = scene(rng)
    w = rng.normal(size=(3, 5))
    err = check_grads(model, lambda: (model.encode_batch(hist, nbrs)[0] * w).sum(), ("enc.",))
    assert err <= 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_endnet_gradients(seed):
    rng = np.random.default_rng(seed)
    model = ModelBundle(tiny_config(seed))
    hist, nbrs = scene(rng)
    c_k = rng.normal(size=(3, 2))
    k = rng.integers(1, 21, size=3)
    w = rng.normal(size=(3, 2))

    def f():
        x, _ = model.encode_batch(hist, nbrs)
        return (model.endnet(c_k, x, k) * w).sum()
    assert check_grads(model, f, ("endnet.", "enc.")) <= 1e-4


@pytest.mark.parametrize("backbone", ["mlp", "recurrent"])
@pytest.mark.parametrize("seed", SEEDS)
def test_priornet_gradients(seed, backbone):
    rng = np.random.default_rng(seed)
    model = ModelBundle(tiny_config(seed, priornet_backbone=backbone))
    hist, nbrs = scene(rng)
    goal = rng.normal(size=(3, 2))
    w = rng.normal(size=(3, 3, 2))

    def f():
        x, _ = model.encode_batch(hist, nbrs)
        return (model.priornet(x, goal) * w).sum()
    assert check_grads(model, f, ("prior.", "enc.")) <= 1e-4


@pytest.mark.parametrize("backbone", ["mlp", "recurrent"])
@pytest.mark.parametrize("seed", SEEDS)
def test_pathnet_gradients(seed, backbone):
    rng = np.random.default_rng(seed)
    model = ModelBundle(tiny_config(seed, pathnet_backbone=backbone))
    hist, nbrs = scene(rng)
    y = rng.normal(size=(3, 3, 2))
    s = rng.integers(1, 6, size=3)
    w = rng.normal(size=(3, 3, 2))

    def f():
        x, _ = model.encode_batch(hist, nbrs)
        return (model.pathnet(y, x, s) * w).sum()
    assert check_grads(model, f, ("path.", "enc.")) <= 1e-4


def test_fused_gru_matches_unfused(rng):
    params = ParamSet()
    gru = GRU(params, "g", 3, 4, rng)
    x = Tensor(rng.normal(size=(2, 5, 3)))
    h0 = Tensor(rng.normal(size=(2, 4)))
    for reverse in (False, True):
        a = gru.run(x, h0, reverse=reverse)
        b = gru.run_unfused(x, h0, reverse=reverse)
        np.testing.assert_allclose(a.data, b.data, atol=1e-13)
        w = rng.normal(size=a.shape)
        ga = ad.gradient((a * w).sum(), dict(params.items()))
        gb = ad.gradient((b * w).sum(), dict(params.items()))
        for k in ga:
            np.testing.assert_allclose(ga[k], gb[k], atol=1e-12)


def test_output_shapes():
    model = ModelBundle(tiny_config())
    rng = np.random.default_rng(0)
    hist, nbrs = scene(rng)
    x = encode(hist[0], nbrs[0], model)
    assert x.shape == (5,)
    assert endnet_eval(np.zeros(2), x, 1, model).shape == (2,)
    assert priornet_eval(x, np.zeros(2), model).shape == (3, 2)
    assert pathnet_eval(np.zeros((3, 2)), x, 5, model).shape == (3, 2)


def test_step_range_checked():
    model = ModelBundle(tiny_config())
    x = np.zeros(5)
    with pytest.raises(IndexError):
        endnet_eval(np.zeros(2), x, 0, model)
    with pytest.raises(IndexError):
        endnet_eval(np.zeros(2), x, 21, model)
    with pytest.raises(IndexError):
        pathnet_eval(np.zeros((3, 2)), x, 6, model)


def test_step_conditioning_changes_output():
    model = ModelBundle(tiny_config())
    x = np.random.default_rng(1).normal(size=5)
    c = np.array([0.3, -0.2])
    outs = [endnet_eval(c, x, k, model) for k in (1, 2, 10, 20)]
    for i in range(len(outs)):
        for j in range(i + 1, len(outs)):
            assert not np.allclose(outs[i], outs[j])


def test_encoder_translation_invariant():
    model = ModelBundle(tiny_config())
    rng = np.random.default_rng(2)
    hist, nbrs = scene(rng)
    shift = np.array([13.5, -7.25])
    a = encode(hist[0], nbrs[0], model)
    b = encode(hist[0] + shift, nbrs[0] + shift, model)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_encoder_neighbor_permutation_invariant():
    model = ModelBundle(tiny_config())
    rng = np.random.default_rng(3)
    hist = np.cumsum(rng.normal(0.2, 0.1, size=(4, 2)), axis=0)
    nbrs = hist + rng.normal(0, 1.0, size=(5, 4, 2))
    ref = encode(hist, nbrs, model)
    for _ in range(5):
        perm = rng.permutation(5)
        assert np.array_equal(encode(hist, nbrs[perm], model), ref)


def test_encoder_handles_no_neighbors_and_rejects_empty_history():
    model = ModelBundle(tiny_config())
    hist = np.zeros((4, 2))
    assert np.isfinite(encode(hist, [], model)).all()
    with pytest.raises(ValueError):
        encode(np.zeros((0, 2)), [], model)


def test_identical_inputs_give_identical_outputs():
    a, b = ModelBundle(tiny_config(seed=7)), ModelBundle(tiny_config(seed=7))
    assert a.params.names() == b.params.names()
    hist = np.cumsum(np.full((4, 2), 0.2), axis=0)
    assert np.array_equal(encode(hist, [], a), encode(hist, [], b))


def test_priornet_rejects_nonfinite_goal():
    model = ModelBundle(tiny_config())
    with pytest.raises(ValueError):
        priornet_eval(np.zeros(5), np.array([np.nan, 0.0]), model)


def test_config_roundtrip_and_validation():
    cfg = tiny_config(pathnet_backbone="mlp", coord_scale=2.5)
    assert NetworkConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ValueError):
        NetworkConfig(pathnet_backbone="transformer").validate()
    with pytest.raises(ValueError):
        NetworkConfig(kind="other").validate()


def test_baseline_bundle_has_single_chain():
    model = ModelBundle(tiny_config(kind="baseline"))
    assert model.endnet is None and model.priornet is None
    assert model.traj_sched.steps == 20
    assert not model.params.subset("endnet.")
