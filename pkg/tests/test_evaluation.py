import math

import numpy as np
import pytest

from idm.evaluation import (N_SWEEP, ade, best_of_n, density_grid, evaluate, fde, mode_recall,
                            read_density_csv, write_density_csv)
from idm.inference import PredictionSet


# brute-force references written with plain loops -------------------------------

def ade_loop(p, t):
    total = 0.0
    for i in range(len(p)):
        total += math.sqrt((p[i][0] - t[i][0]) ** 2 + (p[i][1] - t[i][1]) ** 2)
    return total / len(p)


def fde_loop(p, t):
    return math.sqrt((p[-1][0] - t[-1][0]) ** 2 + (p[-1][1] - t[-1][1]) ** 2)


def best_loop(preds, t, n):
    best_a = best_f = float("inf")
    for i in range(n):
        best_a = min(best_a, ade_loop(preds[i], t))
        best_f = min(best_f, fde_loop(preds[i], t))
    return best_a, best_f


def recall_loop(preds, modes, radius):
    hit = 0
    for m in modes:
        for p in preds:
            if math.hypot(p[-1][0] - m[0], p[-1][1] - m[1]) <= radius:
                hit += 1
                break
    return hit / len(modes)


# -----------------------------------------------------------------------------

def test_ade_fde_trivial_cases():
    t = np.random.default_rng(0).normal(size=(12, 2))
    assert ade(t, t) == 0.0 and fde(t, t) == 0.0
    assert ade(t + np.array([3.0, 4.0]), t) == pytest.approx(5.0, abs=1e-12)
    p = t.copy()
    p[-1] += [3.0, 4.0]
    assert fde(p, t) == pytest.approx(5.0, abs=1e-12)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        ade(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        fde(np.zeros((3, 2)), np.zeros((4, 2)))


def test_metrics_match_loops_on_1000_fixtures():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 20))
        count = int(rng.integers(1, 25))
        truth = rng.normal(scale=rng.uniform(0.1, 50), size=(T, 2))
        preds = truth + rng.normal(scale=rng.uniform(0.1, 20), size=(count, T, 2))
        worst = max(worst, abs(ade(preds[0], truth) - ade_loop(preds[0], truth)))
        worst = max(worst, abs(fde(preds[0], truth) - fde_loop(preds[0], truth)))
        n = int(rng.integers(1, count + 1))
        a, f = best_of_n(preds, truth, n)
        ra, rf = best_loop(preds, truth, n)
        worst = max(worst, abs(a - ra), abs(f - rf))
    assert worst <= 1e-12


def test_symmetry(rng):
    a, b = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    assert ade(a, b) == ade(b, a) and fde(a, b) == fde(b, a)


def test_best_of_n_basics(rng):
    truth = rng.normal(size=(12, 2))
    preds = truth + rng.normal(size=(5, 12, 2))
    assert best_of_n(preds, truth, 1) == (ade(preds[0], truth), fde(preds[0], truth))
    preds[3] = truth
    assert best_of_n(preds, truth, 5) == (0.0, 0.0)
    with pytest.raises(ValueError):
        best_of_n(preds, truth, 0)
    with pytest.raises(ValueError):
        best_of_n(preds, truth, 6)


def test_minima_are_independent():
    truth = np.zeros((2, 2))
    preds = np.array([[[0.0, 0.0], [2.0, 0.0]],     # best ADE (1.0), FDE 2
                      [[3.0, 0.0], [1.5, 0.0]]])    # ADE 2.25, best FDE 1.5
    assert best_of_n(preds, truth, 2) == (1.0, 1.5)


def test_sweep_monotone_on_random_sets(rng):
    for _ in range(200):
        truth = rng.normal(size=(12, 2))
        preds = truth + rng.normal(scale=2.0, size=(20, 12, 2))
        vals = [best_of_n(preds, truth, n) for n in N_SWEEP]
        for (a0, f0), (a1, f1) in zip(vals, vals[1:]):
            assert a1 <= a0 and f1 <= f0


def test_min_ade_bounded_by_mean(rng):
    truth = rng.normal(size=(12, 2))
    preds = truth + rng.normal(size=(20, 12, 2))
    a, _ = best_of_n(preds, truth, 20)
    assert a <= np.mean([ade(p, truth) for p in preds])


def test_mode_recall_cases(rng):
    modes = np.array([[1.0, 1.0], [2.0, 0.0], [1.0, -1.0]])
    at_modes = np.zeros((3, 4, 2))
    at_modes[:, -1] = modes
    assert mode_recall(at_modes, modes, 0.1) == 1.0
    one = np.zeros((5, 4, 2))
    one[:, -1] = modes[1]
    assert mode_recall(one, modes, 0.1) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        mode_recall(one, np.zeros((0, 2)), 0.1)
    with pytest.raises(ValueError):
        mode_recall(one, modes, 0.0)
    for _ in range(300):
        preds = rng.normal(size=(int(rng.integers(1, 10)), 4, 2))
        m = rng.normal(size=(int(rng.integers(1, 5)), 2))
        r = float(rng.uniform(0.1, 2.0))
        assert mode_recall(preds, m, r) == recall_loop(preds, m, r)


def test_density_grid_cases(rng):
    pts = np.full((10, 3, 2), 0.25)
    g = density_grid(pts, (0, 1, 0, 1), 4)
    assert g.shape == (3, 4, 4)
    for t in range(3):
        assert g[t, 1, 1] == 1.0 and g[t].sum() == 1.0
    g = density_grid(rng.normal(size=(50, 6, 2)) * 5, (-1, 1, -1, 1), 5)
    np.testing.assert_allclose(g.sum(axis=(1, 2)), 1.0, rtol=1e-12)
    with pytest.raises(ValueError):
        density_grid(pts, (0, 1, 0, 1), 1)
    with pytest.raises(ValueError):
        density_grid(pts, (1, 1, 0, 1), 4)


def test_density_grid_uniform_chi_square():
    from scipy.stats import chi2
    rng = np.random.default_rng(3)
    n, res = 40_000, 8
    g = density_grid(rng.uniform(0, 1, size=(n, 1, 2)), (0, 1, 0, 1), res)[0]
    counts = g * n
    expected = n / res ** 2
    stat = float(((counts - expected) ** 2 / expected).sum())
    assert stat < chi2.ppf(0.999, res * res - 1)


def test_density_csv_roundtrip(tmp_path, rng):
    g = density_grid(rng.normal(size=(30, 2, 2)), (-2, 2, -1, 3), 4)
    write_density_csv(g, (-2, 2, -1, 3), tmp_path / "d.csv")
    back, bounds = read_density_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back, g)
    np.testing.assert_allclose(bounds, (-2, 2, -1, 3), atol=1e-12)


def test_evaluate_report(tmp_path, rng):
    truths = [rng.normal(size=(12, 2)) for _ in range(6)]
    sets = [PredictionSet(t + rng.normal(size=(20, 12, 2)), t[-1] + rng.normal(size=(20, 2)),
                          {"endnet": 2000, "priornet": 20, "pathnet": 200}, 1000, 2000) for t in truths]
    modes = [np.array([t[-1], t[-1] + 10.0]) for t in truths]
    rep = evaluate(sets, truths, n=20, modes=modes, radius=3.0)
    assert sorted(rep.sweep) == list(N_SWEEP)
    assert rep.min_fde == rep.sweep[20][1]
    expected = np.mean([best_of_n(s, t, 20)[0] for s, t in zip(sets, truths)])
    assert rep.min_ade == pytest.approx(expected, abs=1e-12)
    assert rep.mode_recall == 0.5
    assert rep.denoiser_calls["endnet"] == 2000
    assert "minFDE(20)" in rep.summary()
    rep.write_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "n,min_ade,min_fde"
    with pytest.raises(ValueError):
        evaluate(sets, truths[:2])
