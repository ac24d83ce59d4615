"""Sampling: goal chain -> learned prior -> short trajectory chain, and the
single-chain conditional baseline."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import reverse_step
from .networks import ModelBundle


@dataclass
class PredictionSet:
    trajectories: np.ndarray                  # (count, T_Q, 2), scene units
    goals: np.ndarray                         # (count, 2), scene units
    denoiser_calls: dict[str, int] = field(default_factory=dict)
    wall_ns: int = 0                          # network evaluations only
    wall_ns_inclusive: int = 0                # including encoding

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def total_calls(self) -> int:
        return sum(self.denoiser_calls.values())


def _arr(out) -> np.ndarray:
    return out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)


def _draw_rngs(rng, count: int) -> list[np.random.Generator]:
    """One independent stream per draw so draw i does not depend on ``count``."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    return rng.spawn(count)


class _Timer:
    def __init__(self):
        self.ns = 0

    def __enter__(self):
        self._t = time.perf_counter_ns()

    def __exit__(self, *exc):
        self.ns += time.perf_counter_ns() - self._t


def _goal_chain(model: ModelBundle, x: Tensor, c: np.ndarray, rngs, stochastic: bool, timer: _Timer) -> np.ndarray:
    sched = model.goal_sched
    for k in range(sched.steps, 0, -1):
        with timer:
            eps = _arr(model.endnet(c, x, k))
        c = _reverse_batch(c, eps, k, sched, rngs, stochastic)
    return c


def _reverse_batch(v, eps, k, sched, rngs, stochastic):
    mean = reverse_step(v, eps, k, sched)
    if stochastic and k > 1:
        z = np.stack([r.standard_normal(v.shape[1:]) for r in rngs])
        mean = mean + np.sqrt(sched.beta_tilde[k]) * z
    return mean


def _traj_chain(model: ModelBundle, x: Tensor, y: np.ndarray, rngs, stochastic: bool, timer: _Timer,
                sched) -> np.ndarray:
    for s in range(sched.steps, 0, -1):
        with timer:
            eps = _arr(model.pathnet(y, x, s))
        y = _reverse_batch(y, eps, s, sched, rngs, stochastic)
    return y


def sample_goals_normalized(model: ModelBundle, x: Tensor, rngs, stochastic: bool = False,
                            timer: _Timer | None = None) -> np.ndarray:
    """Run the goal chain for a batch of contexts ``x`` (N, D), one rng per row."""
    c = np.stack([r.standard_normal(2) for r in rngs])
    with ad.no_grad():
        return _goal_chain(model, x, c, rngs, stochastic, timer or _Timer())


def sample_trajectories_normalized(model: ModelBundle, x: Tensor, goals: np.ndarray, rngs,
                                   stochastic: bool = False, timer: _Timer | None = None) -> np.ndarray:
    timer = timer or _Timer()
    t_q = model.cfg.t_q
    eps = np.stack([r.standard_normal((t_q, 2)) for r in rngs])
    with ad.no_grad():
        with timer:
            mu = _arr(model.priornet(x, goals))
        sched = model.traj_sched
        if sched is None:
            return mu
        y = mu + np.sqrt(1.0 - sched.alpha_bar[sched.steps]) * eps
        return _traj_chain(model, x, y, rngs, stochastic, timer, sched)


def _expand(x: Tensor, reps: int) -> Tensor:
    return Tensor(np.repeat(x.data, reps, axis=0))


def predict_batch(model: ModelBundle, histories: np.ndarray, neighbors: Sequence[np.ndarray],
                  count: int, rngs: Sequence, stochastic: bool = False) -> list[PredictionSet]:
    """Predict ``count`` futures for each of A agents; ``rngs[a]`` seeds agent a.

    All A*count chains run as one vectorized batch; call counts are reported
    per agent and per logical sample.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    A = len(histories)
    t_all = time.perf_counter_ns()
    timer = _Timer()
    with ad.no_grad():
        x, origin = model.encode_batch(np.asarray(histories, dtype=np.float64), list(neighbors))
        draws = [r for a in range(A) for r in _draw_rngs(rngs[a], count)]
        xr = _expand(x, count)
        if model.kind == "baseline":
            sched = model.traj_sched
            y = np.stack([r.standard_normal((model.cfg.t_q, 2)) for r in draws])
            y = _traj_chain(model, xr, y, draws, stochastic, timer, sched)
            goals = y[:, -1, :]
            calls = {"endnet": 0, "priornet": 0, "pathnet": count * sched.steps}
        else:
            goals = sample_goals_normalized(model, xr, draws, stochastic, timer)
            y = sample_trajectories_normalized(model, xr, goals, draws, stochastic, timer)
            s_steps = model.traj_sched.steps if model.traj_sched is not None else 0
            calls = {"endnet": count * model.goal_sched.steps, "priornet": count, "pathnet": count * s_steps}
    o = np.repeat(origin, count, axis=0)
    trajs = model.denormalize(y, o).reshape(A, count, model.cfg.t_q, 2)
    goals = (goals * model.cfg.coord_scale + o).reshape(A, count, 2)
    total = time.perf_counter_ns() - t_all
    return [PredictionSet(trajs[a], goals[a], dict(calls), timer.ns // A, total // A) for a in range(A)]


def predict(history: np.ndarray, neighbors: Sequence[np.ndarray], model: ModelBundle, count: int,
            rng, stochastic: bool = False) -> PredictionSet:
    """``count`` independent (goal, trajectory) pairs for one agent."""
    nb = np.asarray(neighbors, dtype=np.float64).reshape(-1, model.cfg.t_p, 2) if len(neighbors) \
        else np.zeros((0, model.cfg.t_p, 2))
    return predict_batch(model, np.asarray(history)[None], [nb], count, [rng], stochastic)[0]


def predict_baseline(history, neighbors, model_baseline: ModelBundle, count: int, rng,
                     stochastic: bool = False) -> PredictionSet:
    if model_baseline.kind != "baseline":
        raise ValueError("predict_baseline needs a baseline model")
    return predict(history, neighbors, model_baseline, count, rng, stochastic)


def sample_goal(x: np.ndarray, model: ModelBundle, rng: np.random.Generator,
                stochastic: bool = False) -> np.ndarray:
    """One goal draw (normalized frame) for a context vector ``x`` (D,)."""
    return sample_goals_normalized(model, Tensor(np.asarray(x)[None]), [rng], stochastic)[0]


def sample_trajectory(x: np.ndarray, goal: np.ndarray, model: ModelBundle, rng: np.random.Generator,
                      stochastic: bool = False) -> np.ndarray:
    """One trajectory (normalized frame) conditioned on ``goal``."""
    return sample_trajectories_normalized(model, Tensor(np.asarray(x)[None]),
                                          np.asarray(goal, dtype=np.float64)[None], [rng], stochastic)[0]


def predict_dataset(model: ModelBundle, samples, count: int, seed: int, chunk: int = 64,
                    stochastic: bool = False) -> list[PredictionSet]:
    """Predictions for every sample; agent i uses stream ``default_rng([seed, i])``."""
    out: list[PredictionSet] = []
    for lo in range(0, len(samples), chunk):
        part = samples[lo:lo + chunk]
        hist = np.stack([s.history for s in part])
        nbrs = [np.stack(s.neighbors) if s.neighbors else np.zeros((0, model.cfg.t_p, 2)) for s in part]
        rngs = [np.random.default_rng([seed, lo + i]) for i in range(len(part))]
        out.extend(predict_batch(model, hist, nbrs, count, rngs, stochastic))
    return out
