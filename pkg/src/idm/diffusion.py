"""Noise schedules and closed-form DDPM quantities shared by both chains.

All functions are pure. Step indices are 1-based (step 0 is clean data);
schedule arrays are stored with a leading entry for step 0 so that
``alpha_bar[0] == 1`` and ``beta_tilde[1] == 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int
    beta: np.ndarray          # (steps + 1,), beta[0] = 0
    alpha: np.ndarray         # 1 - beta
    alpha_bar: np.ndarray     # cumulative product, alpha_bar[0] = 1
    beta_tilde: np.ndarray    # posterior variance, beta_tilde[0] = beta_tilde[1] = 0

    def check_step(self, k: int) -> None:
        if not (1 <= k <= self.steps):
            raise IndexError(f"step {k} out of range [1, {self.steps}]")


def schedule_from_betas(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64).ravel()
    if betas.size < 1:
        raise ValueError("schedule needs at least one step")
    if not np.all((betas > 0) & (betas < 1)):
        raise ValueError("every beta must lie in (0, 1)")
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.empty_like(alpha)
    alpha_bar[0] = 1.0
    for k in range(1, len(alpha)):
        alpha_bar[k] = alpha[k] * alpha_bar[k - 1]
    beta_tilde = np.zeros_like(beta)
    denom = 1.0 - alpha_bar[1:]
    beta_tilde[1:] = np.divide((1.0 - alpha_bar[:-1]) * beta[1:], denom,
                               out=np.zeros_like(denom), where=denom > 0)
    return NoiseSchedule(len(betas), beta, alpha, alpha_bar, beta_tilde)


def make_linear_schedule(steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return schedule_from_betas(np.linspace(beta_start, beta_end, steps))


def empty_schedule() -> NoiseSchedule:
    """Zero-step chain (used for the degenerate S=0 sampler)."""
    z = np.zeros(1)
    return NoiseSchedule(0, z, np.ones(1), np.ones(1), z.copy())


def _coef(table: np.ndarray, k, ndim: int):
    """Look up per-step coefficients; array ``k`` broadcasts over trailing dims."""
    if np.ndim(k) == 0:
        return table[int(k)]
    return table[np.asarray(k)].reshape(-1, *([1] * (ndim - 1)))


def _check_steps(k, sched: NoiseSchedule) -> None:
    kk = np.asarray(k)
    if kk.size and (kk.min() < 1 or kk.max() > sched.steps):
        raise IndexError(f"step out of range [1, {sched.steps}]")


def forward_marginal(clean, k, sched: NoiseSchedule, noise):
    """Draw from q(y_k | y_0) given a standard-normal ``noise`` of the same shape.

    ``k`` may be an int or, for a batch whose leading axis is samples, an
    integer array with one step per sample. Works on numpy arrays and Tensors.
    """
    _check_steps(k, sched)
    if np.shape(clean) != np.shape(noise):
        raise ValueError(f"noise shape {np.shape(noise)} != clean shape {np.shape(clean)}")
    ndim = len(np.shape(clean))
    a = _coef(np.sqrt(sched.alpha_bar), k, ndim)
    s = _coef(np.sqrt(1.0 - sched.alpha_bar), k, ndim)
    return clean * a + noise * s


def forward_step(prev: np.ndarray, k: int, sched: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """One transition of q(y_k | y_{k-1})."""
    sched.check_step(k)
    return np.sqrt(sched.alpha[k]) * prev + np.sqrt(sched.beta[k]) * noise


def posterior_params(clean: np.ndarray, noisy: np.ndarray, k: int, sched: NoiseSchedule):
    """Mean and variance of q(y_{k-1} | y_k, y_0)."""
    sched.check_step(k)
    ab, ab_prev = sched.alpha_bar[k], sched.alpha_bar[k - 1]
    c0 = np.sqrt(ab_prev) * sched.beta[k] / (1.0 - ab)
    ck = np.sqrt(sched.alpha[k]) * (1.0 - ab_prev) / (1.0 - ab)
    return c0 * np.asarray(clean) + ck * np.asarray(noisy), float(sched.beta_tilde[k])


def posterior_mean_from_noise(noisy: np.ndarray, noise: np.ndarray, k: int, sched: NoiseSchedule) -> np.ndarray:
    """Second closed form of the posterior mean, written via the injected noise."""
    sched.check_step(k)
    return (noisy - sched.beta[k] / np.sqrt(1.0 - sched.alpha_bar[k]) * noise) / np.sqrt(sched.alpha[k])


def reverse_mean(noisy: np.ndarray, predicted_noise: np.ndarray, k: int, sched: NoiseSchedule) -> np.ndarray:
    """Mean-only reverse update y_k -> y_{k-1} driven by a noise prediction."""
    sched.check_step(k)
    if np.shape(noisy) != np.shape(predicted_noise):
        raise ValueError(f"shape mismatch {np.shape(noisy)} vs {np.shape(predicted_noise)}")
    coef = sched.beta[k] / np.sqrt(1.0 - sched.alpha_bar[k])
    return (noisy - coef * predicted_noise) / np.sqrt(sched.alpha[k])


def reverse_step(noisy, predicted_noise, k: int, sched: NoiseSchedule,
                 rng: np.random.Generator | None = None, stochastic: bool = False):
    """Reverse update; optionally adds sqrt(beta_tilde_k) z for k > 1."""
    mean = reverse_mean(noisy, predicted_noise, k, sched)
    if stochastic and k > 1:
        mean = mean + np.sqrt(sched.beta_tilde[k]) * rng.standard_normal(np.shape(mean))
    return mean


def noise_prediction_loss(true_noise, predicted_noise) -> Tensor:
    """Squared error summed over coordinates and averaged over the batch.

    Inputs are (B, ...) batches; a single un-batched sample is treated as B=1
    when given as 1-D.
    """
    t, p = ad.as_tensor(true_noise), ad.as_tensor(predicted_noise)
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {p.shape}")
    sq = ad.square(p - t)
    if sq.ndim <= 1:
        return sq.sum()
    return sq.reshape(sq.shape[0], -1).sum(axis=1).mean()
