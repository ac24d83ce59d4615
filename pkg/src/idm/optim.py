from __future__ import annotations

import numpy as np

from .autodiff import NonFiniteError
from .layers import ParamSet


class Adam:
    """Adaptive-moment optimizer with per-parameter first/second moments.

    State (``m``, ``v``, ``t``) is keyed by parameter name so it can be written
    to and restored from a checkpoint exactly.
    """

    def __init__(self, params: ParamSet, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if g.shape != self.params[k].shape:
                raise ValueError(f"gradient for {k} has shape {g.shape}, expected {self.params[k].shape}")
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for parameter {k}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            self.m[k], self.v[k] = m, v
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array(float(self.t))}
        for k in self.params:
            out[f"adam.m/{k}"] = self.m[k].copy()
            out[f"adam.v/{k}"] = self.v[k].copy()
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["adam.t"])
        for k in self.params:
            self.m[k] = np.array(state[f"adam.m/{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"adam.v/{k}"], dtype=np.float64)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm
