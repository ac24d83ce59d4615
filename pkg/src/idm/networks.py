"""Encoder, EndNet, PriorNet and PathNet, plus the bundle that owns them.

Every network works on batches: leading axis is the sample axis. All
coordinates the networks see are relative to the agent's last observed
position and divided by ``NetworkConfig.coord_scale``; :class:`ModelBundle`
handles that normalization in both directions.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import make_linear_schedule
from .layers import GRU, MLP, Linear, ParamSet, sinusoidal_embedding

BACKBONES = ("mlp", "recurrent")
KINDS = ("idm", "baseline")


@dataclass
class NetworkConfig:
    kind: str = "idm"
    t_p: int = 8
    t_q: int = 12
    coord_scale: float = 1.0
    context_dim: int = 64
    enc_hidden: int = 32
    step_embed: int = 16
    endnet_layers: int = 3
    endnet_width: int = 128
    priornet_backbone: str = "mlp"
    priornet_width: int = 128
    pathnet_backbone: str = "recurrent"
    pathnet_width: int = 128
    pathnet_hidden: int = 48
    # goal chain (IDM) / single chain (baseline)
    goal_steps: int = 100
    goal_beta_start: float = 1e-4
    goal_beta_end: float = 0.02
    # short trajectory chain (IDM only)
    traj_steps: int = 10
    traj_beta_start: float = 1e-4
    traj_beta_end: float = 0.05
    base_steps: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("priornet_backbone", "pathnet_backbone"):
            if getattr(self, name) not in BACKBONES:
                raise ValueError(f"{name} must be one of {BACKBONES}, got {getattr(self, name)!r}")
        for name in ("t_p", "t_q", "context_dim", "enc_hidden", "endnet_width",
                     "priornet_width", "pathnet_width", "pathnet_hidden", "step_embed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.endnet_layers < 1:
            raise ValueError("endnet_layers must be >= 1")
        if self.goal_steps < 1 or self.base_steps < 1 or self.traj_steps < 0:
            raise ValueError("invalid chain length")
        if self.coord_scale <= 0:
            raise ValueError("coord_scale must be positive")

    def to_text(self) -> dict[str, str]:
        return {f"net.{k}": repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_text(cls, meta: dict[str, str]) -> "NetworkConfig":
        kw = {}
        for f in fields(cls):
            key = f"net.{f.name}"
            if key in meta:
                kw[f.name] = _parse_like(f.type, meta[key])
        return cls(**kw)


def _parse_like(type_name, raw: str):
    t = str(type_name)
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw


def _embed(steps, width: int) -> Tensor:
    return Tensor(sinusoidal_embedding(np.asarray(steps), width))


class Encoder:
    """History GRU plus sum-pooled neighbor GRU, projected to the context width."""

    def __init__(self, params: ParamSet, cfg: NetworkConfig, rng: np.random.Generator, name: str = "enc"):
        h = cfg.enc_hidden
        self.cfg = cfg
        self.hist = GRU(params, f"{name}.hist", 4, h, rng)
        self.nbr = GRU(params, f"{name}.nbr", 4, h, rng)
        self.proj = Linear(params, f"{name}.proj", 2 * h, cfg.context_dim, rng)

    @staticmethod
    def _features(tracks: np.ndarray) -> np.ndarray:
        vel = np.diff(tracks, axis=1, prepend=tracks[:, :1])
        return np.concatenate([tracks, vel], axis=2)

    def __call__(self, history: np.ndarray, neighbors: Sequence[np.ndarray]) -> Tensor:
        """``history`` (B, T_P, 2) already normalized; ``neighbors[i]`` (N_i, T_P, 2) in the same frame."""
        B = history.shape[0]
        h_agent = self.hist.run(Tensor(self._features(history)))[:, -1, :]
        counts = [len(n) for n in neighbors]
        n_max = max(counts, default=0)
        if n_max == 0:
            pooled = Tensor(np.zeros((B, self.cfg.enc_hidden)))
        else:
            flat = np.concatenate([n for n in neighbors if len(n)], axis=0)
            enc = self.nbr.run(Tensor(self._features(flat)))[:, -1, :]  # (N_total, H)
            H = enc.shape[1]
            # scatter into (B, n_max, H) with zero padding
            rows = np.concatenate([np.full(c, i) for i, c in enumerate(counts) if c])
            slots = np.concatenate([np.arange(c) for c in counts if c])
            scatter = np.zeros((B * n_max, len(rows)))
            scatter[rows * n_max + slots, np.arange(len(rows))] = 1.0
            padded = ad.matmul(Tensor(scatter), enc).reshape(B, n_max, H)
            # sorting each column before summation makes the pooled value exactly
            # independent of neighbor order
            order = np.argsort(padded.data, axis=1, kind="stable")
            idx = (np.arange(B)[:, None, None], order, np.arange(H)[None, None, :])
            pooled = padded[idx].sum(axis=1)
        return ad.tanh(self.proj(ad.concat([h_agent, pooled], axis=1)))


class EndNet:
    def __init__(self, params: ParamSet, cfg: NetworkConfig, rng: np.random.Generator, name: str = "endnet"):
        self.cfg = cfg
        self.mlp = MLP(params, name, 2 + cfg.context_dim + cfg.step_embed, cfg.endnet_width,
                       cfg.endnet_layers, 2, rng)

    def __call__(self, c_k, x: Tensor, k) -> Tensor:
        B = x.shape[0]
        k = np.broadcast_to(np.asarray(k), (B,))
        return self.mlp(ad.concat([ad.as_tensor(c_k), x, _embed(k, self.cfg.step_embed)], axis=1))


class PriorNetMLP:
    def __init__(self, params: ParamSet, cfg: NetworkConfig, rng: np.random.Generator, name: str = "prior"):
        self.cfg = cfg
        self.mlp = MLP(params, name, cfg.context_dim + 2, cfg.priornet_width, 2, 2 * cfg.t_q, rng)

    def __call__(self, x: Tensor, goal) -> Tensor:
        out = self.mlp(ad.concat([x, ad.as_tensor(goal)], axis=1))
        return out.reshape(x.shape[0], self.cfg.t_q, 2)


class PriorNetRecurrent:
    """GRU decoder seeded from (context, goal), one output point per future step."""

    def __init__(self, params: ParamSet, cfg: NetworkConfig, rng: np.random.Generator, name: str = "prior"):
        self.cfg = cfg
        h = cfg.pathnet_hidden
        self.init = Linear(params, f"{name}.init", cfg.context_dim + 2, h, rng)
        self.gru = GRU(params, f"{name}.gru", 8 + 2, h, rng)
        self.out = Linear(params, f"{name}.out", h, 2, rng)
        self._time = sinusoidal_embedding(np.arange(1, cfg.t_q + 1), 8)

    def __call__(self, x: Tensor, goal) -> Tensor:
        B, T = x.shape[0], self.cfg.t_q
        goal = ad.as_tensor(goal)
        h0 = ad.tanh(self.init(ad.concat([x, goal], axis=1)))
        time = np.broadcast_to(self._time, (B, T, 8))
        goal_rep = np.broadcast_to(goal.data[:, None, :], (B, T, 2))
        seq = Tensor(np.concatenate([time, goal_rep], axis=2))
        hs = self.gru.run(seq, h0)
        return self.out(hs.reshape(B * T, hs.shape[2])).reshape(B, T, 2)


class PathNetMLP:
    def __init__(self, params: ParamSet, cfg: NetworkConfig, rng: np.random.Generator, name: str = "path"):
        self.cfg = cfg
        n_in = 2 * cfg.t_q + cfg.context_dim + cfg.step_embed
        self.mlp = MLP(params, name, n_in, cfg.pathnet_width, 3, 2 * cfg.t_q, rng)

    def __call__(self, y_s, x: Tensor, s) -> Tensor:
        B, T = x.shape[0], self.cfg.t_q
        s = np.broadcast_to(np.asarray(s), (B,))
        y = ad.as_tensor(y_s).reshape(B, 2 * T)
        out = self.mlp(ad.concat([y, x, _embed(s, self.cfg.step_embed)], axis=1))
        return out.reshape(B, T, 2)


class PathNetRecurrent:
    """Bidirectional GRU over the T_Q noisy points, conditioned on (context, step)."""

    def __init__(self, params: ParamSet, cfg: NetworkConfig, rng: np.random.Generator, name: str = "path"):
        self.cfg = cfg
        h = cfg.pathnet_hidden
        self.cond = Linear(params, f"{name}.cond", cfg.context_dim + cfg.step_embed, h, rng)
        self.fwd = GRU(params, f"{name}.fwd", 2 + 8 + h, h, rng)
        self.bwd = GRU(params, f"{name}.bwd", 2 + 8 + h, h, rng)
        self.out = Linear(params, f"{name}.out", 2 * h + 2 + h, 2, rng)
        self._time = sinusoidal_embedding(np.arange(1, cfg.t_q + 1), 8)

    def __call__(self, y_s, x: Tensor, s) -> Tensor:
        B, T = x.shape[0], self.cfg.t_q
        h = self.cfg.pathnet_hidden
        s = np.broadcast_to(np.asarray(s), (B,))
        y = ad.as_tensor(y_s)
        cond = ad.tanh(self.cond(ad.concat([x, _embed(s, self.cfg.step_embed)], axis=1)))  # (B, h)
        cond_seq = cond.reshape(B, 1, h) + np.zeros((1, T, h))
        time = Tensor(np.broadcast_to(self._time, (B, T, 8)))
        seq = ad.concat([y, time, cond_seq], axis=2)
        f = self.fwd.run(seq)
        b = self.bwd.run(seq, reverse=True)
        hs = ad.concat([f, b, y, cond_seq], axis=2)
        return self.out(hs.reshape(B * T, 3 * h + 2)).reshape(B, T, 2)


_PRIOR = {"mlp": PriorNetMLP, "recurrent": PriorNetRecurrent}
_PATH = {"mlp": PathNetMLP, "recurrent": PathNetRecurrent}


class ModelBundle:
    """All parameters, sub-networks and noise schedules of one model.

    ``kind == "idm"`` builds Encoder, EndNet, PriorNet and PathNet with a long
    goal chain and a short trajectory chain. ``kind == "baseline"`` builds only
    Encoder and PathNet over a single long chain on the full trajectory.
    """

    def __init__(self, cfg: NetworkConfig | None = None):
        cfg = cfg or NetworkConfig()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.params = ParamSet()
        self.encoder = Encoder(self.params, cfg, rng)
        if cfg.kind == "idm":
            self.endnet = EndNet(self.params, cfg, rng)
            self.priornet = _PRIOR[cfg.priornet_backbone](self.params, cfg, rng)
            self.pathnet = _PATH[cfg.pathnet_backbone](self.params, cfg, rng)
            self.goal_sched = make_linear_schedule(cfg.goal_steps, cfg.goal_beta_start, cfg.goal_beta_end)
            self.traj_sched = (make_linear_schedule(cfg.traj_steps, cfg.traj_beta_start, cfg.traj_beta_end)
                               if cfg.traj_steps > 0 else None)
        else:
            self.endnet = None
            self.priornet = None
            self.pathnet = _PATH[cfg.pathnet_backbone](self.params, cfg, rng)
            self.goal_sched = None
            self.traj_sched = make_linear_schedule(cfg.base_steps, cfg.goal_beta_start, cfg.goal_beta_end)

    @property
    def kind(self) -> str:
        return self.cfg.kind

    # normalization -------------------------------------------------------
    def normalize_inputs(self, histories: np.ndarray, neighbors: Sequence[np.ndarray]):
        """Shift to the last observed point and scale. Returns (hist, nbrs, origin)."""
        histories = np.asarray(histories, dtype=np.float64)
        if histories.ndim != 3 or histories.shape[1] < 1:
            raise ValueError("empty history")
        if histories.shape[1] != self.cfg.t_p:
            raise ValueError(f"history length {histories.shape[1]} != T_P={self.cfg.t_p}")
        origin = histories[:, -1, :].copy()
        sc = self.cfg.coord_scale
        hist = (histories - origin[:, None, :]) / sc
        nbrs = []
        for i, n in enumerate(neighbors):
            n = np.asarray(n, dtype=np.float64).reshape(-1, self.cfg.t_p, 2)
            nbrs.append((n - origin[i]) / sc)
        return hist, nbrs, origin

    def normalize_future(self, futures: np.ndarray, origin: np.ndarray) -> np.ndarray:
        return (np.asarray(futures, dtype=np.float64) - origin[:, None, :]) / self.cfg.coord_scale

    def denormalize(self, rel: np.ndarray, origin: np.ndarray) -> np.ndarray:
        return rel * self.cfg.coord_scale + origin.reshape(origin.shape[0], *([1] * (rel.ndim - 2)), 2)

    def encode_batch(self, histories: np.ndarray, neighbors: Sequence[np.ndarray]) -> tuple[Tensor, np.ndarray]:
        hist, nbrs, origin = self.normalize_inputs(histories, neighbors)
        return self.encoder(hist, nbrs), origin

    # checkpoint helpers -----------------------------------------------------
    def meta(self) -> dict[str, str]:
        return {"format": "idm-model", **self.cfg.to_text()}

    @classmethod
    def from_state(cls, tensors: dict[str, np.ndarray], meta: dict[str, str]) -> "ModelBundle":
        model = cls(NetworkConfig.from_text(meta))
        model.params.load_state({k: v for k, v in tensors.items() if k in model.params})
        return model


# single-sample convenience wrappers ------------------------------------------

def encode(history: np.ndarray, neighbors: Sequence[np.ndarray], model: ModelBundle) -> np.ndarray:
    """Context vector (D,) for one agent given raw scene-unit tracks."""
    history = np.asarray(history, dtype=np.float64)
    if history.size == 0:
        raise ValueError("empty history")
    nb = np.asarray(neighbors, dtype=np.float64).reshape(-1, model.cfg.t_p, 2) if len(neighbors) else np.zeros((0, model.cfg.t_p, 2))
    with ad.no_grad():
        x, _ = model.encode_batch(history[None], [nb])
    return x.data[0]


def _single(model: ModelBundle, net, k: int, steps: int, *args) -> np.ndarray:
    if not 1 <= k <= steps:
        raise IndexError(f"step {k} out of range [1, {steps}]")
    with ad.no_grad():
        return net(*args).data[0]


def endnet_eval(c_k: np.ndarray, x: np.ndarray, k: int, model: ModelBundle) -> np.ndarray:
    return _single(model, lambda: model.endnet(np.asarray(c_k, float)[None], Tensor(np.asarray(x)[None]), k),
                   k, model.cfg.goal_steps)


def priornet_eval(x: np.ndarray, goal: np.ndarray, model: ModelBundle) -> np.ndarray:
    goal = np.asarray(goal, dtype=np.float64)
    if not np.isfinite(goal).all():
        raise ValueError("goal must be finite")
    with ad.no_grad():
        return model.priornet(Tensor(np.asarray(x)[None]), goal[None]).data[0]


def pathnet_eval(y_s: np.ndarray, x: np.ndarray, s: int, model: ModelBundle) -> np.ndarray:
    return _single(model, lambda: model.pathnet(np.asarray(y_s, float)[None], Tensor(np.asarray(x)[None]), s),
                   s, model.traj_sched.steps)
