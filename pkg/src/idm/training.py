"""Joint end-to-end training of encoder, EndNet, PriorNet and PathNet."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .data import Batch, Dataset, collate
from .diffusion import NoiseSchedule, forward_marginal, noise_prediction_loss
from .networks import ModelBundle, NetworkConfig
from .optim import Adam, clip_by_global_norm

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "l_goal", "l_diff", "l_prior", "l_total", "wall_ms")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-4
    lambda1: float = 1.0
    lambda2: float = 0.5
    epochs: int = 1
    seed: int = 0
    clip_norm: float = 10.0
    max_loss: float = 1e6
    keep_checkpoints: int = 2
    max_steps: int = 0          # 0 = no cap
    time_budget_s: float = 0.0  # 0 = no cap

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_text(self) -> dict[str, str]:
        return {f"train.{k}": repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_text(cls, meta: dict[str, str]) -> "TrainConfig":
        kw = {}
        for f in fields(cls):
            raw = meta.get(f"train.{f.name}")
            if raw is not None:
                kw[f.name] = int(raw) if f.type == "int" else float(raw)
        return cls(**kw)


@dataclass
class LossBreakdown:
    l_goal: float
    l_diff: float
    l_prior: float
    l_total: float
    teacher_forced: bool = True
    grad_norm: float = 0.0


def compute_prior_loss(y0, goal_true, x: Tensor, sched_traj: NoiseSchedule | None, model: ModelBundle) -> Tensor:
    """Squared distance between the PriorNet mean and sqrt(alpha_bar_S) * y_0.

    ``goal_true`` must be the ground-truth endpoint (teacher forcing). Inputs are
    batched and normalized: y0 (B, T_Q, 2), goal_true (B, 2).
    """
    ab = 1.0 if sched_traj is None else sched_traj.alpha_bar[sched_traj.steps]
    mu = model.priornet(x, np.asarray(goal_true))
    target = np.sqrt(ab) * np.asarray(y0)
    return noise_prediction_loss(target, mu)


def _sample_steps(rng: np.random.Generator, steps: int, n: int) -> np.ndarray:
    return rng.integers(1, steps + 1, size=n)


def loss_terms(batch: Batch, model: ModelBundle, cfg: TrainConfig, rng: np.random.Generator):
    """Forward pass of the composite loss. Returns (total Tensor, l_goal, l_diff, l_prior Tensors, draws)."""
    B = len(batch)
    x, origin = model.encode_batch(batch.histories, batch.neighbors)
    y0 = model.normalize_future(batch.futures, origin)
    if model.kind == "baseline":
        sched = model.traj_sched
        s = _sample_steps(rng, sched.steps, B)
        eps = rng.standard_normal(y0.shape)
        y_s = forward_marginal(y0, s, sched, eps)
        l_diff = noise_prediction_loss(eps, model.pathnet(y_s, x, s))
        zero = Tensor(0.0)
        total = cfg.lambda1 * l_diff
        return total, zero, l_diff, zero, {"s": s}

    c0 = y0[:, -1, :]
    k = _sample_steps(rng, model.goal_sched.steps, B)
    eps_goal = rng.standard_normal(c0.shape)
    c_k = forward_marginal(c0, k, model.goal_sched, eps_goal)
    l_goal = noise_prediction_loss(eps_goal, model.endnet(c_k, x, k))
    draws = {"k": k, "eps_goal": eps_goal}
    if model.traj_sched is not None:
        s = _sample_steps(rng, model.traj_sched.steps, B)
        eps_traj = rng.standard_normal(y0.shape)
        y_s = forward_marginal(y0, s, model.traj_sched, eps_traj)
        l_diff = noise_prediction_loss(eps_traj, model.pathnet(y_s, x, s))
        draws.update(s=s, eps_traj=eps_traj)
    else:
        l_diff = Tensor(0.0)
    l_prior = compute_prior_loss(y0, c0, x, model.traj_sched, model)
    total = l_goal + cfg.lambda1 * l_diff + cfg.lambda2 * l_prior
    return total, l_goal, l_diff, l_prior, draws


def training_step(batch: Batch, model: ModelBundle, opt: Adam, cfg: TrainConfig,
                  rng: np.random.Generator) -> LossBreakdown:
    """One optimizer step on the union of all parameters."""
    total, l_goal, l_diff, l_prior, _ = loss_terms(batch, model, cfg, rng)
    value = total.item()
    if not math.isfinite(value) or value > cfg.max_loss:
        raise TrainingDiverged(
            f"loss {value:.6g} (goal={l_goal.item():.6g}, diff={l_diff.item():.6g}, prior={l_prior.item():.6g})")
    grads = ad.gradient(total, model.params)
    grads, norm = clip_by_global_norm(grads, cfg.clip_norm)
    opt.step(grads)
    return LossBreakdown(l_goal.item(), l_diff.item(), l_prior.item(), value, True, norm)


# checkpoints -----------------------------------------------------------------

def save_checkpoint(path, model: ModelBundle, opt: Adam | None, cfg: TrainConfig | None,
                    epoch: int, step: int) -> None:
    tensors = dict(model.params.state())
    if opt is not None:
        tensors.update(opt.state())
    meta = dict(model.meta())
    if cfg is not None:
        meta.update(cfg.to_text())
    meta["state.epoch"] = str(epoch)
    meta["state.step"] = str(step)
    checkpoint.save(path, tensors, meta)


def load_checkpoint(path) -> tuple[ModelBundle, dict[str, np.ndarray], dict[str, str]]:
    tensors, meta = checkpoint.load(path)
    if meta.get("format") != "idm-model":
        raise checkpoint.CheckpointError(f"{path}: not a model checkpoint")
    return ModelBundle.from_state(tensors, meta), tensors, meta


def load_model(path) -> ModelBundle:
    return load_checkpoint(path)[0]


# training loop ---------------------------------------------------------------

def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train(dataset: Dataset, cfg: TrainConfig, checkpoint_dir, model: ModelBundle | None = None,
          net_cfg: NetworkConfig | None = None, resume_from=None, log_path=None) -> ModelBundle:
    """Shuffled mini-batch training, one checkpoint per epoch and a CSV loss log.

    Each epoch draws its shuffle and noise from ``default_rng([seed, epoch])``,
    so resuming from an epoch checkpoint reproduces the uninterrupted run.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    ckpt_dir = Path(checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    start_epoch, step = 0, 0
    if resume_from is not None:
        model, tensors, meta = load_checkpoint(resume_from)
        opt = Adam(model.params, lr=cfg.learning_rate)
        opt.load_state(tensors)
        start_epoch = int(meta["state.epoch"]) + 1
        step = int(meta["state.step"])
    else:
        model = model or ModelBundle(net_cfg or NetworkConfig())
        opt = Adam(model.params, lr=cfg.learning_rate)

    log_path = Path(log_path) if log_path else ckpt_dir / "train_log.csv"
    append = resume_from is not None and log_path.exists()
    fh = open(log_path, "a" if append else "w", newline="", encoding="utf-8")
    writer = csv.writer(fh, lineterminator="\n")
    if not append:
        writer.writerow(LOG_COLUMNS)
    t_start = time.perf_counter()
    n = len(dataset)
    written: list[Path] = []
    try:
        for epoch in range(start_epoch, cfg.epochs):
            rng = epoch_rng(cfg.seed, epoch)
            order = rng.permutation(n)
            stop = False
            for lo in range(0, n, cfg.batch_size):
                batch = collate([dataset.samples[i] for i in order[lo:lo + cfg.batch_size]])
                t0 = time.perf_counter()
                lb = training_step(batch, model, opt, cfg, rng)
                step += 1
                wall = (time.perf_counter() - t0) * 1e3
                writer.writerow([step, epoch, repr(lb.l_goal), repr(lb.l_diff), repr(lb.l_prior),
                                 repr(lb.l_total), f"{wall:.3f}"])
                if cfg.max_steps and step >= cfg.max_steps:
                    stop = True
                    break
            path = ckpt_dir / f"epoch_{epoch:05d}.ckpt"
            save_checkpoint(path, model, opt, cfg, epoch, step)
            written.append(path)
            while cfg.keep_checkpoints > 0 and len(written) > cfg.keep_checkpoints:
                written.pop(0).unlink(missing_ok=True)
            fh.flush()
            log.info("epoch %d step %d l_total %.5f", epoch, step, lb.l_total)
            if stop or (cfg.time_budget_s and time.perf_counter() - t_start > cfg.time_budget_s):
                break
    finally:
        fh.close()
    return model


def read_train_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (float(v) if k not in ("step", "epoch") else int(v)) for k, v in r.items()}
                for r in csv.DictReader(fh)]
