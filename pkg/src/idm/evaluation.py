"""Best-of-N displacement metrics, mode coverage, efficiency and density grids."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

N_SWEEP = (4, 8, 12, 16, 20)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    return p, t


def ade(pred, truth) -> float:
    """Mean over timesteps of the Euclidean point error."""
    p, t = _pair(pred, truth)
    return float(np.mean(np.sqrt(np.sum((p - t) ** 2, axis=-1))))


def fde(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.sum((p[-1] - t[-1]) ** 2)))


def _trajs(preds) -> np.ndarray:
    return np.asarray(getattr(preds, "trajectories", preds), dtype=np.float64)


def per_sample_errors(preds, truth) -> tuple[np.ndarray, np.ndarray]:
    """ADE and FDE of every sample, shape (count,) each."""
    trajs = _trajs(preds)
    truth = np.asarray(truth, dtype=np.float64)
    if trajs.shape[1:] != truth.shape:
        raise ValueError(f"length mismatch: {trajs.shape[1:]} vs {truth.shape}")
    d = np.sqrt(np.sum((trajs - truth) ** 2, axis=-1))
    return d.mean(axis=1), d[:, -1]


def best_of_n(preds, truth, n: int) -> tuple[float, float]:
    """(minADE, minFDE) over the first ``n`` samples, each minimized independently."""
    trajs = _trajs(preds)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > len(trajs):
        raise ValueError(f"n={n} exceeds the {len(trajs)} available samples")
    a, f = per_sample_errors(trajs[:n], truth)
    return float(a.min()), float(f.min())


def mode_recall(preds, mode_endpoints, radius: float) -> float:
    """Fraction of true modes with at least one predicted endpoint within ``radius``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    modes = np.asarray(mode_endpoints, dtype=np.float64).reshape(-1, 2)
    if len(modes) == 0:
        raise ValueError("no modes given")
    ends = _trajs(preds)[:, -1, :]
    d = np.sqrt(((modes[:, None, :] - ends[None, :, :]) ** 2).sum(-1))
    return float(np.mean(d.min(axis=1) <= radius))


def density_grid(trajectories, bounds, resolution: int) -> np.ndarray:
    """Per-timestep normalized 2-D occupancy histograms, shape (T, res, res).

    ``bounds`` is (xmin, xmax, ymin, ymax); grid[t, i, j] counts points with
    y in row i and x in column j. Points outside the bounds are clipped to the
    border cells.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    xmin, xmax, ymin, ymax = map(float, bounds)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("degenerate bounds")
    pts = np.asarray(trajectories, dtype=np.float64).reshape(-1, np.shape(trajectories)[-2], 2)
    T = pts.shape[1]
    grid = np.zeros((T, resolution, resolution))
    if len(pts) == 0:
        return grid
    col = np.clip(((pts[..., 0] - xmin) / (xmax - xmin) * resolution).astype(int), 0, resolution - 1)
    row = np.clip(((pts[..., 1] - ymin) / (ymax - ymin) * resolution).astype(int), 0, resolution - 1)
    for t in range(T):
        np.add.at(grid[t], (row[:, t], col[:, t]), 1.0)
        grid[t] /= grid[t].sum()
    return grid



def write_density_csv(grid: np.ndarray, bounds, path) -> None:
    """Long-format CSV (t, row, col, x, y, density) of a density grid; cell centers in x/y."""
    grid = np.asarray(grid, dtype=np.float64)
    T, R, C = grid.shape
    xmin, xmax, ymin, ymax = map(float, bounds)
    xs = xmin + (np.arange(C) + 0.5) * (xmax - xmin) / C
    ys = ymin + (np.arange(R) + 0.5) * (ymax - ymin) / R
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "row", "col", "x", "y", "density"])
        for t in range(T):
            for i in range(R):
                for j in range(C):
                    w.writerow([t, i, j, repr(float(xs[j])), repr(float(ys[i])), repr(float(grid[t, i, j]))])


def read_density_csv(path) -> tuple[np.ndarray, tuple[float, float, float, float]]:
    """Inverse of :func:`write_density_csv`: (grid, bounds)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty density file")
    T = max(int(r["t"]) for r in rows) + 1
    R = max(int(r["row"]) for r in rows) + 1
    C = max(int(r["col"]) for r in rows) + 1
    grid = np.zeros((T, R, C))
    for r in rows:
        grid[int(r["t"]), int(r["row"]), int(r["col"])] = float(r["density"])
    xs = sorted({float(r["x"]) for r in rows})
    ys = sorted({float(r["y"]) for r in rows})
    dx = (xs[1] - xs[0]) if len(xs) > 1 else 1.0
    dy = (ys[1] - ys[0]) if len(ys) > 1 else 1.0
    return grid, (xs[0] - dx / 2, xs[-1] + dx / 2, ys[0] - dy / 2, ys[-1] + dy / 2)

@dataclass
class MetricReport:
    min_ade: float
    min_fde: float
    n: int
    agents: int
    sweep: dict[int, tuple[float, float]] = field(default_factory=dict)
    mode_recall: float | None = None
    denoiser_calls: dict[str, int] = field(default_factory=dict)
    wall_ms_per_prediction: float | None = None

    def rows(self) -> list[dict]:
        out = []
        for n, (a, f) in sorted(self.sweep.items()):
            out.append({"n": n, "min_ade": a, "min_fde": f})
        return out

    def summary(self) -> str:
        lines = [f"agents: {self.agents}",
                 f"minADE({self.n}) = {self.min_ade:.4f}",
                 f"minFDE({self.n}) = {self.min_fde:.4f}"]
        for n, (a, f) in sorted(self.sweep.items()):
            lines.append(f"  N={n:>3}: minADE={a:.4f} minFDE={f:.4f}")
        if self.mode_recall is not None:
            lines.append(f"mode_recall = {self.mode_recall:.4f}")
        if self.denoiser_calls:
            lines.append("denoiser calls per agent: " + ", ".join(f"{k}={v}" for k, v in self.denoiser_calls.items()))
        if self.wall_ms_per_prediction is not None:
            lines.append(f"wall ms per prediction: {self.wall_ms_per_prediction:.4f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "min_ade", "min_fde"])
            for n, (a, f) in sorted(self.sweep.items()):
                w.writerow([n, repr(a), repr(f)])


def evaluate(pred_sets: Sequence, truths: Sequence[np.ndarray], n: int = 20,
             sweep: Sequence[int] = N_SWEEP, modes: Sequence[np.ndarray] | None = None,
             radius: float | None = None) -> MetricReport:
    """Average best-of-N metrics over agents, plus the N-sweep and optional mode recall."""
    if len(pred_sets) != len(truths) or not pred_sets:
        raise ValueError("need one prediction set per ground-truth track")
    avail = min(len(_trajs(p)) for p in pred_sets)
    ns = sorted({m for m in sweep if m <= avail} | {min(n, avail)})
    table = {}
    for m in ns:
        vals = np.array([best_of_n(p, t, m) for p, t in zip(pred_sets, truths)])
        table[m] = (float(vals[:, 0].mean()), float(vals[:, 1].mean()))
    top = min(n, avail)
    rec = None
    if modes is not None:
        if radius is None:
            raise ValueError("mode recall needs a radius")
        rec = float(np.mean([mode_recall(_trajs(p)[:top], m, radius) for p, m in zip(pred_sets, modes)]))
    calls = getattr(pred_sets[0], "denoiser_calls", {}) or {}
    walls = [p.wall_ns for p in pred_sets if getattr(p, "wall_ns", 0)]
    wall = (float(np.mean(walls)) / 1e6 / avail) if walls else None
    return MetricReport(table[top][0], table[top][1], top, len(pred_sets),
                        {m: table[m] for m in ns if m in sweep}, rec, dict(calls), wall)


def min_pairwise_distance(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    return float(d[np.triu_indices(len(pts), 1)].min())
