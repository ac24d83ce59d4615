"""Synthetic multimodal scenarios and trajectory CSV ingestion.

Raw samples stay in scene units; normalization happens inside the model.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

T_P = 8
T_Q = 12

CSV_COLUMNS = ("scene_id", "agent_id", "t", "x", "y")


class DataError(ValueError):
    pass


@dataclass
class TrajectorySample:
    scene_id: str
    agent_id: str
    history: np.ndarray                       # (T_P, 2)
    future: np.ndarray                        # (T_Q, 2)
    neighbors: list[np.ndarray] = field(default_factory=list)  # each (T_P, 2)
    t0: int = 0                               # frame index of history[0]
    dt: int = 1

    def __post_init__(self):
        self.history = np.asarray(self.history, dtype=np.float64)
        self.future = np.asarray(self.future, dtype=np.float64)
        self.neighbors = [np.asarray(n, dtype=np.float64) for n in self.neighbors]
        if self.history.ndim != 2 or self.history.shape[1] != 2 or len(self.history) == 0:
            raise DataError(f"{self.key}: history must be (T_P, 2)")
        if self.future.ndim != 2 or self.future.shape[1] != 2:
            raise DataError(f"{self.key}: future must be (T_Q, 2)")
        for n in self.neighbors:
            if n.shape != self.history.shape:
                raise DataError(f"{self.key}: neighbor track shape {n.shape} != {self.history.shape}")
        if not (np.isfinite(self.history).all() and np.isfinite(self.future).all()):
            raise DataError(f"{self.key}: non-finite positions")

    @property
    def key(self) -> tuple[str, str]:
        return (str(self.scene_id), str(self.agent_id))


@dataclass
class Batch:
    histories: np.ndarray          # (B, T_P, 2)
    futures: np.ndarray            # (B, T_Q, 2)
    neighbors: list[np.ndarray]    # B arrays of (N_i, T_P, 2)

    def __len__(self) -> int:
        return len(self.histories)


def collate(samples: Sequence[TrajectorySample]) -> Batch:
    if not samples:
        raise DataError("empty batch")
    t_p, t_q = samples[0].history.shape[0], samples[0].future.shape[0]
    for s in samples:
        if s.history.shape[0] != t_p or s.future.shape[0] != t_q:
            raise DataError(f"{s.key}: inconsistent T_P/T_Q in batch")
    return Batch(
        np.stack([s.history for s in samples]),
        np.stack([s.future for s in samples]),
        [np.stack(s.neighbors) if s.neighbors else np.zeros((0, t_p, 2)) for s in samples],
    )


# synthetic scenarios ---------------------------------------------------------

CROSSROAD_MODES = ("left", "straight", "right")
AVOIDANCE_MODES = ("left", "right")


@dataclass
class ScenarioSpec:
    scenario: str = "crossroad"
    modes: tuple[str, ...] = CROSSROAD_MODES
    mode_probs: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    sigma: float = 0.05
    speed_range: tuple[float, float] = (0.16, 0.24)
    turn_radius: float = 1.0
    detour_amplitude: float = 0.5
    neighbor_count: int = 2
    n_samples: int = 1000
    seed: int = 0
    t_p: int = T_P
    t_q: int = T_Q
    scene_extent: float = 10.0

    def validate(self) -> None:
        known = CROSSROAD_MODES if self.scenario == "crossroad" else AVOIDANCE_MODES
        if self.scenario not in ("crossroad", "avoidance"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not self.modes or any(m not in known for m in self.modes):
            raise ValueError(f"modes must be drawn from {known}")
        if len(self.mode_probs) != len(self.modes):
            raise ValueError("mode_probs must match modes")
        if any(p < 0 for p in self.mode_probs) or abs(sum(self.mode_probs) - 1.0) > 1e-9:
            raise ValueError("mode probabilities must be nonnegative and sum to 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        lo, hi = self.speed_range
        if not (0 < lo <= hi):
            raise ValueError("invalid speed range")
        if self.n_samples < 1 or self.neighbor_count < 0:
            raise ValueError("n_samples must be >= 1 and neighbor_count >= 0")
        if self.t_p < 2 or self.t_q < 1:
            raise ValueError("need t_p >= 2 and t_q >= 1")


@dataclass
class Dataset:
    samples: list[TrajectorySample]
    mode_labels: dict[tuple[str, str], str] = field(default_factory=dict)
    spec: ScenarioSpec | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def canonical_path(mode: str, speed: float, t_q: int, spec: ScenarioSpec) -> np.ndarray:
    """Noise-free future (T_Q, 2) relative to the last observed point, heading +x."""
    s = speed * np.arange(1, t_q + 1)
    if spec.scenario == "avoidance":
        length = speed * t_q
        side = 1.0 if mode == "left" else -1.0
        return np.stack([s, side * spec.detour_amplitude * np.sin(np.pi * s / length)], axis=1)
    if mode == "straight":
        return np.stack([s, np.zeros_like(s)], axis=1)
    r = spec.turn_radius
    side = 1.0 if mode == "left" else -1.0
    arc = 0.5 * np.pi * r
    on_arc = s <= arc
    theta = np.where(on_arc, s / r, 0.5 * np.pi)
    x = np.where(on_arc, r * np.sin(theta), r)
    y = np.where(on_arc, r * (1.0 - np.cos(theta)), r + (s - arc))
    return np.stack([x, side * y], axis=1)


def _reflect(v: np.ndarray, bound: float) -> np.ndarray:
    if bound <= 0:
        return np.zeros_like(v)
    period = 4.0 * bound
    u = np.mod(v + bound, period)
    return np.where(u <= 2 * bound, u, period - u) - bound


def smooth_jitter(rng: np.random.Generator, t_q: int, sigma: float) -> np.ndarray:
    """2-D random walk with per-step std ``sigma``, reflected into +-2*sigma*sqrt(T_Q)."""
    if sigma == 0:
        return np.zeros((t_q, 2))
    bound = 2.0 * sigma * math.sqrt(t_q)
    w = np.zeros(2)
    out = np.empty((t_q, 2))
    for t in range(t_q):
        w = _reflect(w + sigma * rng.standard_normal(2), bound)
        out[t] = w
    return out


def mode_endpoints(sample: TrajectorySample, spec: ScenarioSpec) -> np.ndarray:
    """Canonical endpoints (M, 2) of every mode in ``spec``, in scene units, for one sample."""
    speed = float(np.linalg.norm(sample.history[-1] - sample.history[-2]))
    t_q = sample.future.shape[0]
    return np.stack([canonical_path(m, speed, t_q, spec)[-1] for m in spec.modes]) + sample.history[-1]



def inter_mode_distance(spec: ScenarioSpec) -> float:
    """Smallest distance between two mode endpoints at the mid-range speed."""
    speed = 0.5 * (spec.speed_range[0] + spec.speed_range[1])
    ends = np.stack([canonical_path(m, speed, spec.t_q, spec)[-1] for m in spec.modes])
    if len(ends) < 2:
        raise ValueError("need at least two modes")
    d = np.sqrt(((ends[:, None] - ends[None]) ** 2).sum(-1))
    return float(d[np.triu_indices(len(ends), 1)].min())

def _generate(spec: ScenarioSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    samples, labels = [], {}
    width = len(str(spec.n_samples - 1))
    for i in range(spec.n_samples):
        mode = spec.modes[rng.choice(len(spec.modes), p=np.asarray(spec.mode_probs))]
        speed = rng.uniform(*spec.speed_range)
        origin = rng.uniform(-spec.scene_extent, spec.scene_extent, size=2)
        hist = origin + np.stack([speed * np.arange(-(spec.t_p - 1), 1), np.zeros(spec.t_p)], axis=1)
        future = origin + canonical_path(mode, speed, spec.t_q, spec) + smooth_jitter(rng, spec.t_q, spec.sigma)
        neighbors = []
        if spec.scenario == "avoidance":
            obstacle = origin + np.array([0.5 * speed * spec.t_q, 0.0])
            neighbors.append(np.tile(obstacle, (spec.t_p, 1)))
        for _ in range(spec.neighbor_count):
            start = origin + rng.uniform(-3.0, 3.0, size=2)
            vel = rng.uniform(-0.3, 0.3, size=2)
            neighbors.append(start + vel * np.arange(spec.t_p)[:, None])
        sid = f"s{i:0{width}d}"
        samples.append(TrajectorySample(sid, "0", hist, future, neighbors, t0=0, dt=1))
        labels[(sid, "0")] = mode
    return Dataset(samples, labels, spec)


def generate_crossroad(spec: ScenarioSpec) -> Dataset:
    """Three-way intersection: straight approach, then turn left, go straight or turn right."""
    if spec.scenario != "crossroad":
        raise ValueError("spec.scenario must be 'crossroad'")
    return _generate(spec)


def generate_avoidance(spec: ScenarioSpec) -> Dataset:
    """Shared goal behind a static obstacle, passed on the left or the right."""
    if spec.scenario != "avoidance":
        raise ValueError("spec.scenario must be 'avoidance'")
    return _generate(spec)


def generate(spec: ScenarioSpec) -> Dataset:
    return generate_crossroad(spec) if spec.scenario == "crossroad" else generate_avoidance(spec)


# CSV I/O ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def dataset_rows(samples: Iterable[TrajectorySample]) -> list[tuple]:
    """Flatten samples into (scene_id, agent_id, t, x, y) rows, one track per agent."""
    tracks: dict[tuple[str, str], dict[int, tuple[float, float]]] = defaultdict(dict)
    for s in samples:
        frames = s.t0 + s.dt * np.arange(len(s.history) + len(s.future))
        full = np.concatenate([s.history, s.future])
        for f, p in zip(frames, full):
            tracks[(s.scene_id, s.agent_id)][int(f)] = (p[0], p[1])
        for j, n in enumerate(s.neighbors):
            nid = f"{s.agent_id}.n{j}" if s.agent_id != "0" else str(j + 1)
            for f, p in zip(frames[: len(n)], n):
                tracks[(s.scene_id, nid)].setdefault(int(f), (p[0], p[1]))
    rows = []
    for (scene, agent) in sorted(tracks, key=lambda k: (k[0], _agent_sort_key(k[1]))):
        for f in sorted(tracks[(scene, agent)]):
            x, y = tracks[(scene, agent)][f]
            rows.append((scene, agent, f, x, y))
    return rows


def _agent_sort_key(a: str):
    try:
        return (0, int(a), "")
    except ValueError:
        return (1, 0, a)


def write_trajectory_csv(samples: Iterable[TrajectorySample], path) -> int:
    rows = dataset_rows(samples)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for scene, agent, f, x, y in rows:
            w.writerow([scene, agent, f, _fmt(x), _fmt(y)])
    return len(rows)


def write_mode_sidecar(labels: dict[tuple[str, str], str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scene_id", "agent_id", "mode_label"))
        for (scene, agent) in sorted(labels):
            w.writerow([scene, agent, labels[(scene, agent)]])


def read_mode_sidecar(path) -> dict[tuple[str, str], str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(r["scene_id"], r["agent_id"]): r["mode_label"] for r in csv.DictReader(fh)}


def read_track_rows(path) -> dict[tuple[str, str], list[tuple[int, float, float]]]:
    """Parse a trajectory CSV into per-(scene, agent) tracks, validating every row."""
    tracks: dict[tuple[str, str], list[tuple[int, float, float]]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        col = {c: header.index(c) for c in CSV_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                scene, agent = row[col["scene_id"]].strip(), row[col["agent_id"]].strip()
                t = float(row[col["t"]])
                x, y = float(row[col["x"]]), float(row[col["y"]])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: malformed row ({exc})") from None
            if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(t)) or t != int(t):
                raise DataError(f"{path}: line {lineno}: non-finite or non-integer value")
            track = tracks[(scene, agent)]
            if track and int(t) <= track[-1][0]:
                raise DataError(f"{path}: line {lineno}: non-monotone t for agent {agent} in scene {scene}")
            track.append((int(t), x, y))
    return tracks


def _frame_step(tracks) -> int:
    diffs = [b[0] - a[0] for tr in tracks.values() for a, b in zip(tr, tr[1:])]
    if not diffs:
        return 1
    vals, counts = np.unique(diffs, return_counts=True)
    return int(vals[np.argmax(counts)])


def load_trajectory_csv(path, t_p: int = T_P, t_q: int = T_Q, stride: int = 1) -> Dataset:
    """Sliding windows of length T_P+T_Q over every contiguous agent track.

    Neighbors of a window are the other agents of the same scene observed at
    every history frame of that window, ordered by agent id.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    tracks = read_track_rows(path)
    dt = _frame_step(tracks)
    # frame -> position lookup per agent, grouped by scene
    by_scene: dict[str, dict[str, dict[int, tuple[float, float]]]] = defaultdict(dict)
    for (scene, agent), tr in tracks.items():
        by_scene[scene][agent] = {f: (x, y) for f, x, y in tr}
    window = t_p + t_q
    samples = []
    for (scene, agent) in sorted(tracks, key=lambda k: (k[0], _agent_sort_key(k[1]))):
        tr = tracks[(scene, agent)]
        for seg in _contiguous(tr, dt):
            for start in range(0, len(seg) - window + 1, stride):
                win = seg[start:start + window]
                pos = np.array([(x, y) for _, x, y in win])
                hist_frames = [f for f, _, _ in win[:t_p]]
                neighbors = []
                for other in sorted(by_scene[scene], key=_agent_sort_key):
                    if other == agent:
                        continue
                    lookup = by_scene[scene][other]
                    if all(f in lookup for f in hist_frames):
                        neighbors.append(np.array([lookup[f] for f in hist_frames]))
                samples.append(TrajectorySample(scene, agent, pos[:t_p], pos[t_p:], neighbors,
                                                t0=win[0][0], dt=dt))
    if not samples:
        raise DataError(f"{path}: no track long enough for T_P+T_Q={window}")
    return Dataset(samples)


def _contiguous(track, dt: int):
    seg = [track[0]]
    for prev, cur in zip(track, track[1:]):
        if cur[0] - prev[0] == dt:
            seg.append(cur)
        else:
            yield seg
            seg = [cur]
    yield seg


def load_eth_txt(path, scene_id: str | None = None) -> list[tuple]:
    """Read a whitespace/tab separated ``frame ped x y`` file (ETH/UCY layout) as CSV rows."""
    scene = scene_id or Path(path).stem
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 4:
                raise DataError(f"{path}: line {lineno}: expected 4 columns")
            try:
                frame, ped, x, y = float(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: malformed row") from None
            rows.append((scene, str(int(ped)), int(frame), x, y))
    rows.sort(key=lambda r: (r[0], _agent_sort_key(r[1]), r[2]))
    return rows


def write_rows_csv(rows: Iterable[tuple], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for scene, agent, f, x, y in rows:
            w.writerow([scene, agent, f, _fmt(x), _fmt(y)])


def split(dataset: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(dataset))
    cut = int(round(fraction * len(dataset)))
    a = [dataset.samples[i] for i in sorted(idx[:cut])]
    b = [dataset.samples[i] for i in sorted(idx[cut:])]
    pick = lambda ss: {s.key: dataset.mode_labels[s.key] for s in ss if s.key in dataset.mode_labels}
    return Dataset(a, pick(a), dataset.spec), Dataset(b, pick(b), dataset.spec)
