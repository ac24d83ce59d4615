"""Command-line entry point: synth, train, predict, eval, bench, density, plot, sweep.

Configuration is layered: built-in defaults < config file (``section.key =
value`` lines) < ``IDM_SEED`` environment variable < command-line flags. The
fully resolved configuration is written next to every output.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as D
from .evaluation import density_grid, evaluate, read_density_csv, write_density_csv
from .inference import PredictionSet, predict_dataset
from .networks import NetworkConfig
from .training import TrainConfig, load_model, train

log = logging.getLogger("idm")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
PRED_COLUMNS = ("scene_id", "agent_id", "sample_idx", "t", "x", "y")


class ConfigError(ValueError):
    """Bad or missing configuration; maps to exit code 2."""


# configuration ----------------------------------------------------------------

@dataclass
class PredictConfig:
    count: int = 20
    stochastic: bool = False
    chunk: int = 64


@dataclass
class EvalConfig:
    n: int = 20
    radius: float = 0.0         # 0 = inter-mode distance / 4


@dataclass
class RunConfig:
    seed: int = 0
    scenario: D.ScenarioSpec = field(default_factory=D.ScenarioSpec)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: dict = field(default_factory=dict)

    SECTIONS = ("scenario", "network", "train", "predict", "eval")

    def with_seed(self) -> "RunConfig":
        """Propagate the run seed into every seeded section."""
        self.scenario = replace(self.scenario, seed=self.seed)
        self.network = replace(self.network, seed=self.seed)
        self.train = replace(self.train, seed=self.seed)
        return self

    def to_text(self) -> str:
        lines = [f"run.seed = {self.seed}"]
        for sec in self.SECTIONS:
            obj = getattr(self, sec)
            for f in fields(obj):
                if f.name == "seed":       # carried by run.seed
                    continue
                lines.append(f"{sec}.{f.name} = {_format(getattr(obj, f.name))}")
        for k in sorted(self.paths):
            lines.append(f"paths.{k} = {self.paths[k]}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


def _format(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(type_name: str, raw: str, key: str):
    raw = raw.strip()
    t = str(type_name).replace(" ", "")
    try:
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        if t == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t.startswith("tuple[float"):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if t.startswith("tuple[str"):
            return tuple(x.strip() for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {t}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``section.key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or "." not in key:
            raise ConfigError(f"{source}: line {lineno}: expected 'section.key = value'")
        out[key] = value.strip()
    return out


def apply_settings(cfg: RunConfig, settings: dict[str, str]) -> RunConfig:
    for key, raw in settings.items():
        sec, _, name = key.partition(".")
        if sec == "run" and name == "seed":
            cfg.seed = _coerce("int", raw, key)
        elif sec == "paths":
            cfg.paths[name] = raw
        elif sec in RunConfig.SECTIONS:
            obj = getattr(cfg, sec)
            types = {f.name: f.type for f in fields(obj)}
            if name not in types or name == "seed":
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, sec, replace(obj, **{name: _coerce(types[name], raw, key)}))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return cfg


def resolve_config(config_path, overrides: dict[str, str], env=None) -> RunConfig:
    """defaults < config file < IDM_SEED < flags."""
    env = os.environ if env is None else env
    cfg = RunConfig()
    if config_path:
        p = Path(config_path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        apply_settings(cfg, parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    if env.get("IDM_SEED", "").strip():
        apply_settings(cfg, {"run.seed": env["IDM_SEED"]})
    apply_settings(cfg, overrides)
    cfg.with_seed()
    for part in (cfg.scenario, cfg.network, cfg.train):
        try:
            part.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.predict.count < 1:
        raise ConfigError("predict.count must be >= 1")
    if cfg.eval.n < 1 or cfg.eval.radius < 0:
        raise ConfigError("eval.n must be >= 1 and eval.radius >= 0")
    return cfg


def write_resolved(cfg: RunConfig, target: Path, command: str) -> Path:
    """Write the resolved config beside ``target`` (a file) or inside it (a directory)."""
    target = Path(target)
    path = target / "resolved.cfg" if target.is_dir() else target.with_name(target.name + ".resolved.cfg")
    header = f"# resolved configuration for '{command}' (defaults < file < IDM_SEED < flags)\n"
    path.write_text(header + cfg.to_text(), encoding="utf-8")
    return path


def require_path(cfg: RunConfig, key: str) -> Path:
    value = cfg.paths.get(key)
    if not value:
        raise ConfigError(f"missing required setting paths.{key}")
    return Path(value)


# prediction files ---------------------------------------------------------------

def write_predictions(path, samples, sets: list[PredictionSet]) -> int:
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRED_COLUMNS)
        for s, ps in zip(samples, sets):
            t_p = len(s.history)
            frames = s.t0 + s.dt * (t_p + np.arange(ps.trajectories.shape[1]))
            for i, traj in enumerate(ps.trajectories):
                for f, (x, y) in zip(frames, traj):
                    w.writerow([s.scene_id, s.agent_id, i, int(f), repr(float(x)), repr(float(y))])
                    rows += 1
    return rows


def read_predictions(path) -> dict[tuple[str, str, int], np.ndarray]:
    """Prediction CSV -> {(scene, agent, first future frame): (count, T_Q, 2)}.

    Rows are read in file order; a sample ends when (scene, agent, sample_idx)
    changes or the frame stops increasing, so overlapping windows of one agent
    stay apart.
    """
    out: dict[tuple[str, str, int], list[np.ndarray]] = {}
    cur_key, cur_pts, last_t = None, [], None

    def flush():
        if cur_pts:
            scene, agent, _ = cur_key
            out.setdefault((scene, agent, cur_pts[0][0]), []).append(np.array([p[1:] for p in cur_pts]))

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in PRED_COLUMNS):
            raise D.DataError(f"{path}: expected columns {PRED_COLUMNS}")
        for lineno, r in enumerate(reader, start=2):
            try:
                key = (r["scene_id"], r["agent_id"], int(r["sample_idx"]))
                t, x, y = int(r["t"]), float(r["x"]), float(r["y"])
            except (TypeError, ValueError):
                raise D.DataError(f"{path}: line {lineno}: malformed row") from None
            if key != cur_key or t <= last_t:
                flush()
                cur_key, cur_pts = key, []
            cur_pts.append((t, x, y))
            last_t = t
    flush()
    result = {}
    for k, v in out.items():
        if len({len(a) for a in v}) != 1:
            raise D.DataError(f"{path}: samples of {k} have different lengths")
        result[k] = np.stack(v)
    return result


def write_metadata(path, items: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in items.items()), encoding="utf-8")


def read_metadata(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


# SVG ----------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_frame(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<rect width="{width}" height="{height}" fill="white"/>\n')
    return head + "".join(line + "\n" for line in body) + "</svg>\n"


def _projector(bounds, width, height, pad=10):
    xmin, xmax, ymin, ymax = bounds
    sx = (width - 2 * pad) / max(xmax - xmin, 1e-12)
    sy = (height - 2 * pad) / max(ymax - ymin, 1e-12)
    s = min(sx, sy)
    return lambda x, y: (pad + (x - xmin) * s, height - pad - (y - ymin) * s)


def trajectories_svg(trajs: list[np.ndarray], width: int = 480, height: int = 480) -> str:
    """One polyline per trajectory; an empty list gives an empty canvas."""
    if not trajs:
        return _svg_frame(width, height, [])
    pts = np.concatenate([np.asarray(t).reshape(-1, 2) for t in trajs])
    lo, hi = pts.min(0), pts.max(0)
    span = np.maximum(hi - lo, 1e-6)
    proj = _projector((lo[0] - 0.05 * span[0], hi[0] + 0.05 * span[0],
                       lo[1] - 0.05 * span[1], hi[1] + 0.05 * span[1]), width, height)
    body = []
    for i, t in enumerate(trajs):
        coords = " ".join("{:.3f},{:.3f}".format(*proj(x, y)) for x, y in np.asarray(t))
        body.append(f'<polyline points="{coords}" fill="none" stroke="{_PALETTE[i % len(_PALETTE)]}" '
                    f'stroke-width="1" stroke-opacity="0.7"/>')
    return _svg_frame(width, height, body)


def density_svg(grid: np.ndarray, bounds, layers=None, width: int = 480, height: int = 480) -> str:
    """Per-timestep density layers as groups of shaded cells; ``layers`` selects timesteps."""
    T, R, C = grid.shape
    layers = list(range(T)) if layers is None else list(layers)
    for t in layers:
        if not 0 <= t < T:
            raise ValueError(f"timestep {t} out of range [0, {T})")
    proj = _projector(bounds, width, height)
    xmin, xmax, ymin, ymax = bounds
    cw, ch = (xmax - xmin) / C, (ymax - ymin) / R
    body = []
    for t in layers:
        peak = grid[t].max()
        body.append(f'<g id="t{t}">')
        for i in range(R):
            for j in range(C):
                v = grid[t, i, j]
                if v <= 0:
                    continue
                x0, y1 = proj(xmin + j * cw, ymin + i * ch)
                x1, y0 = proj(xmin + (j + 1) * cw, ymin + (i + 1) * ch)
                body.append(f'<rect x="{x0:.3f}" y="{y0:.3f}" width="{x1 - x0:.3f}" height="{y1 - y0:.3f}" '
                            f'fill="{_PALETTE[t % len(_PALETTE)]}" fill-opacity="{v / peak:.4f}"/>')
        body.append("</g>")
    return _svg_frame(width, height, body)


# commands -----------------------------------------------------------------------

def _load_dataset(path: Path, cfg: RunConfig, t_p: int, t_q: int) -> D.Dataset:
    if not path.is_file():
        raise ConfigError(f"dataset not found: {path}")
    return D.load_trajectory_csv(path, t_p, t_q)


def cmd_synth(args, cfg: RunConfig) -> int:
    out = require_path(cfg, "out")
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = D.generate(cfg.scenario)
    D.write_trajectory_csv(ds.samples, out)
    D.write_mode_sidecar(ds.mode_labels, out.with_name(out.stem + ".modes.csv"))
    write_resolved(cfg, out, "synth")
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    data_path = require_path(cfg, "train_data")
    out = require_path(cfg, "checkpoint_dir")
    ds = _load_dataset(data_path, cfg, cfg.network.t_p, cfg.network.t_q)
    out.mkdir(parents=True, exist_ok=True)
    resume = cfg.paths.get("resume") or None
    if resume and not Path(resume).is_file():
        raise ConfigError(f"paths.resume: no checkpoint at {resume}")
    write_resolved(cfg, out, "train")
    train(ds, cfg.train, out, net_cfg=cfg.network, resume_from=resume)
    print(f"checkpoints in {out}")
    return EXIT_OK


def _model(cfg: RunConfig, key: str = "checkpoint"):
    path = require_path(cfg, key)
    if not path.is_file():
        raise ConfigError(f"paths.{key}: no checkpoint at {path}")
    return load_model(path)


def cmd_predict(args, cfg: RunConfig) -> int:
    model = _model(cfg)
    ds = _load_dataset(require_path(cfg, "data"), cfg, model.cfg.t_p, model.cfg.t_q)
    out = require_path(cfg, "out")
    out.parent.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    sets = predict_dataset(model, ds.samples, cfg.predict.count, cfg.seed, cfg.predict.chunk,
                           cfg.predict.stochastic)
    wall = time.perf_counter() - t
    write_predictions(out, ds.samples, sets)
    calls = sets[0].denoiser_calls
    meta = {"kind": model.kind, "agents": len(sets), "count": cfg.predict.count,
            "K": model.cfg.goal_steps if model.kind == "idm" else 0,
            "S": model.traj_sched.steps if model.traj_sched is not None else 0,
            **{f"calls.{k}": v for k, v in calls.items()},
            "calls.total_per_agent": sum(calls.values()),
            "config_hash": cfg.digest(),
            "timing.wall_s": f"{wall:.6f}",
            "timing.network_ms_per_prediction": f"{np.mean([s.wall_ns for s in sets]) / 1e6 / cfg.predict.count:.6f}",
            "timing.inclusive_ms_per_prediction":
                f"{np.mean([s.wall_ns_inclusive for s in sets]) / 1e6 / cfg.predict.count:.6f}"}
    write_metadata(out.with_name(out.name + ".meta"), meta)
    write_resolved(cfg, out, "predict")
    print(f"wrote {len(sets)} x {cfg.predict.count} predictions to {out}")
    return EXIT_OK


def _match(preds: dict, ds: D.Dataset):
    sets, truths, samples = [], [], []
    for s in ds.samples:
        key = (s.scene_id, s.agent_id, s.t0 + s.dt * len(s.history))
        if key in preds:
            sets.append(preds[key])
            truths.append(s.future)
            samples.append(s)
    if not sets:
        raise D.DataError("no prediction matches any ground-truth window")
    return sets, truths, samples


def cmd_eval(args, cfg: RunConfig) -> int:
    preds = read_predictions(require_path(cfg, "predictions"))
    first = next(iter(preds.values()))
    ds = _load_dataset(require_path(cfg, "data"), cfg, cfg.network.t_p, first.shape[1])
    sets, truths, samples = _match(preds, ds)
    modes = radius = None
    if args.mode_recall:
        spec = cfg.scenario
        modes = [D.mode_endpoints(s, spec) for s in samples]
        radius = cfg.eval.radius or D.inter_mode_distance(spec) / 4
    rep = evaluate(sets, truths, n=cfg.eval.n, modes=modes, radius=radius)
    out = require_path(cfg, "out")
    out.mkdir(parents=True, exist_ok=True)
    rep.write_csv(out / "metrics.csv")
    (out / "summary.txt").write_text(rep.summary(), encoding="utf-8")
    write_resolved(cfg, out, "eval")
    sys.stdout.write(rep.summary())
    return EXIT_OK


BENCH_COLUMNS = ("model", "endnet_calls", "priornet_calls", "pathnet_calls", "calls_per_sample",
                 "network_ms_per_prediction", "inclusive_ms_per_prediction", "min_ade", "min_fde")


def bench_rows(models: list[tuple[str, object]], samples, count: int, seed: int) -> list[dict]:
    rows = []
    truths = [s.future for s in samples]
    for name, model in models:
        sets = predict_dataset(model, samples, count, seed)
        rep = evaluate(sets, truths, n=count)
        c = sets[0].denoiser_calls
        rows.append({"model": name, "endnet_calls": c["endnet"], "priornet_calls": c["priornet"],
                     "pathnet_calls": c["pathnet"], "calls_per_sample": sum(c.values()) // count,
                     "network_ms_per_prediction": np.mean([s.wall_ns for s in sets]) / 1e6 / count,
                     "inclusive_ms_per_prediction": np.mean([s.wall_ns_inclusive for s in sets]) / 1e6 / count,
                     "min_ade": rep.min_ade, "min_fde": rep.min_fde})
    return rows


def cmd_bench(args, cfg: RunConfig) -> int:
    idm, base = _model(cfg, "idm_checkpoint"), _model(cfg, "baseline_checkpoint")
    if idm.kind != "idm" or base.kind != "baseline":
        raise ConfigError("bench needs an IDM checkpoint and a baseline checkpoint, in that order")
    ds = _load_dataset(require_path(cfg, "data"), cfg, idm.cfg.t_p, idm.cfg.t_q)
    samples = ds.samples[: args.agents] if args.agents else ds.samples
    rows = bench_rows([("idm", idm), ("baseline", base)], samples, cfg.predict.count, cfg.seed)
    out = require_path(cfg, "out")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, BENCH_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    write_resolved(cfg, out, "bench")
    for r in rows:
        print(f"{r['model']:>9}: {r['calls_per_sample']} calls/sample, "
              f"{r['network_ms_per_prediction']:.3f} ms/prediction (network), minFDE {r['min_fde']:.4f}")
    return EXIT_OK


def cmd_density(args, cfg: RunConfig) -> int:
    preds = read_predictions(require_path(cfg, "predictions"))
    trajs = np.concatenate(list(preds.values())) if preds else np.zeros((0, 1, 2))
    if args.bounds:
        bounds = tuple(float(v) for v in args.bounds.split(","))
        if len(bounds) != 4:
            raise ConfigError("--bounds needs xmin,xmax,ymin,ymax")
    else:
        pts = trajs.reshape(-1, 2)
        bounds = (pts[:, 0].min(), pts[:, 0].max() + 1e-9, pts[:, 1].min(), pts[:, 1].max() + 1e-9)
    grid = density_grid(trajs, bounds, args.resolution)
    out = require_path(cfg, "out")
    write_density_csv(grid, bounds, out)
    write_resolved(cfg, out, "density")
    return EXIT_OK


def cmd_plot(args, cfg: RunConfig) -> int:
    out = require_path(cfg, "out")
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.density:
        grid, bounds = read_density_csv(args.density)
        layers = [int(v) for v in args.layers.split(",")] if args.layers else None
        svg = density_svg(grid, bounds, layers)
    else:
        preds = read_predictions(require_path(cfg, "predictions")) if cfg.paths.get("predictions") else {}
        keys = sorted(preds)
        if args.scene:
            keys = [k for k in keys if k[0] == args.scene]
        trajs = [t for k in keys for t in preds[k]]
        svg = trajectories_svg(trajs)
    out.write_text(svg, encoding="utf-8")
    write_resolved(cfg, out, "plot")
    return EXIT_OK


SWEEP_COLUMNS = ("K", "S", "steps", "min_ade", "min_fde", "mode_recall", "calls_per_sample")


def run_sweep(train_ds: D.Dataset, test_ds: D.Dataset, cfg: RunConfig, ks, ss, workdir: Path) -> list[dict]:
    """Train one IDM per (K, S) cell with the shared training config and score it."""
    spec = cfg.scenario
    radius = cfg.eval.radius or D.inter_mode_distance(spec) / 4
    modes = [D.mode_endpoints(s, spec) for s in test_ds.samples]
    truths = [s.future for s in test_ds.samples]
    rows = []
    for K in ks:
        for S in ss:
            net = replace(cfg.network, kind="idm", goal_steps=K, traj_steps=S)
            model = train(train_ds, cfg.train, workdir / f"K{K}_S{S}", net_cfg=net)
            sets = predict_dataset(model, test_ds.samples, cfg.predict.count, cfg.seed)
            rep = evaluate(sets, truths, n=cfg.eval.n, modes=modes, radius=radius)
            steps = sum(1 for _ in open(workdir / f"K{K}_S{S}" / "train_log.csv")) - 1
            rows.append({"K": K, "S": S, "steps": steps, "min_ade": rep.min_ade, "min_fde": rep.min_fde,
                         "mode_recall": rep.mode_recall, "calls_per_sample": K + S + 1,
                         "network_ms_per_prediction": np.mean([s.wall_ns for s in sets]) / 1e6 / cfg.predict.count})
    return rows


def sweep_trend(rows: list[dict]) -> dict[int, bool]:
    """For each S: is minFDE non-increasing as K grows?"""
    out = {}
    for S in sorted({r["S"] for r in rows}):
        col = [r["min_fde"] for r in sorted((r for r in rows if r["S"] == S), key=lambda r: r["K"])]
        out[S] = all(b <= a for a, b in zip(col, col[1:]))
    return out


def cmd_sweep(args, cfg: RunConfig) -> int:
    ks = [int(v) for v in args.ks.split(",")]
    ss = [int(v) for v in args.ss.split(",")]
    if any(k < 1 for k in ks) or any(s < 0 for s in ss):
        raise ConfigError("--ks must be >= 1 and --ss >= 0")
    train_ds = _load_dataset(require_path(cfg, "train_data"), cfg, cfg.network.t_p, cfg.network.t_q)
    test_ds = _load_dataset(require_path(cfg, "data"), cfg, cfg.network.t_p, cfg.network.t_q)
    out = require_path(cfg, "out")
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(train_ds, test_ds, cfg, ks, ss, out)
    with open(out / "grid.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    # wall-clock numbers vary run to run, so they live apart from the grid
    with open(out / "timings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "S", "network_ms_per_prediction"])
        for r in rows:
            w.writerow([r["K"], r["S"], f"{r['network_ms_per_prediction']:.6f}"])
    trend = sweep_trend(rows)
    lines = [f"K x S grid: {len(rows)} cells"]
    lines += [f"S={S}: minFDE non-increasing in K: {'yes' if ok else 'no'}" for S, ok in trend.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_resolved(cfg, out, "sweep")
    print("\n".join(lines))
    return EXIT_OK


# argument parsing -----------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file with 'section.key = value' lines")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--seed", type=int, help="run seed (data, init, training, sampling)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idm", description="Intention-aware diffusion trajectory prediction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multimodal scenario")
    _common(p)
    p.add_argument("--scenario", choices=("crossroad", "avoidance"))
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--sigma", type=float, help="path-noise scale")
    p.add_argument("--out", help="output CSV (mode sidecar and resolved config written beside it)")

    p = sub.add_parser("train", help="train an IDM or baseline model")
    _common(p)
    p.add_argument("--data", help="training trajectory CSV (paths.train_data)")
    p.add_argument("--out", help="checkpoint directory (paths.checkpoint_dir)")
    p.add_argument("--kind", choices=("idm", "baseline"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--time-budget", type=float, help="stop after the epoch that crosses this many seconds")
    p.add_argument("--goal-steps", type=int, help="K, goal-chain length")
    p.add_argument("--traj-steps", type=int, help="S, trajectory-chain length")
    p.add_argument("--base-steps", type=int, help="S_base, baseline chain length")
    p.add_argument("--pathnet", choices=("mlp", "recurrent"))
    p.add_argument("--priornet", choices=("mlp", "recurrent"))
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("predict", help="sample futures for every window of a dataset")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="trajectory CSV to predict on")
    p.add_argument("--k", type=int, help="predictions per agent")
    p.add_argument("--stochastic", action="store_true", help="add fresh noise in reverse steps")
    p.add_argument("--out", help="prediction CSV")

    p = sub.add_parser("eval", help="best-of-N metrics of a prediction file")
    _common(p)
    p.add_argument("--predictions")
    p.add_argument("--data", help="ground-truth trajectory CSV")
    p.add_argument("--n", type=int, help="N for the headline best-of-N")
    p.add_argument("--mode-recall", action="store_true",
                   help="also report mode recall using the scenario settings of the config")
    p.add_argument("--radius", type=float, help="mode recall radius (default inter-mode distance / 4)")
    p.add_argument("--out", help="report directory")

    p = sub.add_parser("bench", help="IDM vs baseline calls and wall-clock per prediction")
    _common(p)
    p.add_argument("--idm", help="IDM checkpoint")
    p.add_argument("--baseline", help="baseline checkpoint")
    p.add_argument("--data")
    p.add_argument("--k", type=int)
    p.add_argument("--agents", type=int, default=0, help="limit to the first N windows")
    p.add_argument("--out", help="comparison CSV")

    p = sub.add_parser("density", help="per-timestep density grid of a prediction file")
    _common(p)
    p.add_argument("--predictions")
    p.add_argument("--bounds", help="xmin,xmax,ymin,ymax (default: data extent)")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--out", help="density CSV")

    p = sub.add_parser("plot", help="render predictions or a density grid as SVG")
    _common(p)
    p.add_argument("--predictions")
    p.add_argument("--density", help="density CSV from the density command")
    p.add_argument("--layers", help="comma-separated timesteps to draw (density only)")
    p.add_argument("--scene", help="only draw this scene")
    p.add_argument("--out", help="SVG file")

    p = sub.add_parser("sweep", help="K x S step-count ablation grid")
    _common(p)
    p.add_argument("--train-data")
    p.add_argument("--data", help="held-out trajectory CSV")
    p.add_argument("--ks", default="10,50,100")
    p.add_argument("--ss", default="5,10,20")
    p.add_argument("--epochs", type=int, help="epochs per cell")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-steps", type=int, help="optimizer steps per cell")
    p.add_argument("--time-budget", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--out", help="output directory")
    return parser


# flag name -> config key
_FLAG_KEYS = {
    "scenario": "scenario.scenario", "n": None, "sigma": "scenario.sigma",
    "kind": "network.kind", "epochs": "train.epochs", "batch_size": "train.batch_size",
    "lr": "train.learning_rate", "lambda1": "train.lambda1", "lambda2": "train.lambda2",
    "max_steps": "train.max_steps", "time_budget": "train.time_budget_s",
    "goal_steps": "network.goal_steps", "traj_steps": "network.traj_steps", "base_steps": "network.base_steps",
    "pathnet": "network.pathnet_backbone", "priornet": "network.priornet_backbone",
    "k": "predict.count", "radius": "eval.radius",
    "checkpoint": "paths.checkpoint", "predictions": "paths.predictions", "resume": "paths.resume",
    "idm": "paths.idm_checkpoint", "baseline": "paths.baseline_checkpoint", "train_data": "paths.train_data",
    "seed": "run.seed",
}


def flag_overrides(args) -> dict[str, str]:
    ov = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        ov[key.strip()] = value.strip()
    cmd = args.command
    for name, key in _FLAG_KEYS.items():
        val = getattr(args, name, None)
        if val is None:
            continue
        if name == "n":
            key = "scenario.n_samples" if cmd == "synth" else "eval.n"
        ov[key] = str(val)
    if getattr(args, "stochastic", False):
        ov["predict.stochastic"] = "true"
    data = getattr(args, "data", None)
    if data is not None:
        ov["paths.train_data" if cmd == "train" else "paths.data"] = data
    out = getattr(args, "out", None)
    if out is not None:
        ov["paths.checkpoint_dir" if cmd == "train" else "paths.out"] = out
    return ov


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
            "bench": cmd_bench, "density": cmd_density, "plot": cmd_plot, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:        # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args.config, flag_overrides(args))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the exit-code contract covers every runtime failure
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
