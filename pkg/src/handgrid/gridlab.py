"""Grid enumeration, fixed goal sequences, per-cell train/eval jobs and aggregation."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from handgrid import task as task_mod
from handgrid.manifest import config_hash, model_hash
from handgrid.physics import PhysicsConfig
from handgrid.trainer import TrainConfig, evaluate_policy, save_checkpoint, train

THRESHOLDS = (1, 10, 20, 30)
GOAL_STREAM = 0x601A1  # keeps evaluation goals independent of training seeds
COORD_DECIMALS = 12


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    spacing: float

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be > 0")
        for lo, hi, axis in ((self.x_min, self.x_max, "x"), (self.y_min, self.y_max, "y")):
            if hi < lo:
                raise ValueError(f"grid {axis} range is empty")
            steps = (hi - lo) / self.spacing
            if abs(steps - round(steps)) > 1e-9:
                raise ValueError(f"grid {axis} range {hi - lo:g} is not a multiple of spacing {self.spacing:g}")

    @property
    def n_cols(self):
        return int(round((self.x_max - self.x_min) / self.spacing)) + 1

    @property
    def n_rows(self):
        return int(round((self.y_max - self.y_min) / self.spacing)) + 1

    @classmethod
    def parse(cls, text):
        """``"full"`` or ``"x_min:x_max:y_min:y_max:spacing"`` in meters."""
        if text.strip().lower() == "full":
            return FULL_GRID
        parts = text.split(":")
        if len(parts) != 5:
            raise ValueError(f"grid '{text}' must be 'full' or x_min:x_max:y_min:y_max:spacing")
        return cls(*(float(p) for p in parts))


FULL_GRID = GridSpec(-0.10, 0.14, -0.14, 0.18, 0.02)


@dataclass(frozen=True)
class GridCell:
    index: tuple
    xy: tuple

    @property
    def column(self):
        return self.index[0]

    @property
    def row(self):
        return self.index[1]


def make_grid(spec):
    """Cells in row-major order (row = y index), both endpoints included."""
    cells = []
    for row in range(spec.n_rows):
        for col in range(spec.n_cols):
            x = round(spec.x_min + col * spec.spacing, COORD_DECIMALS)
            y = round(spec.y_min + row * spec.spacing, COORD_DECIMALS)
            cells.append(GridCell((col, row), (x + 0.0, y + 0.0)))
    return cells


def generate_goal_sequence(seed, n):
    """``n`` goal orientations from a dedicated rng; identical for every hand."""
    if n <= 0:
        raise ValueError("goal sequence length must be positive")
    rng = np.random.default_rng([GOAL_STREAM, int(seed)])
    return np.array([task_mod.sample_goal_orientation(rng) for _ in range(n)])


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 100
    episode_steps: int = 600
    goal_seed: int = 0
    goals_per_episode: int = 64

    def __post_init__(self):
        if self.n_episodes < 1 or self.episode_steps < 1 or self.goals_per_episode < 1:
            raise ValueError("n_episodes, episode_steps and goals_per_episode must be positive")

    @property
    def sequence_length(self):
        return self.n_episodes * (self.goals_per_episode + 1)


@dataclass(frozen=True)
class SweepConfig:
    task: task_mod.TaskConfig = field(default_factory=task_mod.TaskConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def sweep_config_hash(model, cfg):
    return config_hash({"hand": model_hash(model), "sweep": cfg})


@dataclass(frozen=True)
class CellResult:
    hand: str
    cell: GridCell
    seed: int
    counts: tuple
    fell: tuple = ()
    curve: tuple = ()
    best_epoch: int | None = None

    @property
    def mean_consecutive_successes(self):
        return float(np.mean(self.counts)) if self.counts else 0.0

    @property
    def key(self):
        return (self.cell.column, self.cell.row, self.seed)


def _cell_task(cfg, cell):
    return dataclasses.replace(cfg.task, cell_xy=tuple(cell.xy))


def run_cell(model, cell, seed, cfg, trainer=train, evaluator=evaluate_policy, checkpoint_path=None, chash=None):
    """Train one policy at ``cell`` and evaluate its best checkpoint on the fixed goal sequence."""
    task_cfg = _cell_task(cfg, cell)
    train_cfg = dataclasses.replace(cfg.train, seed=int(seed))
    trained = trainer(model, task_cfg, cfg.physics, train_cfg)
    best = trained.best
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, best.params, train_cfg, chash, {"hand": model.name, "cell": list(cell.xy)})
    goals = generate_goal_sequence(cfg.eval.goal_seed, cfg.eval.sequence_length)
    episodes = evaluator(
        best.params,
        model,
        task_cfg,
        goals,
        cfg.eval.n_episodes,
        cfg.eval.episode_steps,
        physics_cfg=cfg.physics,
        goals_per_episode=cfg.eval.goals_per_episode,
    )
    return CellResult(
        hand=model.name,
        cell=cell,
        seed=int(seed),
        counts=tuple(int(e.consecutive_successes) for e in episodes),
        fell=tuple(bool(e.fell) for e in episodes),
        curve=tuple((int(e), float(r), float(s)) for e, r, s in trained.curve),
        best_epoch=best.epoch,
    )


# -- job files ----------------------------------------------------------------


def job_stem(hand, cell, seed, chash):
    return f"{hand}_c{cell.column}_r{cell.row}_s{seed}_{chash[:12]}"


def _atomic_write_json(path, doc):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _result_doc(res, chash):
    return {
        "status": "ok",
        "config_hash": chash,
        "hand": res.hand,
        "column": res.cell.column,
        "row": res.cell.row,
        "x": res.cell.xy[0],
        "y": res.cell.xy[1],
        "seed": res.seed,
        "counts": list(res.counts),
        "fell": list(res.fell),
        "curve": [list(c) for c in res.curve],
        "best_epoch": res.best_epoch,
    }


def result_from_doc(doc):
    cell = GridCell((int(doc["column"]), int(doc["row"])), (float(doc["x"]), float(doc["y"])))
    return CellResult(
        hand=doc["hand"],
        cell=cell,
        seed=int(doc["seed"]),
        counts=tuple(doc["counts"]),
        fell=tuple(doc["fell"]),
        curve=tuple((int(c[0]), float(c[1]), float(c[2])) for c in doc["curve"]),
        best_epoch=doc["best_epoch"],
    )


def _job(args):
    model, cell, seed, cfg, trainer, evaluator, out_dir, chash = args
    stem = job_stem(model.name, cell, seed, chash)
    try:
        ckpt = None if out_dir is None else os.path.join(out_dir, "checkpoints", stem + ".json")
        res = run_cell(model, cell, seed, cfg, trainer, evaluator, ckpt, chash)
        doc = _result_doc(res, chash)
    except Exception as exc:  # recorded per cell; the sweep continues
        doc = {
            "status": "failed",
            "config_hash": chash,
            "hand": model.name,
            "column": cell.column,
            "row": cell.row,
            "x": cell.xy[0],
            "y": cell.xy[1],
            "seed": int(seed),
            "error": f"{type(exc).__name__}: {exc}",
            "traceback": traceback.format_exc(),
        }
    if out_dir is not None:
        _atomic_write_json(os.path.join(out_dir, "jobs", stem + ".json"), doc)
    return doc


@dataclass
class GridResult:
    hand: str
    spec: GridSpec
    seeds: tuple
    results: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def ordered(self):
        return [self.results[k] for k in sorted(self.results, key=lambda k: (k[1], k[0], k[2]))]

    def cell_means(self):
        return seed_average(self.results.values())


def _load_done(path, chash):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, ValueError):
        return None
    if doc.get("status") != "ok" or doc.get("config_hash") != chash:
        return None
    return doc


def run_grid(
    model,
    spec,
    seeds,
    cfg,
    worker_count=1,
    out_dir=None,
    trainer=train,
    evaluator=evaluate_policy,
    cells=None,
    on_job=None,
):
    """Run every (cell, seed) job, skipping ones already finished under ``out_dir``.

    Job results are keyed by (column, row, seed) so the outcome does not depend
    on worker count or completion order. ``on_job(doc)`` is called as each
    newly run job finishes.
    """
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    cells = make_grid(spec) if cells is None else cells
    chash = sweep_config_hash(model, cfg)
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "jobs"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)

    docs, pending = {}, []
    for cell in cells:
        for seed in seeds:
            key = (cell.column, cell.row, seed)
            if out_dir is not None:
                done = _load_done(os.path.join(out_dir, "jobs", job_stem(model.name, cell, seed, chash) + ".json"), chash)
                if done is not None:
                    docs[key] = done
                    continue
            pending.append((model, cell, seed, cfg, trainer, evaluator, out_dir, chash))

    if worker_count > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=worker_count) as pool:
            for doc in pool.map(_job, pending):
                docs[(doc["column"], doc["row"], doc["seed"])] = doc
                if on_job is not None:
                    on_job(doc)
    else:
        for args in pending:
            doc = _job(args)
            docs[(doc["column"], doc["row"], doc["seed"])] = doc
            if on_job is not None:
                on_job(doc)

    out = GridResult(model.name, spec, seeds)
    for key in sorted(docs):
        doc = json.loads(json.dumps(docs[key]))  # same float round-trip as a resumed run
        if doc["status"] == "ok":
            out.results[key] = result_from_doc(doc)
        else:
            out.failures[key] = doc["error"]
    return out


# -- aggregation ----------------------------------------------------------------


@dataclass(frozen=True)
class GridSummary:
    max_s: float
    sum_s: float
    count_ge: dict
    n_cells: int


def seed_average(results):
    """Map (column, row) -> mean over seeds of each seed's mean consecutive successes."""
    per_cell = {}
    for r in results:
        per_cell.setdefault(r.cell.index, []).append((r.seed, r.mean_consecutive_successes))
    return {k: float(np.mean([m for _, m in sorted(v)])) for k, v in sorted(per_cell.items())}


def aggregate(means, thresholds=THRESHOLDS, decimals=2):
    """Max, sum and threshold counts over seed-averaged cell means (absent cells excluded)."""
    values = list(means.values()) if isinstance(means, dict) else list(means)
    values = [float(v) for v in values if v is not None and not math.isnan(v)]
    if not values:
        raise ValueError("no cell results to aggregate")
    return GridSummary(
        max_s=round(max(values), decimals),
        sum_s=round(math.fsum(values), decimals),
        count_ge={t: sum(v >= t for v in values) for t in thresholds},
        n_cells=len(values),
    )


def heatmap_matrix(means, spec):
    """(rows, columns) matrix of seed-averaged means; cells without results are NaN."""
    m = np.full((spec.n_rows, spec.n_cols), np.nan)
    for (col, row), v in means.items():
        m[row, col] = v
    return m
