import itertools
import json
import os
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handgrid.gridlab import (
    FULL_GRID,
    EvalConfig,
    GridCell,
    GridSpec,
    SweepConfig,
    aggregate,
    generate_goal_sequence,
    heatmap_matrix,
    job_stem,
    make_grid,
    run_cell,
    run_grid,
    seed_average,
    sweep_config_hash,
)
from handgrid.trainer import Checkpoint, EpisodeResult, TrainConfig, TrainResult, init_policy


def test_full_grid_cells():
    t = time.perf_counter()
    cells = make_grid(FULL_GRID)
    assert time.perf_counter() - t < 1.0
    assert (FULL_GRID.n_cols, FULL_GRID.n_rows) == (13, 17)
    assert len(cells) == 221
    xs = sorted({c.xy[0] for c in cells})
    ys = sorted({c.xy[1] for c in cells})
    assert xs[0] == -0.10 and xs[-1] == 0.14 and ys[0] == -0.14 and ys[-1] == 0.18
    assert len({c.xy for c in cells}) == 221
    assert GridCell((5, 7), (0.0, 0.0)) in cells
    # row-major
    assert [c.index for c in cells[:14]] == [(i, 0) for i in range(13)] + [(0, 1)]


def test_small_grids():
    assert [c.xy for c in make_grid(GridSpec(0, 0, 0, 0, 0.02))] == [(0.0, 0.0)]
    cells = make_grid(GridSpec(0.0, 0.04, 0.0, 0.02, 0.02))
    assert [c.xy for c in cells] == [(0.0, 0.0), (0.02, 0.0), (0.04, 0.0), (0.0, 0.02), (0.02, 0.02), (0.04, 0.02)]
    with pytest.raises(ValueError):
        GridSpec(0.0, 0.05, 0.0, 0.0, 0.02)
    with pytest.raises(ValueError):
        GridSpec(0.0, 0.0, 0.0, 0.0, 0.0)


def test_grid_parse():
    assert GridSpec.parse("full") == FULL_GRID
    assert GridSpec.parse("-0.02:0.02:0:0.02:0.02").n_cols == 3
    with pytest.raises(ValueError):
        GridSpec.parse("1:2:3")


def test_goal_sequence_deterministic():
    a = generate_goal_sequence(7, 50)
    assert a.tobytes() == generate_goal_sequence(7, 50).tobytes()
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12)
    # prefix stable under length changes
    assert generate_goal_sequence(7, 10).tobytes() == a[:10].tobytes()
    with pytest.raises(ValueError):
        generate_goal_sequence(0, 0)


def test_goal_sequences_differ_across_seeds():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s1, s2 = (int(v) for v in rng.choice(10**6, 2, replace=False))
        assert generate_goal_sequence(s1, 5).tobytes() != generate_goal_sequence(s2, 5).tobytes()


# -- stub jobs ---------------------------------------------------------------


def stub_trainer(model, task_cfg, physics_cfg, train_cfg):
    p = init_policy(3, 2, (2,), seed=train_cfg.seed)
    return TrainResult(curve=[(0, 1.0, 0.0)], checkpoints=[Checkpoint(None, -1e9, p), Checkpoint(0, 1.0, p)])


def seed_of(params):
    for s in range(10):
        if init_policy(3, 2, (2,), seed=s).vector.tobytes() == params.vector.tobytes():
            return s
    raise AssertionError


def pattern_evaluator(params, model, task_cfg, goals, n_episodes, episode_steps, physics_cfg=None, goals_per_episode=64):
    """Counts depend only on the cell and the training seed."""
    x, y = task_cfg.cell_xy
    base = int(round((x + 0.1) * 100 + (y + 0.14) * 50)) + seed_of(params)
    return [EpisodeResult(base + k, False, episode_steps) for k in range(n_episodes)]


SMALL = GridSpec(-0.02, 0.02, 0.0, 0.02, 0.02)
CFG = SweepConfig(train=TrainConfig(epochs=1), eval=EvalConfig(n_episodes=4, episode_steps=5, goals_per_episode=2))


def test_run_cell_stub_counts(models):
    def evaluator(params, model, task_cfg, goals, n, steps, physics_cfg=None, goals_per_episode=64):
        assert len(goals) == n * (goals_per_episode + 1)
        return [EpisodeResult(c, False, steps) for c in (2, 4, 3, 3)]

    res = run_cell(models["isyhand"], GridCell((0, 0), (0.0, 0.0)), 0, CFG, stub_trainer, evaluator)
    assert res.counts == (2, 4, 3, 3)
    assert res.mean_consecutive_successes == 3.0
    assert res.best_epoch == 0


def test_worker_count_invariance(models, tmp_path):
    m = models["isyhand"]
    ev = pattern_evaluator
    one = run_grid(m, SMALL, [0, 1], CFG, worker_count=1, out_dir=tmp_path / "a", trainer=stub_trainer, evaluator=ev)
    two = run_grid(m, SMALL, [0, 1], CFG, worker_count=2, out_dir=tmp_path / "b", trainer=stub_trainer, evaluator=ev)
    assert one.results == two.results
    assert len(one.results) == 12 and not one.failures
    names = sorted(os.listdir(tmp_path / "a" / "jobs"))
    assert names == sorted(os.listdir(tmp_path / "b" / "jobs"))


class Interrupt(Exception):
    pass


def test_kill_and_resume(models, tmp_path):
    m = models["isyhand"]
    ev = pattern_evaluator
    full = run_grid(m, SMALL, [0, 1], CFG, trainer=stub_trainer, evaluator=ev)

    seen = []

    def stop_after_three(doc):
        seen.append(doc)
        if len(seen) == 3:
            raise Interrupt

    with pytest.raises(Interrupt):
        run_grid(m, SMALL, [0, 1], CFG, out_dir=tmp_path, trainer=stub_trainer, evaluator=ev, on_job=stop_after_three)
    assert len(os.listdir(tmp_path / "jobs")) == 3

    calls = []

    def counting(*a, **k):
        calls.append(1)
        return ev(*a, **k)

    resumed = run_grid(m, SMALL, [0, 1], CFG, out_dir=tmp_path, trainer=stub_trainer, evaluator=counting)
    assert len(calls) == 12 - 3
    assert resumed.results == full.results


def test_stale_hash_jobs_rerun(models, tmp_path):
    m = models["isyhand"]
    ev = pattern_evaluator
    run_grid(m, SMALL, [0], CFG, out_dir=tmp_path, trainer=stub_trainer, evaluator=ev)
    other = SweepConfig(train=TrainConfig(epochs=2), eval=CFG.eval)
    assert sweep_config_hash(m, other) != sweep_config_hash(m, CFG)
    calls = []

    def counting(*a, **k):
        calls.append(1)
        return ev(*a, **k)

    run_grid(m, SMALL, [0], other, out_dir=tmp_path, trainer=stub_trainer, evaluator=counting)
    assert len(calls) == 6


def test_failed_job_recorded(models, tmp_path):
    m = models["isyhand"]

    def flaky(params, model, task_cfg, *a, **k):
        if task_cfg.cell_xy == (0.0, 0.02):
            raise RuntimeError("boom")
        return [EpisodeResult(1, False, 5)] * 4

    res = run_grid(m, SMALL, [0], CFG, out_dir=tmp_path, trainer=stub_trainer, evaluator=flaky)
    assert list(res.failures) == [(1, 1, 0)]
    assert "boom" in res.failures[(1, 1, 0)]
    assert len(res.results) == 5
    stem = job_stem(m.name, GridCell((1, 1), (0.0, 0.02)), 0, sweep_config_hash(m, CFG))
    doc = json.loads((tmp_path / "jobs" / f"{stem}.json").read_text())
    assert doc["status"] == "failed" and "RuntimeError" in doc["traceback"]


# -- aggregation --------------------------------------------------------------------


def test_aggregate_reference_case():
    means = {(i, 0): v for i, v in enumerate([0.0, 1.0, 9.99, 10.0, 10.47, 0.0, 0.0])}
    s = aggregate(means)
    assert s.max_s == 10.47
    assert s.sum_s == 31.46
    assert s.count_ge == {1: 4, 10: 2, 20: 0, 30: 0}
    assert s.n_cells == 7


def test_aggregate_all_zero():
    s = aggregate({(i, j): 0.0 for i in range(3) for j in range(3)})
    assert (s.max_s, s.sum_s) == (0.0, 0.0)
    assert all(v == 0 for v in s.count_ge.values())


def test_aggregate_excludes_missing():
    s = aggregate({(0, 0): 12.0, (1, 0): float("nan"), (2, 0): None})
    assert s.n_cells == 1 and s.sum_s == 12.0
    with pytest.raises(ValueError):
        aggregate({})


@settings(max_examples=200)
@given(st.lists(st.floats(0, 40, allow_nan=False), min_size=9, max_size=9))
def test_aggregate_brute_force_3x3(values):
    means = {(i % 3, i // 3): v for i, v in enumerate(values)}
    s = aggregate(means)
    assert s.max_s == round(max(values), 2)
    assert abs(s.sum_s - round(sum(values), 2)) <= 0.01 + 1e-9
    for t in (1, 10, 20, 30):
        assert s.count_ge[t] == len([v for v in values if v >= t])
    counts = [s.count_ge[t] for t in (1, 10, 20, 30)]
    assert counts == sorted(counts, reverse=True)


def test_seed_average():
    from handgrid.gridlab import CellResult

    c = GridCell((0, 0), (0.0, 0.0))
    res = [CellResult("h", c, 0, (2, 4)), CellResult("h", c, 1, (0, 0)), CellResult("h", GridCell((1, 0), (0.02, 0.0)), 0, (5,))]
    assert seed_average(res) == {(0, 0): 1.5, (1, 0): 5.0}


def test_heatmap_matrix_shape_and_placement():
    means = {(c.column, c.row): float(c.column + 100 * c.row) for c in make_grid(FULL_GRID) if (c.column + c.row) % 5}
    m = heatmap_matrix(means, FULL_GRID)
    assert m.shape == (17, 13)
    for (col, row), v in means.items():
        assert m[row, col] == v
    assert np.isnan(m[0, 0])
    items = list(means.items())
    np.random.default_rng(0).shuffle(items)
    np.testing.assert_array_equal(heatmap_matrix(dict(items), FULL_GRID), m)


def test_single_cell_reference_value():
    s = aggregate({(0, 0): 31.46})
    assert (s.max_s, s.sum_s) == (31.46, 31.46)
    assert s.count_ge == {1: 1, 10: 1, 20: 1, 30: 1}


def test_noop_policy_scores_zero(models):
    def still(params, model, task_cfg, goals, n, steps, physics_cfg=None, goals_per_episode=64):
        return [EpisodeResult(0, False, steps)] * n

    res = run_cell(models["isyhand"], GridCell((0, 0), (0.0, 0.0)), 0, CFG, stub_trainer, still)
    assert res.mean_consecutive_successes == 0.0


def test_run_cell_repeatable(models):
    cell = GridCell((1, 0), (0.02, 0.0))
    a = run_cell(models["leap_like"], cell, 1, CFG, stub_trainer, pattern_evaluator)
    b = run_cell(models["leap_like"], cell, 1, CFG, stub_trainer, pattern_evaluator)
    assert a == b


def test_two_by_two_grid_and_eight_workers(models):
    spec = GridSpec(0.0, 0.02, 0.0, 0.02, 0.02)
    m = models["isyhand"]
    one = run_grid(m, spec, [0], CFG, trainer=stub_trainer, evaluator=pattern_evaluator)
    eight = run_grid(m, spec, [0], CFG, worker_count=8, trainer=stub_trainer, evaluator=pattern_evaluator)
    assert len(one.results) == 4
    assert one.results == eight.results


def test_one_by_one_heatmap():
    spec = GridSpec(0, 0, 0, 0, 0.02)
    assert heatmap_matrix({(0, 0): 2.5}, spec).shape == (1, 1)
