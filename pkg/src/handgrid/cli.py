"""``handgrid`` command-line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import glob
import itertools
import json
import os
import sys

from handgrid import gridlab, report, stats
from handgrid.handspec import HandSpecError, builtin_models, load_hand, parse_hand_spec, serialize_hand_spec
from handgrid.manifest import build_manifest, model_hash, read_manifest, write_manifest
from handgrid.task import TaskConfig
from handgrid.trainer import TrainConfig, evaluate_policy, load_checkpoint

EXIT_DIAGNOSTICS = 2
EXIT_FAILED_CELL = 3
EXIT_EMPTY_REPORT = 4
EXIT_LENGTH_MISMATCH = 5
EXIT_DOF_MISMATCH = 6
WORKERS_ENV = "HANDGRID_WORKERS"

OUTPUT_NAMES = {
    "manifest": "manifest.json",
    "cells": "cells.csv",
    "summary": "summary.csv",
    "table3": "table3.csv",
    "heatmap": "heatmap.svg",
    "curves": "curves.csv",
    "jobs": "jobs",
    "checkpoints": "checkpoints",
}


def _err(msg):
    print(msg, file=sys.stderr)


# -- model ----------------------------------------------------------------------


def cmd_model_validate(args):
    try:
        if args.spec in builtin_models() and not os.path.exists(args.spec):
            model = parse_hand_spec(serialize_hand_spec(builtin_models()[args.spec]))
        else:
            with open(args.spec, encoding="utf-8") as fh:
                model = parse_hand_spec(fh.read())
    except OSError as exc:
        _err(f"{args.spec}: {exc.strerror}")
        return EXIT_DIAGNOSTICS
    except HandSpecError as exc:
        for d in exc.diagnostics:
            _err(f"{args.spec}: {d}")
        return EXIT_DIAGNOSTICS
    print(f"name: {model.name}")
    print(f"dof: {model.dof}")
    print(f"links: {len(model.links)}")
    return 0


def cmd_model_export(args):
    models = builtin_models()
    names = sorted(models) if args.name == "all" else [args.name]
    os.makedirs(args.out, exist_ok=True)
    for name in names:
        if name not in models:
            _err(f"unknown builtin hand '{name}' (choose from {', '.join(sorted(models))})")
            return 1
        path = os.path.join(args.out, f"{name}.json")
        with open(path, "w") as fh:
            fh.write(serialize_hand_spec(models[name]))
        print(path)
    return 0


# -- sweep ----------------------------------------------------------------------


def _seeds(text):
    return tuple(int(s) for s in text.split(",") if s.strip())


def _workers(args):
    if args.workers is not None:
        return max(1, args.workers)
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def sweep_config_from_args(args):
    train = dataclasses.replace(
        TrainConfig(), epochs=args.epochs, envs_per_epoch=args.envs_per_epoch, horizon=args.horizon
    )
    ev = gridlab.EvalConfig(
        n_episodes=args.episodes,
        episode_steps=args.episode_steps,
        goal_seed=args.goal_seed,
        goals_per_episode=args.goals_per_episode,
    )
    return gridlab.SweepConfig(train=train, eval=ev)


def write_sweep_outputs(out_dir, hand, spec, results, paths=None):
    """Write cells/summary/table3/heatmap/curves; returns the GridSummary or None when empty."""
    paths = paths or {k: os.path.join(out_dir, v) for k, v in OUTPUT_NAMES.items()}
    results = list(results)
    means = gridlab.seed_average(results)
    if paths.get("cells"):
        report.write_cells_csv(paths["cells"], results)
    if paths.get("summary"):
        report.write_summary_csv(paths["summary"], hand, results)
    if paths.get("curves"):
        report.write_curves_csv(paths["curves"], results)
    if paths.get("heatmap"):
        report.write_heatmap_svg(paths["heatmap"], gridlab.heatmap_matrix(means, spec), spec, title=hand)
    if not means:
        return None
    summary = gridlab.aggregate(means)
    if paths.get("table3"):
        report.write_table3_csv(paths["table3"], [(hand, summary)])
    return summary


def cmd_sweep(args):
    try:
        model = load_hand(args.hand)
    except (OSError, HandSpecError) as exc:
        _err(f"cannot load hand '{args.hand}': {exc}")
        return EXIT_DIAGNOSTICS
    spec = gridlab.GridSpec.parse(args.grid)
    seeds = _seeds(args.seeds)
    cfg = sweep_config_from_args(args)
    chash = gridlab.sweep_config_hash(model, cfg)
    out = args.out
    os.makedirs(out, exist_ok=True)
    mpath = os.path.join(out, OUTPUT_NAMES["manifest"])
    if os.path.exists(mpath):
        old = read_manifest(mpath)
        if old.get("config_hash") != chash:
            _err(f"{out} holds a sweep with config hash {old.get('config_hash')}; use a fresh --out directory")
            return 1
    cells = gridlab.make_grid(spec)
    jobs = [gridlab.job_stem(model.name, c, s, chash) for c in cells for s in seeds]
    config = {
        "hand": {"name": model.name, "spec_sha256": model_hash(model), "source": args.hand},
        "grid": spec,
        "seeds": list(seeds),
        "sweep": cfg,
    }
    outputs = {k: v for k, v in OUTPUT_NAMES.items()}
    manifest = build_manifest("sweep", sys.argv[1:] if args.argv is None else args.argv, config, outputs)
    # the config hash that keys job files is the sweep-level one
    manifest["config_hash"] = chash
    manifest["n_jobs"] = len(jobs)
    manifest["jobs"] = jobs
    manifest["failed_jobs"] = []
    write_manifest(mpath, manifest)
    if args.plan_only:
        print(f"{len(jobs)} jobs planned ({spec.n_cols} x {spec.n_rows} cells, {len(seeds)} seeds)")
        return 0

    def progress(doc):
        status = doc["status"] if doc["status"] == "ok" else f"FAILED ({doc['error']})"
        _err(f"[{doc['hand']} c{doc['column']} r{doc['row']} s{doc['seed']}] {status}")

    result = gridlab.run_grid(model, spec, seeds, cfg, worker_count=_workers(args), out_dir=out, on_job=progress)
    summary = write_sweep_outputs(out, model.name, spec, result.ordered())
    manifest["failed_jobs"] = [
        {"job": gridlab.job_stem(model.name, gridlab.GridCell((c, r), (0, 0)), s, chash), "error": e}
        for (c, r, s), e in sorted(result.failures.items())
    ]
    write_manifest(mpath, manifest)
    if summary is not None:
        print(
            f"{model.name}: max_s {summary.max_s:.2f}  sum_s {summary.sum_s:.2f}  "
            + "  ".join(f">={t}: {summary.count_ge[t]}" for t in gridlab.THRESHOLDS)
        )
    if result.failures:
        _err(f"{len(result.failures)} job(s) failed; see {mpath}")
        return EXIT_FAILED_CELL
    return 0


# -- report ---------------------------------------------------------------------


def load_sweep_dir(in_dir):
    """Return (manifest, GridSpec, [CellResult]) for jobs matching the manifest's config hash."""
    manifest = read_manifest(os.path.join(in_dir, OUTPUT_NAMES["manifest"]))
    g = manifest["config"]["grid"]
    spec = gridlab.GridSpec(g["x_min"], g["x_max"], g["y_min"], g["y_max"], g["spacing"])
    results = []
    for path in sorted(glob.glob(os.path.join(in_dir, OUTPUT_NAMES["jobs"], "*.json"))):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("status") == "ok" and doc.get("config_hash") == manifest["config_hash"]:
            results.append(gridlab.result_from_doc(doc))
    return manifest, spec, results


def cmd_report(args):
    try:
        manifest, spec, results = load_sweep_dir(args.input)
    except (OSError, KeyError, ValueError) as exc:
        _err(f"{args.input}: not a sweep directory ({exc})")
        return EXIT_EMPTY_REPORT
    if not results:
        _err(f"{args.input}: no finished cells to report")
        return EXIT_EMPTY_REPORT
    hand = manifest["config"]["hand"]["name"]
    chosen = {"heatmap": args.heatmap, "table3": args.table3, "curves": args.curves}
    if not any(chosen.values()):
        chosen = {k: os.path.join(args.input, OUTPUT_NAMES[k]) for k in chosen}
    summary = write_sweep_outputs(args.input, hand, spec, results, chosen)
    print(
        f"{hand}: {summary.n_cells} cells  max_s {summary.max_s:.2f}  sum_s {summary.sum_s:.2f}  "
        + "  ".join(f">={t}: {summary.count_ge[t]}" for t in gridlab.THRESHOLDS)
    )
    return 0


# -- compare --------------------------------------------------------------------

COMPARE_SLOTS = "abcdefgh"


def cmd_compare(args):
    files = [(slot, getattr(args, slot)) for slot in COMPARE_SLOTS if getattr(args, slot)]
    if len(files) < 2:
        _err("compare needs at least --a and --b")
        return 1
    samples = []
    for slot, path in files:
        label, counts = report.read_counts_csv(path)
        samples.append((label or os.path.splitext(os.path.basename(path))[0], counts))
    lengths = {len(c) for _, c in samples}
    if len(lengths) != 1:
        _err("episode-count files differ in length: " + ", ".join(f"{n}={len(c)}" for n, c in samples))
        return EXIT_LENGTH_MISMATCH
    pairs = list(itertools.combinations(samples, 2))
    m = len(pairs)
    rows = []
    for (na, ca), (nb, cb) in pairs:
        try:
            r = stats.wilcoxon_signed_rank(stats.PairedSample(tuple(ca), tuple(cb)), m=m)
        except stats.UndefinedTestError as exc:
            _err(f"{na} vs {nb}: {exc}")
            rows.append([na, nb, "", "", "", "", str(exc)])
            continue
        rows.append(
            [na, nb, repr(r.statistic), repr(r.p_value_two_sided), repr(r.p_value_adjusted),
             int(r.p_value_adjusted < 0.05), ""]
        )
    report._write_rows(args.out or sys.stdout, report.COMPARE_HEADER, rows)
    if args.box:
        box = []
        for name, counts in samples:
            s = stats.summarize(counts)
            box.append([name] + [s[k] for k in ("n", "mean", "median", "q1", "q3", "min", "max")])
        report._write_rows(args.box, report.BOX_HEADER, box)
    return 0


# -- eval -----------------------------------------------------------------------


def cmd_eval(args):
    try:
        model = load_hand(args.hand)
    except (OSError, HandSpecError) as exc:
        _err(f"cannot load hand '{args.hand}': {exc}")
        return EXIT_DIAGNOSTICS
    params, meta = load_checkpoint(args.policy)
    obs_dim = 4 * model.dof + 21
    if params.act_dim != model.dof or params.obs_dim != obs_dim:
        _err(
            f"policy expects {params.act_dim} joints / {params.obs_dim} observations; "
            f"'{model.name}' has {model.dof} DoF / {obs_dim} observations"
        )
        return EXIT_DOF_MISMATCH
    x, y = (float(v) for v in args.cell.split(","))
    task_cfg = TaskConfig(cell_xy=(x, y))
    ev = gridlab.EvalConfig(args.episodes, args.episode_steps, args.goal_seed, args.goals_per_episode)
    goals = gridlab.generate_goal_sequence(ev.goal_seed, ev.sequence_length)
    episodes = evaluate_policy(
        params, model, task_cfg, goals, ev.n_episodes, ev.episode_steps, goals_per_episode=ev.goals_per_episode
    )
    report.write_episodes_csv(args.out or sys.stdout, episodes)
    s = stats.summarize([e.consecutive_successes for e in episodes])
    line = f"{model.name} cell ({x:g}, {y:g}): episodes {s['n']}  mean {s['mean']:.2f}  median {s['median']:.1f}"
    print(line, file=sys.stdout if args.out else sys.stderr)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="handgrid", description="Grid-sweep cube reorientation across hand designs.")
    sub = p.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("model", help="hand-spec utilities")
    msub = pm.add_subparsers(dest="model_command", required=True)
    pv = msub.add_parser("validate", help="parse and validate a hand-spec file")
    pv.add_argument("spec")
    pv.set_defaults(func=cmd_model_validate)
    pe = msub.add_parser("export", help="write builtin hand specs as JSON files")
    pe.add_argument("name", help="builtin name or 'all'")
    pe.add_argument("--out", default=".")
    pe.set_defaults(func=cmd_model_export)

    ps = sub.add_parser("sweep", help="train and evaluate one policy per grid cell and seed")
    ps.add_argument("--hand", required=True, help="builtin name or hand-spec file")
    ps.add_argument("--grid", default="full", help="'full' or x_min:x_max:y_min:y_max:spacing (m)")
    ps.add_argument("--seeds", default="0")
    ps.add_argument("--epochs", type=int, default=20)
    ps.add_argument("--envs-per-epoch", type=int, default=TrainConfig.envs_per_epoch)
    ps.add_argument("--horizon", type=int, default=TrainConfig.horizon)
    ps.add_argument("--episodes", type=int, default=100)
    ps.add_argument("--episode-steps", type=int, default=600)
    ps.add_argument("--goal-seed", type=int, default=0)
    ps.add_argument("--goals-per-episode", type=int, default=64)
    ps.add_argument("--workers", type=int, default=None, help=f"defaults to ${WORKERS_ENV} or 1")
    ps.add_argument("--plan-only", action="store_true", help="write the manifest and stop")
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_sweep, argv=None)

    pr = sub.add_parser("report", help="re-emit tables and figures from a sweep directory")
    pr.add_argument("--in", dest="input", required=True)
    pr.add_argument("--heatmap")
    pr.add_argument("--table3")
    pr.add_argument("--curves")
    pr.set_defaults(func=cmd_report)

    pc = sub.add_parser("compare", help="paired signed-rank tests on all pairs of hands")
    for slot in COMPARE_SLOTS:
        pc.add_argument(f"--{slot}", help="episode-count CSV" if slot in "ab" else argparse.SUPPRESS)
    pc.add_argument("--out", help="comparison CSV (default stdout)")
    pc.add_argument("--box", help="also write per-hand box statistics CSV")
    pc.set_defaults(func=cmd_compare)

    pv2 = sub.add_parser("eval", help="evaluate a checkpoint on the fixed goal sequence")
    pv2.add_argument("--policy", required=True)
    pv2.add_argument("--hand", required=True)
    pv2.add_argument("--cell", default="0,0", help="x,y in meters")
    pv2.add_argument("--episodes", type=int, default=100)
    pv2.add_argument("--episode-steps", type=int, default=600)
    pv2.add_argument("--goal-seed", type=int, default=0)
    pv2.add_argument("--goals-per-episode", type=int, default=64)
    pv2.add_argument("--out", help="per-episode CSV (default stdout)")
    pv2.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "func", None) is cmd_sweep and argv is not None:
        args.argv = list(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        _err(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
