"""Command-line harness.

Subcommands cover the whole pipeline: threshold calibration, description
classification, ROC sweeps, reach-avoid planning, tracked simulation
(static or dynamic), the method-comparison benchmark, and synthetic data
generation. All randomness flows from --seed; the embedding service
endpoint comes from a config file or the SEMSAFE_EMBED_ENDPOINT variable,
falling back to the deterministic mock embedder.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import calibration as cal
from . import harness
from .embeddings import (
    ENDPOINT_ENV_VAR,
    CachingEmbedder,
    HttpEmbedder,
    MockEmbedder,
    dump_corpus,
    load_corpus,
)
from .planner import PlannerConfig, dump_plan, plan_fallback
from .tracker import RobotState, TrackerConfig, dump_trace, execute_fallback, replan_loop
from .world import load_camera, load_goal_sets, load_scene


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _resolve_embedder(config: dict, dim: int, seed: int) -> CachingEmbedder:
    endpoint = os.environ.get(ENDPOINT_ENV_VAR) or config.get("embedding", {}).get("endpoint")
    if endpoint:
        token = config.get("embedding", {}).get("token")
        return CachingEmbedder(HttpEmbedder(endpoint, token=token))
    return CachingEmbedder(MockEmbedder(dim, seed))


def _planner_config(config: dict, seed: int, hazard_radii: tuple[float, ...]) -> PlannerConfig:
    p = config.get("planner", {})
    return PlannerConfig(
        step_size=p.get("step_size", 0.5),
        reach_radius=p.get("reach_radius", 1.0),
        tracking_error=p.get("tracking_error", 0.3),
        inflation=p.get("inflation", 0.5),
        hazard_radii=tuple(p.get("hazard_radii", hazard_radii)),
        goal_bias=p.get("goal_bias", 0.1),
        max_iterations=p.get("max_iterations", 5000),
        seed=seed,
    )


def _tracker_config(config: dict) -> TrackerConfig:
    t = config.get("tracker", {})
    return TrackerConfig(
        dt=t.get("dt", 0.1),
        accel_bound=t.get("accel_bound", 5.0),
        position_weight=t.get("position_weight", 8.0),
        velocity_weight=t.get("velocity_weight", 2.0),
        control_weight=t.get("control_weight", 0.1),
        horizon=t.get("horizon", 20),
        error_bound=t.get("error_bound", 0.3),
        controller=t.get("controller", "lqr"),
    )


@click.group()
def main():
    """Semantic safety calibration, fallback planning, and evaluation."""


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--modes", "modes_path", required=True, type=click.Path(exists=True))
@click.option("--alpha", default=cal.DEFAULT_ALPHA, show_default=True)
@click.option("--metric", "metric_name", default="cosine", type=click.Choice(["cosine", "mahalanobis"]))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def calibrate(corpus_path, modes_path, alpha, metric_name, config_path, seed, out):
    """Calibrate per-mode thresholds on a safe corpus; write a mode-set file."""
    config = _load_config(config_path)
    corpus = load_corpus(corpus_path)
    embedder = _resolve_embedder(config, corpus.dim, seed)
    modes = cal.load_failure_modes(modes_path, embedder)
    metric = _metric(metric_name, corpus)
    mode_set = cal.calibrate_mode_set(corpus, modes, alpha, metric)
    cal.dump_mode_set(mode_set, out)
    click.echo(f"calibrated {len(mode_set.modes)} modes at alpha={alpha} -> {out}")


def _metric(name: str, corpus) -> cal.Metric:
    if name == "mahalanobis":
        from .embeddings import compute_precision_matrix

        return cal.Metric.mahalanobis(compute_precision_matrix(corpus))
    return cal.Metric.cosine()


@main.command()
@click.option("--mode-set", "mode_set_path", required=True, type=click.Path(exists=True))
@click.option("--descriptions", "desc_path", required=True, type=click.Path(exists=True),
              help="Text file with one description per line.")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--dim", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def classify(mode_set_path, desc_path, config_path, dim, seed):
    """Classify descriptions as safe/unsafe against a calibrated mode set."""
    config = _load_config(config_path)
    mode_set = cal.load_mode_set(mode_set_path)
    embedder = _resolve_embedder(config, mode_set.modes[0].embedding.dim, seed)
    with open(desc_path) as f:
        lines = [line.strip() for line in f if line.strip()]
    for line in lines:
        result = cal.classify_description(embedder.embed(line), mode_set)
        verdict = "UNSAFE" if result.unsafe else "safe"
        firing = [v.mode_label for v in result.verdicts if v.unsafe]
        suffix = f" ({', '.join(firing)})" if firing else ""
        click.echo(f"{verdict}\t{line}{suffix}")


@main.command("sweep-roc")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--modes", "modes_path", required=True, type=click.Path(exists=True))
@click.option("--safe-test", required=True, type=click.Path(exists=True))
@click.option("--unsafe-test", required=True, type=click.Path(exists=True))
@click.option("--metric", "metric_name", default="cosine", type=click.Choice(["cosine", "mahalanobis"]))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def sweep_roc(corpus_path, modes_path, safe_test, unsafe_test, metric_name, config_path, seed, out):
    """Sweep alpha and write ROC points (alpha,fpr,tpr) as CSV."""
    config = _load_config(config_path)
    corpus = load_corpus(corpus_path)
    embedder = _resolve_embedder(config, corpus.dim, seed)
    modes = cal.load_failure_modes(modes_path, embedder)
    metric = _metric(metric_name, corpus)
    dataset = harness.LabeledDataset(
        corpus, load_corpus(safe_test).entries, load_corpus(unsafe_test).entries
    )
    mode_set = cal.calibrate_mode_set(corpus, modes, metric=metric)
    report = harness.evaluate_classification(dataset, mode_set, metric)
    harness.emit_plot_data(report, out)
    click.echo(
        f"TPR={report.tpr:.3f} TNR={report.tnr:.3f} "
        f"balanced={report.balanced_accuracy:.3f} AUROC={report.auroc:.3f} -> {out}"
    )


def _scene_inputs(scene_path, goals_path, mode_set_path, camera_path, config, seed):
    world = load_scene(scene_path)
    camera = load_camera(camera_path) if camera_path else None
    strategies = load_goal_sets(goals_path, camera)
    mode_set = cal.load_mode_set(mode_set_path) if mode_set_path else None
    dim = mode_set.modes[0].embedding.dim if mode_set else 64
    embedder = _resolve_embedder(config, dim, seed)
    radii = [world.collision_radius]
    if mode_set:
        radii += [m.radius for m in mode_set.modes]
    return world, strategies, mode_set, embedder, tuple(radii)


@main.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--goals", "goals_path", required=True, type=click.Path(exists=True))
@click.option("--camera", "camera_path", type=click.Path(exists=True))
@click.option("--mode-set", "mode_set_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def plan(scene_path, goals_path, camera_path, mode_set_path, config_path, seed, out):
    """Solve the reach-avoid fallback problem; write the plan JSON."""
    config = _load_config(config_path)
    world, strategies, mode_set, embedder, radii = _scene_inputs(
        scene_path, goals_path, mode_set_path, camera_path, config, seed
    )
    pc = _planner_config(config, seed, radii)
    start = np.asarray(config.get("start", [0.0, 0.0, 0.0]), dtype=float)
    outcome = plan_fallback(world, start, strategies, pc, mode_set, embedder)
    dump_plan(outcome, out)
    if outcome.plan is None:
        click.echo(f"no plan found ({len(outcome.attempted)} goals attempted) -> {out}")
        sys.exit(1)
    click.echo(
        f"plan: strategy={outcome.plan.strategy_label!r} "
        f"waypoints={len(outcome.plan.waypoints)} objective={outcome.plan.objective:.4f} -> {out}"
    )


@main.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--goals", "goals_path", required=True, type=click.Path(exists=True))
@click.option("--camera", "camera_path", type=click.Path(exists=True))
@click.option("--mode-set", "mode_set_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--dynamic", is_flag=True, help="Run the replan loop with moving concepts.")
@click.option("--replan-period", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def simulate(scene_path, goals_path, camera_path, mode_set_path, config_path, dynamic,
             replan_period, seed, out):
    """Plan and track the fallback; write the execution trace JSON."""
    config = _load_config(config_path)
    world, strategies, mode_set, embedder, radii = _scene_inputs(
        scene_path, goals_path, mode_set_path, camera_path, config, seed
    )
    pc = _planner_config(config, seed, radii)
    tc = _tracker_config(config)
    start = np.asarray(config.get("start", [0.0, 0.0, 0.0]), dtype=float)
    initial = RobotState(start, np.zeros(3))
    if dynamic:
        trace, events = replan_loop(
            world, initial, strategies, pc, tc, mode_set, embedder,
            replan_period=replan_period,
        )
    else:
        trace, _outcome = execute_fallback(world, initial, strategies, pc, tc, mode_set, embedder)
        events = []
    if trace is None:
        click.echo("no plan found; nothing executed")
        sys.exit(1)
    dump_trace(trace, out, events)
    click.echo(
        f"executed {len(trace.controls)} steps, reached={trace.reached}, "
        f"worst_base_cost={trace.worst_base_cost:.4f}, "
        f"max_deviation={trace.max_tracking_deviation:.4f} -> {out}"
    )


@main.command()
@click.option("--method", type=click.Choice(list(harness.METHODS) + ["all"]), default="all",
              show_default=True)
@click.option("--n-runs", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(),
              help="Output CSV; per-method files get a suffix when --method=all.")
def benchmark(method, n_runs, seed, out):
    """Planning-rate comparison of the semantic method against both baselines."""
    config = harness.BenchmarkConfig()
    methods = list(harness.METHODS) if method == "all" else [method]
    for m in methods:
        report = harness.run_planning_benchmark(config, n_runs, m, seed=seed)
        path = out if len(methods) == 1 else _suffixed(out, m)
        harness.emit_plot_data(report, path)
        click.echo(
            f"{m}: safe={report.safe_rate:.2f} unsafe={report.unsafe_rate:.2f} "
            f"noplan={report.noplan_rate:.2f} -> {path}"
        )


def _suffixed(path: str, tag: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}-{tag}{ext or '.csv'}"


@main.command("gen-data")
@click.option("--separation", default=0.8, show_default=True)
@click.option("--dim", default=64, show_default=True)
@click.option("--n-calibration", default=200, show_default=True)
@click.option("--n-test", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
def gen_data(separation, dim, n_calibration, n_test, seed, out_dir):
    """Generate a synthetic corpus/test split and a failure-mode list."""
    spec = harness.SyntheticSpec(
        n_calibration=n_calibration,
        n_safe_test=n_test,
        n_unsafe_test=n_test,
        dim=dim,
        separation=separation,
    )
    dataset, modes = harness.generate_synthetic_corpus(spec, seed)
    os.makedirs(out_dir, exist_ok=True)
    from .embeddings import SafeCorpus

    dump_corpus(dataset.calibration, os.path.join(out_dir, "calibration.json"))
    dump_corpus(SafeCorpus(dataset.safe_test), os.path.join(out_dir, "safe_test.json"))
    dump_corpus(SafeCorpus(dataset.unsafe_test), os.path.join(out_dir, "unsafe_test.json"))
    with open(os.path.join(out_dir, "modes.json"), "w") as f:
        json.dump(
            {"modes": [{"label": m.label, "radius_m": m.radius,
                        "embedding": m.embedding.values.tolist()} for m in modes]},
            f,
        )
    click.echo(f"wrote calibration/safe_test/unsafe_test/modes to {out_dir}")


if __name__ == "__main__":
    main()
