"""Run orchestration and persistence: per-seed jobs, manifests, curve CSVs,
report generation, and the random-search driver.

Every output byte except the manifest's wall-clock fields is determined by
(resolved config, seed): jobs pin their BLAS pool to one thread so results do
not depend on --jobs, and completed seeds are skipped on rerun since a rerun
would reproduce them bit for bit anyway.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from multiprocessing import get_context

import numpy as np
from threadpoolctl import threadpool_limits

from . import continual, envs, harness, ppo, sac
from .checkpoint import CheckpointContainer, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, parse_config_dict
from .continual import (
    APPROACHES,
    KnowledgeSnapshot,
    PhasePlan,
    SeedStreams,
    new_agent,
    new_storage,
    ppo_total_updates,
    run_adaptation,
    snapshot,
    train_phase,
)
from .errors import CheckpointError, ConfigError
from .harness import NOT_REACHED, LearningCurve, EvalRecord, adaptation_savings, aggregate
from .numerics import RngStream, derive_seed

CURVE_NAME = "curve.csv"
CHECKPOINT_NAME = "checkpoint.ftrl"
MANIFEST_NAME = "manifest.json"
RESOLVED_NAME = "resolved_config.json"

NOT_REACHED_CELL = "—"  # em dash sentinel in savings tables

BAR_CHECKPOINTS = {envs.QUAD_CRAWLER: (0, 300_000), envs.REACH_ARM: (0, 30_000)}


def _write_json_atomic(path: str, doc) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_curve(curve: LearningCurve, path: str) -> None:
    n_ep = len(curve.records[0].episode_returns) if curve.records else 0
    lines = ["step,mean_return," + ",".join(f"ep_return_{i}" for i in range(n_ep))]
    for rec in curve.records:
        lines.append(
            f"{rec.step},{_fmt(rec.mean_return)},"
            + ",".join(_fmt(x) for x in rec.episode_returns)
        )
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_curve(path: str) -> LearningCurve:
    curve = LearningCurve()
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("step,mean_return"):
            raise ConfigError(f"{path}: not a curve CSV")
        for line in fh:
            parts = line.strip().split(",")
            curve.add(EvalRecord(step=int(parts[0]), mean_return=float(parts[1]),
                                 episode_returns=tuple(float(p) for p in parts[2:])))
    return curve


# ---------------------------------------------------------------------------
# Manifest


def manifest_path(exp_dir: str) -> str:
    return os.path.join(exp_dir, MANIFEST_NAME)


def load_manifest(exp_dir: str) -> dict | None:
    path = manifest_path(exp_dir)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        return json.load(fh)


def _ensure_manifest(exp_dir: str, xc: ExperimentConfig, seeds) -> dict:
    manifest = load_manifest(exp_dir)
    if manifest is None or manifest.get("config_digest") != xc.digest():
        manifest = {"experiment_id": xc.experiment_id, "config_digest": xc.digest(),
                    "seeds": {}}
    for seed in seeds:
        manifest["seeds"].setdefault(str(seed), {"status": "pending", "artifacts": {},
                                                 "duration_s": None, "error": None})
    return manifest


# ---------------------------------------------------------------------------
# Per-seed jobs


def _seed_dir(exp_dir: str, seed: int) -> str:
    return os.path.join(exp_dir, f"seed_{seed}")


def train_seed(xc: ExperimentConfig, seed: int, exp_dir: str) -> dict:
    """Train one seed for phase1_steps in the config's environment."""
    seed_dir = _seed_dir(exp_dir, seed)
    os.makedirs(seed_dir, exist_ok=True)
    with threadpool_limits(limits=1):
        streams = SeedStreams.from_seed(seed)
        total1 = (ppo_total_updates(xc.plan.phase1_steps, xc.algo_config.n_steps)
                  if xc.algorithm == "ppo" else 1)
        agent = new_agent(xc.algorithm, xc.algo_config, xc.env, streams.init, total1)
        storage = new_storage(xc.algorithm, xc.algo_config, xc.env)
        curve = train_phase(xc.algorithm, agent, storage, xc.env, xc.plan.phase1_steps,
                            seed, streams, xc.plan.eval_every, xc.plan.eval_episodes)
        snap = snapshot(agent, storage, captured_at=xc.plan.phase1_steps)
    write_curve(curve, os.path.join(seed_dir, CURVE_NAME))
    container = CheckpointContainer(
        algorithm=snap.algorithm, counters=snap.counters, config_digest=xc.digest(),
        tensors=snap.tensors, storage=snap.storage, captured_at=snap.captured_at)
    save_checkpoint(container, os.path.join(seed_dir, CHECKPOINT_NAME))
    return {"curve": f"seed_{seed}/{CURVE_NAME}", "checkpoint": f"seed_{seed}/{CHECKPOINT_NAME}"}


def resolve_snapshot_path(snapshot_path: str, seed: int) -> str:
    if "{seed}" in snapshot_path:
        return snapshot_path.format(seed=seed)
    if os.path.isdir(snapshot_path):
        return os.path.join(_seed_dir(snapshot_path, seed), CHECKPOINT_NAME)
    return snapshot_path


def snapshot_from_container(container: CheckpointContainer) -> KnowledgeSnapshot:
    return KnowledgeSnapshot(
        algorithm=container.algorithm, tensors=container.tensors,
        counters=container.counters, storage=container.storage,
        captured_at=container.captured_at)


def adapt_seed(xc: ExperimentConfig, seed: int, snapshot_path: str, exp_dir: str) -> dict:
    """Run phases 2-3 for one seed from its phase-1 snapshot."""
    container = load_checkpoint(resolve_snapshot_path(snapshot_path, seed))
    if container.algorithm != xc.algorithm:
        raise ConfigError(
            f"snapshot algorithm {container.algorithm!r} does not match config "
            f"algorithm {xc.algorithm!r}")
    seed_dir = _seed_dir(exp_dir, seed)
    os.makedirs(seed_dir, exist_ok=True)
    with threadpool_limits(limits=1):
        snap = snapshot_from_container(container)
        curve, agent, storage, fault_env = run_adaptation(
            snap, xc.env, xc.algo_config, xc.plan, seed)
        final = snapshot(agent, storage, captured_at=xc.plan.phase3_steps)
    write_curve(curve, os.path.join(seed_dir, CURVE_NAME))
    out = CheckpointContainer(
        algorithm=final.algorithm, counters=final.counters, config_digest=xc.digest(),
        tensors=final.tensors, storage=final.storage, captured_at=final.captured_at)
    save_checkpoint(out, os.path.join(seed_dir, CHECKPOINT_NAME))
    return {"curve": f"seed_{seed}/{CURVE_NAME}", "checkpoint": f"seed_{seed}/{CHECKPOINT_NAME}"}


def _run_job(args):
    kind, xc, seed, exp_dir, snapshot_path = args
    started = time.monotonic()
    try:
        if kind == "train":
            artifacts = train_seed(xc, seed, exp_dir)
        else:
            artifacts = adapt_seed(xc, seed, snapshot_path, exp_dir)
        return seed, {"status": "done", "artifacts": artifacts,
                      "duration_s": round(time.monotonic() - started, 3), "error": None}
    except Exception as exc:  # per-seed isolation: record, do not kill the batch
        return seed, {"status": "failed", "artifacts": {},
                      "duration_s": round(time.monotonic() - started, 3),
                      "error": f"{type(exc).__name__}: {exc}"}


def _run_seeds(kind: str, xc: ExperimentConfig, exp_dir: str, seeds, jobs: int,
               snapshot_path: str | None = None) -> dict:
    os.makedirs(exp_dir, exist_ok=True)
    _write_json_atomic(os.path.join(exp_dir, RESOLVED_NAME), xc.resolved())
    manifest = _ensure_manifest(exp_dir, xc, seeds)
    pending = [s for s in seeds if manifest["seeds"][str(s)]["status"] != "done"]
    for seed in pending:
        manifest["seeds"][str(seed)]["status"] = "running"
    _write_json_atomic(manifest_path(exp_dir), manifest)

    work = [(kind, xc, seed, exp_dir, snapshot_path) for seed in pending]
    if jobs <= 1:
        results = map(_run_job, work)
        for seed, entry in results:
            manifest["seeds"][str(seed)] = entry
            _write_json_atomic(manifest_path(exp_dir), manifest)
    else:
        ctx = get_context("fork")
        with ctx.Pool(processes=jobs) as pool:
            for seed, entry in pool.imap_unordered(_run_job, work):
                manifest["seeds"][str(seed)] = entry
                _write_json_atomic(manifest_path(exp_dir), manifest)
    return manifest


def with_approach(xc: ExperimentConfig, approach: int) -> ExperimentConfig:
    if approach not in APPROACHES:
        raise ConfigError("approach must be one of 1..4")
    plan = dataclasses.replace(xc.plan, approach=approach)
    return dataclasses.replace(xc, plan=plan)


def cmd_train(xc: ExperimentConfig, out_root: str, seeds=None, jobs: int = 1) -> str:
    exp_dir = os.path.join(out_root, xc.experiment_id)
    _run_seeds("train", xc, exp_dir, list(seeds or xc.seeds), jobs)
    return exp_dir


def cmd_adapt(xc: ExperimentConfig, snapshot_path: str, approach: int | None,
              out_root: str, seeds=None, jobs: int = 1) -> str:
    if approach is not None:
        xc = with_approach(xc, approach)
    seeds = list(seeds or xc.seeds)
    # Fail fast on algorithm mismatch before any run starts.
    probe = load_checkpoint(resolve_snapshot_path(snapshot_path, seeds[0]))
    if probe.algorithm != xc.algorithm:
        raise ConfigError(
            f"snapshot algorithm {probe.algorithm!r} does not match config "
            f"algorithm {xc.algorithm!r}")
    exp_dir = os.path.join(out_root, xc.experiment_id)
    _run_seeds("adapt", xc, exp_dir, seeds, jobs, snapshot_path=snapshot_path)
    return exp_dir


def experiment_curves(exp_dir: str) -> list[LearningCurve]:
    manifest = load_manifest(exp_dir)
    if manifest is None:
        raise ConfigError(f"{exp_dir}: no manifest")
    curves = []
    for seed in sorted(manifest["seeds"], key=int):
        entry = manifest["seeds"][seed]
        if entry["status"] == "done":
            curves.append(read_curve(os.path.join(exp_dir, entry["artifacts"]["curve"])))
    return curves


def experiment_status(exp_dir: str) -> dict[str, int]:
    manifest = load_manifest(exp_dir) or {"seeds": {}}
    counts = {"done": 0, "failed": 0, "pending": 0, "running": 0}
    for entry in manifest["seeds"].values():
        counts[entry["status"]] = counts.get(entry["status"], 0) + 1
    return counts


# ---------------------------------------------------------------------------
# Reports


def _fault_key(resolved: dict) -> str:
    fault = resolved["phases"].get("fault")
    if fault is None and resolved["env"]["faults"]:
        fault = resolved["env"]["faults"]
    return json.dumps(fault, sort_keys=True) if fault else "none"


def cmd_report(run_dirs, out_dir: str) -> dict:
    """Aggregate curves, savings table, early-performance bars; partial on gaps."""
    os.makedirs(out_dir, exist_ok=True)
    issues = []
    bundles = []
    for exp_dir in run_dirs:
        resolved_path = os.path.join(exp_dir, RESOLVED_NAME)
        if not os.path.exists(resolved_path):
            issues.append(f"{exp_dir}: missing {RESOLVED_NAME}")
            continue
        with open(resolved_path) as fh:
            resolved = json.load(fh)
        try:
            curves = experiment_curves(exp_dir)
        except ConfigError as exc:
            issues.append(str(exc))
            continue
        if not curves:
            issues.append(f"{exp_dir}: no completed seeds")
            continue
        summary = aggregate(curves)
        bundles.append({"dir": exp_dir, "resolved": resolved, "summary": summary,
                        "n_runs": len(curves)})
        exp_id = resolved["experiment_id"]
        lines = ["step,mean,ci_low,ci_high,n"]
        for c in summary:
            lines.append(f"{c.step},{_fmt(c.mean)},{_fmt(c.ci_low)},{_fmt(c.ci_high)},{c.n}")
        with open(os.path.join(out_dir, f"aggregate_{exp_id}.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")

    # Savings: group by (algorithm, fault); approach 4 is the baseline.
    groups: dict[tuple[str, str], dict[int, dict]] = {}
    for b in bundles:
        key = (b["resolved"]["algorithm"]["name"], _fault_key(b["resolved"]))
        groups.setdefault(key, {})[b["resolved"]["phases"]["approach"]] = b
    savings_lines = ["algorithm,fault,approach,savings_percent"]
    for (algo, fault), arms in sorted(groups.items()):
        if fault == "none":
            continue
        baseline = arms.get(4)
        if baseline is None:
            issues.append(f"no approach-4 baseline for {algo} / {fault}")
            continue
        for approach in sorted(arms):
            if approach == 4:
                continue
            try:
                value = adaptation_savings(arms[approach]["summary"], baseline["summary"])
            except ConfigError as exc:
                issues.append(f"savings {algo}/{fault}/approach {approach}: {exc}")
                continue
            cell = NOT_REACHED_CELL if value is NOT_REACHED else f"{value:.2f}"
            savings_lines.append(f"{algo},{json.dumps(fault)},{approach},{cell}")
    with open(os.path.join(out_dir, "savings.csv"), "w") as fh:
        fh.write("\n".join(savings_lines) + "\n")

    bar_lines = ["experiment_id,step,mean,ci_low,ci_high,n"]
    for b in bundles:
        kind = b["resolved"]["env"]["kind"]
        grid = {c.step: c for c in b["summary"]}
        for checkpoint in BAR_CHECKPOINTS[kind]:
            if checkpoint in grid:
                c = grid[checkpoint]
                bar_lines.append(
                    f"{b['resolved']['experiment_id']},{c.step},{_fmt(c.mean)},"
                    f"{_fmt(c.ci_low)},{_fmt(c.ci_high)},{c.n}")
    with open(os.path.join(out_dir, "bars.csv"), "w") as fh:
        fh.write("\n".join(bar_lines) + "\n")

    if issues:
        _write_json_atomic(os.path.join(out_dir, "report_issues.json"), issues)
    return {"bundles": len(bundles), "issues": issues}


def write_heatmap(data: harness.HeatmapData, path: str) -> None:
    bins = data.probs.shape[1]
    lines = ["joint," + ",".join(f"bin_{i}" for i in range(bins))]
    for j, row in enumerate(data.probs):
        lines.append(f"{j}," + ",".join(_fmt(p) for p in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_heatmap(xc: ExperimentConfig, snapshot_path: str, out_dir: str,
                episodes: int = 100, bins: int = 25) -> str:
    container = load_checkpoint(snapshot_path)
    if container.algorithm != xc.algorithm:
        raise ConfigError("snapshot algorithm does not match config")
    env = envs.apply_fault(xc.env, xc.plan.fault) if xc.plan.fault else xc.env
    agent = new_agent(xc.algorithm, xc.algo_config, env, RngStream(0, "heatmap-init"))
    agent.load_state(container.tensors, container.counters)
    with threadpool_limits(limits=1):
        data = harness.state_visitation(
            agent, env, episodes=episodes, bins=bins,
            rng=RngStream(derive_seed(harness.EVAL_KEY, 0xBEA7), "heatmap"))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"heatmap_{xc.experiment_id}.csv")
    write_heatmap(data, path)
    return path


# ---------------------------------------------------------------------------
# Random-search driver


def load_space(path: str):
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "algorithm" not in doc:
        raise ConfigError("space file needs an 'algorithm' key")
    algo = doc["algorithm"]
    if algo not in ("ppo", "sac"):
        raise ConfigError(f"unknown algorithm {algo!r} in space file")
    for key in doc:
        if key not in ("algorithm", "params"):
            raise ConfigError(f"unknown key {key!r} in space file")
    if "params" not in doc:
        space = harness.ppo_search_space() if algo == "ppo" else harness.sac_search_space()
        return algo, space
    params = []
    for name, domain in doc["params"].items():
        if "choice" in domain:
            params.append((name, (harness.CHOICE, tuple(domain["choice"]))))
        elif "uniform" in domain:
            a, b = domain["uniform"]
            params.append((name, (harness.UNIFORM, float(a), float(b))))
        else:
            raise ConfigError(f"domain for {name!r} needs 'choice' or 'uniform'")
    return algo, harness.HpoSpace(params=tuple(params))


def cmd_hpo(space_path: str, env_kind: str, out_root: str, config_seeds=range(0, 101),
            run_seeds=range(0, 10), phase1_steps: int | None = None,
            eval_every: int | None = None, jobs: int = 1) -> dict:
    """Random search: sample per config seed, run each config's seed set, rank."""
    from .config import parse_config_dict

    algo, space = load_space(space_path)
    assignments: dict[str, tuple[int, dict]] = {}
    for cs in config_seeds:
        params = harness.sample_hpo_config(space, cs)
        key = json.dumps(params, sort_keys=True)
        assignments.setdefault(key, (cs, params))  # dedup identical draws

    results = {}
    leaderboard_dir = os.path.join(out_root, f"hpo_{algo}_{env_kind}")
    os.makedirs(leaderboard_dir, exist_ok=True)
    for key, (cs, params) in sorted(assignments.items(), key=lambda kv: kv[1][0]):
        doc = {
            "experiment_id": f"hpo_{algo}_{env_kind}_cfg{cs}",
            "env": {"kind": env_kind},
            "algorithm": {"name": algo, **params},
            "seeds": list(run_seeds),
        }
        phases = {}
        if phase1_steps:
            phases["phase1_steps"] = phase1_steps
        if eval_every:
            phases["eval_every"] = eval_every
        if phases:
            doc["phases"] = phases
        xc = parse_config_dict(doc)
        exp_dir = cmd_train(xc, leaderboard_dir, jobs=jobs)
        results[cs] = {"params": params, "curves": experiment_curves(exp_dir)}

    curve_map = {cs: r["curves"] for cs, r in results.items() if r["curves"]}
    winner = harness.select_best(curve_map)
    lines = ["config_seed,final_score,params"]
    for cs in sorted(curve_map):
        score = float(np.mean([np.mean(c.means[-10:]) for c in curve_map[cs]]))
        lines.append(f"{cs},{_fmt(score)},{json.dumps(results[cs]['params'], sort_keys=True)!r}")
    with open(os.path.join(leaderboard_dir, "leaderboard.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_json_atomic(os.path.join(leaderboard_dir, "winner.json"),
                       {"config_seed": winner, "params": results[winner]["params"]})
    return {"winner": winner, "n_unique": len(assignments), "dir": leaderboard_dir}
