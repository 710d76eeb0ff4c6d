"""Multi-stage plumbing shared by the command line and the demos."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as config_mod
from .baselines import ROUTERS
from .checkpoint import ModelCheckpoint
from .evaluation import ComparisonReport, compare
from .ppo import ActorCritic, TrainResult, select_path, train
from .predictor import predicted_frames, series_frames, train_predictor
from .topology import TopologySpec
from .traffic import TrafficMatrixSeries, generate_series, write_series

log = logging.getLogger(__name__)


def agent_snapshots(series: TrafficMatrixSeries, topology: TopologySpec,
                    predictor: ModelCheckpoint | None = None) -> list:
    """Training inputs for the agent.

    Without a predictor these are the measured snapshots; with one they are
    the one-step forecasts. Both start at the predictor window so the two
    variants see the same time indices.
    """
    window = predictor.config["predictor"]["window"] if predictor is not None else 0
    if predictor is None:
        return list(series.snapshots)
    frames = series_frames(series, topology)
    preds = predicted_frames(predictor, frames, topology)
    assert len(preds) == len(series) - window
    return preds


def aligned_measured(series: TrafficMatrixSeries, window: int) -> list:
    return list(series.snapshots[window:])


def train_agent(topology: TopologySpec, snapshots: Sequence, settings: config_mod.Settings,
                seed: int | None = None) -> TrainResult:
    seed = settings.seed if seed is None else seed
    return train(topology, snapshots, settings.ppo, seed=seed, reward_cfg=settings.reward)


def sample_pairs(n: int, count: int, seed: int) -> list[tuple[int, int]]:
    all_pairs = [(s, d) for s in range(1, n + 1) for d in range(1, n + 1) if s != d]
    if count >= len(all_pairs):
        return all_pairs
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(all_pairs), size=count, replace=False))
    return [all_pairs[i] for i in idx]


def evaluation_snapshots(series: TrafficMatrixSeries, count: int) -> list:
    """Evenly spaced snapshots across the series, so every clock bucket is covered."""
    if count >= len(series):
        return list(series.snapshots)
    idx = np.unique(np.linspace(0, len(series) - 1, count).round().astype(int))
    return [series.snapshots[i] for i in idx]


def agent_router(agent: ActorCritic, topology: TopologySpec):
    def route(snapshot, src, dst):
        return select_path(agent, topology, src, dst, snapshot).path
    return route


def baseline_router(algo: str, topology: TopologySpec):
    fn = ROUTERS[algo]
    return lambda snapshot, src, dst: fn(snapshot, topology, src, dst)


def evaluate_agents(agents: dict[str, ActorCritic], topology: TopologySpec, series: TrafficMatrixSeries,
                    settings: config_mod.Settings, seed: int) -> ComparisonReport:
    ev = settings.evaluation
    routers = {name: agent_router(a, topology) for name, a in agents.items()}
    for algo in ROUTERS:
        routers[algo] = baseline_router(algo, topology)
    pairs = sample_pairs(topology.n, int(ev["pairs"]), seed)
    snaps = evaluation_snapshots(series, int(ev["snapshots"]))
    return compare(routers, snaps, pairs, ev["edge_reduce"])


# ------------------------------------------------------------------- sweeps

@dataclass
class SweepRow:
    value: str
    status: str
    final_reward: float
    final_steps: float
    curves: str


def value_label(value) -> str:
    if isinstance(value, (list, tuple)):
        return ":".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
    return f"{value:g}" if isinstance(value, float) else str(value)


def parse_sweep_values(param: str, text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if param == "objective_variant":
            out.append(item)
        elif param in ("learning_rates", "discount_factors"):
            parts = item.split(":")
            if len(parts) != 2:
                raise config_mod.ConfigError(f"{param} values look like a:b, got {item!r}")
            out.append([float(p) for p in parts])
        else:
            out.append(int(item))
    if not out:
        raise config_mod.ConfigError("no sweep values given")
    return out


def sweep(param: str, values: Sequence, topology: TopologySpec, snapshots: Sequence,
          settings: config_mod.Settings, out_dir: Path, tail: int = 100) -> list[SweepRow]:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        label = value_label(value)
        s = config_mod.with_value(settings, param, value)
        path = out_dir / f"curves-{param}-{label}.csv"
        try:
            res = train_agent(topology, snapshots, s)
            ok = all(math.isfinite(r) for r in res.rewards)
            path.write_text(res.curves_csv())
            rows.append(SweepRow(label, "ok" if ok else "non-finite",
                                 float(np.mean(res.rewards[-tail:])), float(np.mean(res.steps[-tail:])),
                                 path.name))
        except (FloatingPointError, RuntimeError, ValueError) as exc:
            log.warning("sweep value %s failed: %s", label, exc)
            rows.append(SweepRow(label, "failed", float("nan"), float("nan"), ""))
    summary = ["param,value,status,final_mean_reward,final_mean_steps,curves"]
    summary += [f"{param},{r.value},{r.status},{r.final_reward!r},{r.final_steps!r},{r.curves}" for r in rows]
    (out_dir / f"sweep-{param}.csv").write_text("\n".join(summary) + "\n")
    return rows


# --------------------------------------------------------------- end to end

def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(run_dir: Path, seed: int, stages: dict, settings: config_mod.Settings) -> Path:
    artifacts = {p.relative_to(run_dir).as_posix(): file_digest(p)
                 for p in sorted(run_dir.rglob("*")) if p.is_file() and p.name != "manifest.json"}
    manifest = {"seed": seed, "config": config_mod.resolved_dict(settings), "stages": stages,
                "complete": all(v == "ok" for v in stages.values()), "artifacts": artifacts}
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def end_to_end(run_dir: Path, topology: TopologySpec, settings: config_mod.Settings) -> dict:
    """Every stage from traffic generation to the comparison report."""
    run_dir.mkdir(parents=True, exist_ok=True)
    seed = settings.seed
    stage_seeds = np.random.SeedSequence(seed).generate_state(4)
    stages: dict[str, str] = {}
    names = ["topology", "traffic", "predictor", "agent_measured", "agent_predicted", "evaluation"]
    try:
        topology.save(run_dir / "topology.json")
        stages["topology"] = "ok"

        series = generate_series(topology, settings.traffic_count, int(stage_seeds[0]), settings.traffic)
        write_series(run_dir / "snapshots.ndjson", series)
        stages["traffic"] = "ok"

        pres = train_predictor(series, topology, settings.predictor)
        pres.checkpoint.save(run_dir / "predictor.ckpt")
        window = settings.predictor.window
        lines = ["episode,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(pres.losses)]
        lines.append(f"# test_mse={pres.test_mse!r} persistence_mse={pres.persistence_mse!r}")
        (run_dir / "predictor-losses.csv").write_text("\n".join(lines) + "\n")
        stages["predictor"] = "ok"

        measured = train_agent(topology, aligned_measured(series, window), settings, int(stage_seeds[1]))
        measured.best_checkpoint.save(run_dir / "agent-measured.ckpt")
        (run_dir / "curves-measured.csv").write_text(measured.curves_csv())
        stages["agent_measured"] = "ok"

        predicted = train_agent(topology, agent_snapshots(series, topology, pres.checkpoint), settings,
                                int(stage_seeds[1]))
        predicted.best_checkpoint.save(run_dir / "agent-predicted.ckpt")
        (run_dir / "curves-predicted.csv").write_text(predicted.curves_csv())
        stages["agent_predicted"] = "ok"

        agents = {"agent": ActorCritic.from_checkpoint(measured.best_checkpoint),
                  "agent_pred": ActorCritic.from_checkpoint(predicted.best_checkpoint)}
        report = evaluate_agents(agents, topology, series, settings, int(stage_seeds[2]))
        (run_dir / "evaluation.csv").write_text(report.to_csv())
        (run_dir / "evaluation.txt").write_text(report.summary("agent"))
        stages["evaluation"] = "ok"
    except Exception as exc:  # record partial completion, then re-raise
        failed = next(n for n in names if n not in stages)
        stages[failed] = f"failed: {type(exc).__name__}: {exc}"
        write_manifest(run_dir, seed, stages, settings)
        raise
    for n in names:
        stages.setdefault(n, "skipped")
    write_manifest(run_dir, seed, stages, settings)
    return stages
