"""Command line entry point: ``sdwnroute <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import pipeline
from .baselines import ROUTERS, route_baseline
from .checkpoint import ModelCheckpoint
from .env import RewardConfig, as_info, normalized_info, total_reward
from .evaluation import path_metrics
from .ppo import ActorCritic, select_path
from .predictor import predict, train_predictor
from .topology import INFO_CHANNELS, TopologySpec, bundled_topology, generate_topology
from .traffic import bundled_series, generate_series, read_series, write_series

log = logging.getLogger("sdwnroute")


def _topology(path) -> TopologySpec:
    return TopologySpec.load(path) if path else bundled_topology()


def _series(path, topology: TopologySpec):
    if path:
        series = read_series(path)
        if series.topology_hash != topology.digest():
            raise SystemExit("snapshot file was generated for a different topology")
        return series
    if topology.digest() != bundled_topology().digest():
        raise SystemExit("--snapshots is required with a non-bundled topology")
    return bundled_series()


def _settings(args, **extra) -> config_mod.Settings:
    over = {k: v for k, v in extra.items() if v is not None}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    s = config_mod.load(getattr(args, "config", None), over)
    log.info("resolved config:\n%s", config_mod.dump(s).rstrip())
    return s


def _snapshot_at(series, t):
    return series.snapshots[-1] if t is None else series.at(t)


def _print_path(path, snapshot, topology, reward_cfg, extra=None):
    out = {"path": path}
    if path is not None:
        ni = normalized_info(as_info(snapshot, topology))
        out["total_reward"] = total_reward(path, ni, reward_cfg)
        out["metrics"] = path_metrics(path, snapshot).as_dict()
    out.update(extra or {})
    print(json.dumps(out, sort_keys=True))
    return 0 if path is not None else 3


# ----------------------------------------------------------------- commands

def cmd_gen_topology(args):
    topo = generate_topology(args.nodes, args.links, seed=args.seed)
    topo.save(args.out)
    print(f"wrote {args.out} ({topo.n} nodes, {len(topo.links)} links, sha256 {topo.digest()[:12]})")


def cmd_gen_traffic(args):
    s = _settings(args)
    topo = _topology(args.topology)
    count = args.count if args.count is not None else s.traffic_count
    series = generate_series(topo, count, s.seed, s.traffic)
    write_series(args.out, series)
    print(f"wrote {args.out} ({len(series)} snapshots)")


def cmd_train_predictor(args):
    pred = {k: getattr(args, k) for k in ("window", "horizon", "episodes") if getattr(args, k) is not None}
    if args.seed is not None:
        pred["seed"] = args.seed
    s = _settings(args, predictor=pred or None)
    topo = _topology(args.topology)
    series = _series(args.snapshots, topo)
    res = train_predictor(series, topo, s.predictor)
    res.checkpoint.save(args.out)
    if args.losses:
        lines = ["episode,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(res.losses)]
        Path(args.losses).write_text("\n".join(lines) + "\n")
    print(json.dumps({"test_mse": res.test_mse, "persistence_mse": res.persistence_mse,
                      "checkpoint": str(args.out)}, sort_keys=True))


def cmd_predict(args):
    topo = _topology(args.topology)
    series = _series(args.snapshots, topo)
    ckpt = ModelCheckpoint.load(args.checkpoint)
    k = len(series) if args.at is None else series.index_of(args.at) + 1
    window = ckpt.config["predictor"]["window"]
    if k < window:
        raise SystemExit(f"need {window} snapshots of history before the forecast point")
    out = predict(ckpt, series.snapshots[k - window:k], topo, steps=args.steps)
    doc = {"after_timestamp": series.snapshots[k - 1].timestamp,
           "frames": [{ch: np.where(np.isnan(m[ch]), None, m[ch]).tolist() for ch in INFO_CHANNELS}
                      for m in out]}
    text = json.dumps(doc, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def cmd_train_agent(args):
    s = _settings(args)
    topo = _topology(args.topology)
    series = _series(args.snapshots, topo)
    if args.predictor:
        pred = ModelCheckpoint.load(args.predictor)
        snaps = pipeline.agent_snapshots(series, topo, pred)
    else:
        snaps = list(series.snapshots)
    t0 = time.perf_counter()
    res = pipeline.train_agent(topo, snaps, s)
    res.best_checkpoint.save(args.out)
    if args.curves:
        Path(args.curves).write_text(res.curves_csv())
    log.info("trained %d episodes in %.1fs", len(res.rewards), time.perf_counter() - t0)
    print(json.dumps({"checkpoint": str(args.out), "best_episode": res.best_episode,
                      "final_mean_reward": float(np.mean(res.rewards[-100:])),
                      "final_mean_steps": float(np.mean(res.steps[-100:]))}, sort_keys=True))


def cmd_route(args):
    topo = _topology(args.topology)
    series = _series(args.snapshots, topo)
    ckpt = ModelCheckpoint.load(args.checkpoint)
    snap = _snapshot_at(series, args.snapshot_at)
    res = select_path(ckpt, topo, args.src, args.dst, snap)
    return _print_path(res.path, snap, topo, RewardConfig(**ckpt.config["reward"]), {"steps": res.steps})


def cmd_route_baseline(args):
    topo = _topology(args.topology)
    series = _series(args.snapshots, topo)
    snap = _snapshot_at(series, args.snapshot_at)
    path = route_baseline(args.algo, snap, topo, args.src, args.dst)
    return _print_path(path, snap, topo, RewardConfig())


def cmd_evaluate(args):
    s = _settings(args)
    topo = _topology(args.topology)
    series = _series(args.snapshots, topo)
    agents = {}
    for spec in args.checkpoint:
        name, _, path = spec.rpartition("=")
        agents[name or Path(path).stem] = ActorCritic.from_checkpoint(ModelCheckpoint.load(path))
    report = pipeline.evaluate_agents(agents, topo, series, s, s.seed)
    Path(args.out).write_text(report.to_csv())
    summary = report.summary(next(iter(agents)) if agents else None)
    if args.summary:
        Path(args.summary).write_text(summary)
    print(summary, end="")


def cmd_sweep(args):
    s = _settings(args)
    topo = _topology(args.topology)
    series = _series(args.snapshots, topo)
    values = pipeline.parse_sweep_values(args.param, args.values)
    rows = pipeline.sweep(args.param, values, topo, list(series.snapshots), s, Path(args.out))
    for r in rows:
        print(f"{args.param}={r.value}: {r.status} final_mean_reward={r.final_reward:.4f} "
              f"final_mean_steps={r.final_steps:.2f}")


def cmd_end_to_end(args):
    s = _settings(args)
    topo = _topology(args.topology)
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    run_dir = Path(args.out) / f"run-{stamp}-seed{s.seed}"
    t0 = time.perf_counter()
    stages = pipeline.end_to_end(run_dir, topo, s)
    log.info("end-to-end finished in %.1fs", time.perf_counter() - t0)
    print(json.dumps({"run_dir": str(run_dir), "stages": stages}, sort_keys=True))


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdwnroute", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, topology=True, snapshots=True, config=True, seed=True):
        if topology:
            sp.add_argument("--topology", help="topology JSON (default: bundled 14-node)")
        if snapshots:
            sp.add_argument("--snapshots", help="snapshot NDJSON (default: bundled series)")
        if config:
            sp.add_argument("--config", help="YAML run config")
        if seed:
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("gen-topology", help="random connected AP topology")
    sp.add_argument("--nodes", type=int, default=14)
    sp.add_argument("--links", type=int, default=25)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_topology)

    sp = sub.add_parser("gen-traffic", help="synthetic link snapshot series")
    common(sp, snapshots=False)
    sp.add_argument("--count", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_traffic)

    sp = sub.add_parser("train-predictor", help="fit the GCN-GRU forecaster")
    common(sp)
    sp.add_argument("--window", type=int, help="history length t")
    sp.add_argument("--horizon", type=int, help="forecast steps T")
    sp.add_argument("--episodes", type=int, help="training episodes M")
    sp.add_argument("--out", required=True)
    sp.add_argument("--losses", help="per-episode loss CSV")
    sp.set_defaults(func=cmd_train_predictor)

    sp = sub.add_parser("predict", help="forecast upcoming info matrices")
    common(sp, config=False, seed=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--at", type=float, help="last observed timestamp (default: end of series)")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("train-agent", help="train the PPO routing agent")
    common(sp)
    sp.add_argument("--predictor", help="predictor checkpoint; train on forecasts")
    sp.add_argument("--out", required=True)
    sp.add_argument("--curves", help="per-episode reward/step CSV")
    sp.set_defaults(func=cmd_train_agent)

    for name, fn, helptext in (("route", cmd_route, "greedy path from a trained agent"),
                               ("route-baseline", cmd_route_baseline, "path from a classical router")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, config=False, seed=False)
        if name == "route":
            sp.add_argument("--checkpoint", required=True)
        else:
            sp.add_argument("--algo", choices=sorted(ROUTERS), required=True)
        sp.add_argument("--src", type=int, required=True)
        sp.add_argument("--dst", type=int, required=True)
        sp.add_argument("--snapshot-at", type=float, help="snapshot timestamp (default: last)")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("evaluate", help="compare agents against the baselines")
    common(sp)
    sp.add_argument("--checkpoint", action="append", default=[], help="[name=]path, repeatable")
    sp.add_argument("--out", required=True, help="CSV report")
    sp.add_argument("--summary", help="plain-text summary table")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="one training run per hyperparameter value")
    common(sp)
    sp.add_argument("--param", required=True, choices=sorted(config_mod.SWEEP_KEYS))
    sp.add_argument("--values", required=True, help="comma list; pairs as a:b")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("end-to-end", help="every stage into one timestamped directory")
    common(sp, snapshots=False)
    sp.add_argument("--out", default="runs")
    sp.set_defaults(func=cmd_end_to_end)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        rc = args.func(args)
    except config_mod.ConfigError as exc:
        log.error("%s", exc)
        return 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
