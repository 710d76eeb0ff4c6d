"""Run configuration: YAML files keyed by the DRL parameter table names.

Unknown keys are rejected. ``resolve`` turns a (possibly partial) mapping into
typed configs; ``dump`` renders the fully resolved settings for logging.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .env import RewardConfig
from .ppo import PpoConfig
from .predictor import PredictorConfig
from .traffic import TrafficConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "learning_rates": [1e-3, 3e-3],
    "batch_size": 32,
    "clip_parameter": 0.2,
    "ppo_update_time": 10,
    "buffer_capacity": 3000,
    "reward_attenuation": 0.99,
    "discount_factors": [0.5, 0.8],
    "episodes": 1000,
    "weights": [0.7, 0.3, 0.1, 0.1, 0.1],
    "standard_reward": 1.0,
    "objective_variant": "clip",
    "kl_sigma": 0.5,
    "n_step": 10,
    "advantage": "td",
    "normalize_advantage": False,
    "max_grad_norm": 0.5,
    "hidden": 128,
    "bootstrap_truncated": True,
    "metric_gain": 0.01,
    "min_update_steps": None,
    "predictor": {f.name: f.default for f in fields(PredictorConfig)},
    "traffic": {"count": 1000, **{f.name: f.default for f in fields(TrafficConfig)}},
    "evaluation": {"pairs": 40, "snapshots": 200, "edge_reduce": "sum"},
}

# sweepable parameter -> config key
SWEEP_KEYS = {
    "learning_rates": "learning_rates",
    "batch_size": "batch_size",
    "update_count": "ppo_update_time",
    "discount_factors": "discount_factors",
    "objective_variant": "objective_variant",
}


@dataclass
class Settings:
    seed: int
    ppo: PpoConfig
    reward: RewardConfig
    predictor: PredictorConfig
    traffic: TrafficConfig
    traffic_count: int
    evaluation: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _merge(base: dict, over: Mapping, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, Mapping):
                raise ConfigError(f"{where}{k} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _pair(v, name: str, length: int) -> list[float]:
    if not isinstance(v, (list, tuple)) or len(v) != length:
        raise ConfigError(f"{name} needs {length} numbers")
    return [float(x) for x in v]


def resolve(overrides: Mapping | None = None) -> Settings:
    raw = _merge(DEFAULTS, overrides or {})
    a1, a2 = _pair(raw["learning_rates"], "learning_rates", 2)
    x1, x2 = _pair(raw["discount_factors"], "discount_factors", 2)
    try:
        ppo = PpoConfig(actor_lr=a1, critic_lr=a2, batch_size=int(raw["batch_size"]),
                        clip_epsilon=float(raw["clip_parameter"]), update_count=int(raw["ppo_update_time"]),
                        buffer_capacity=int(raw["buffer_capacity"]), gamma=float(raw["reward_attenuation"]),
                        episodes=int(raw["episodes"]), kl_sigma=float(raw["kl_sigma"]),
                        n_step=int(raw["n_step"]), objective=str(raw["objective_variant"]),
                        max_grad_norm=float(raw["max_grad_norm"]), hidden=int(raw["hidden"]),
                        advantage=str(raw["advantage"]), normalize_advantage=bool(raw["normalize_advantage"]),
                        bootstrap_truncated=bool(raw["bootstrap_truncated"]),
                        metric_gain=float(raw["metric_gain"]),
                        min_update_steps=None if raw["min_update_steps"] is None else int(raw["min_update_steps"]))
        reward = RewardConfig(tuple(_pair(raw["weights"], "weights", 5)), x1, x2, float(raw["standard_reward"]))
        predictor = PredictorConfig(**raw["predictor"])
        tr = dict(raw["traffic"])
        count = int(tr.pop("count"))
        traffic = TrafficConfig(**tr)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return Settings(int(raw["seed"]), ppo, reward, predictor, traffic, count, dict(raw["evaluation"]), raw)


def load(path: str | Path | None, extra: Mapping | None = None) -> Settings:
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, Mapping):
            raise ConfigError("config file must hold a mapping at top level")
        data = dict(loaded)
    if extra:
        data = _merge(_merge(DEFAULTS, data), extra)
    return resolve(data)


def with_value(settings: Settings, param: str, value) -> Settings:
    """Copy of ``settings`` with one sweep parameter replaced."""
    if param not in SWEEP_KEYS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {sorted(SWEEP_KEYS)}")
    return resolve(_merge(settings.raw, {SWEEP_KEYS[param]: value}))


def dump(settings: Settings) -> str:
    return yaml.safe_dump(settings.raw, sort_keys=True)


def resolved_dict(settings: Settings) -> dict:
    return {"seed": settings.seed, "ppo": asdict(settings.ppo), "reward": asdict(settings.reward),
            "predictor": asdict(settings.predictor), "traffic": asdict(settings.traffic),
            "traffic_count": settings.traffic_count, "evaluation": settings.evaluation}
