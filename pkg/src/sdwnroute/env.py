"""Next-hop routing MDP.

Observation: a (C, n, n) tensor, channel 0 the position matrix, channels 1..5
the min-max scaled info matrices. Actions are node ids 1..n. Three cases:
non-adjacent picks leave the agent in place (penalty), adjacent picks of an
already visited node move the agent but are penalized as loops, any other
adjacent pick earns the link reward; arriving at the destination adds a bonus.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .topology import (INFO_CHANNELS, LinkSnapshot, NormalizationConfig, TopologySpec, normalize,
                       to_info_matrices)

# position-channel markers
CURRENT, DESTINATION, VISITED = 0.5, 1.0, 0.25
# observation value for not-a-link entries
OBS_SENTINEL = -1.0
N_STATE_CHANNELS = 1 + len(INFO_CHANNELS)


class EpisodeError(RuntimeError):
    pass


class MissingMetricError(ValueError):
    pass


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    betas: tuple[float, float, float, float, float] = (0.7, 0.3, 0.1, 0.1, 0.1)
    xi1: float = 0.5  # loop penalty factor
    xi2: float = 0.8  # invalid-action penalty factor
    r_standard: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.betas) != 5 or not all(0.0 <= b <= 1.0 for b in self.betas):
            raise ValueError("need five link weights in [0, 1]")
        if not (0.0 <= self.r_standard <= 1.0):
            raise ValueError("standard reward must lie in [0, 1]")
        if not (0.0 <= self.xi1 <= 1.0 and 0.0 <= self.xi2 <= 1.0):
            raise ValueError("penalty factors must lie in [0, 1]")

    @property
    def r_loop(self) -> float:
        return -self.xi1 * self.r_standard

    @property
    def r_non_edge(self) -> float:
        return -self.xi2 * self.r_standard


def normalized_info(info: Mapping[str, np.ndarray], norm: NormalizationConfig = NormalizationConfig()):
    return {ch: normalize(info[ch], norm) for ch in INFO_CHANNELS}


def as_info(snapshot, topology: TopologySpec) -> dict[str, np.ndarray]:
    if isinstance(snapshot, LinkSnapshot):
        return to_info_matrices(snapshot, topology)
    return {ch: np.asarray(snapshot[ch], dtype=np.float64) for ch in INFO_CHANNELS}


def metric_observation(info: Mapping[str, np.ndarray], norm: NormalizationConfig = NormalizationConfig()):
    """Flattened metric channels of the observation, sentinel entries mapped."""
    return _metric_features(normalized_info(info, norm)).ravel()


def _metric_features(norm_info: Mapping[str, np.ndarray]) -> np.ndarray:
    metric = np.stack([norm_info[ch] for ch in INFO_CHANNELS])
    return np.where(np.isnan(metric), OBS_SENTINEL, metric)


def link_reward(edge: tuple[int, int], norm_info: Mapping[str, np.ndarray],
                cfg: RewardConfig = RewardConfig()) -> float:
    """Weighted link score on already-normalized info matrices."""
    i, j = edge[0] - 1, edge[1] - 1
    vals = [norm_info[ch][i, j] for ch in INFO_CHANNELS]
    if any(np.isnan(v) for v in vals):
        raise MissingMetricError(f"no metrics for link {edge}")
    bw, delay, err, dist, loss = vals
    b1, b2, b3, b4, b5 = cfg.betas
    return float(b1 * bw - b2 * delay - b3 * err - b4 * dist - b5 * loss)


def total_reward(path: Sequence[int], norm_info: Mapping[str, np.ndarray],
                 cfg: RewardConfig = RewardConfig()) -> float:
    total = 0.0
    for u, v in zip(path[:-1], path[1:]):
        if np.isnan(norm_info[INFO_CHANNELS[0]][u - 1, v - 1]):
            raise PathError(f"path step {u}->{v} is not a link")
        total += link_reward((u, v), norm_info, cfg)
    return total


def reward_matrix(norm_info: Mapping[str, np.ndarray], cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    b1, b2, b3, b4, b5 = cfg.betas
    return (b1 * norm_info["bw_free"] - b2 * norm_info["delay"] - b3 * norm_info["pkt_err"]
            - b4 * norm_info["distance"] - b5 * norm_info["loss"])


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool
    info: dict


@dataclass
class EpisodeTrace:
    src: int
    dst: int
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    path: list[int] = field(default_factory=list)
    reached: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class RoutingEnv:
    """One routing episode at a time over a fixed snapshot."""

    def __init__(self, topology: TopologySpec, reward_cfg: RewardConfig = RewardConfig(),
                 norm: NormalizationConfig = NormalizationConfig(), step_cap: int | None = None):
        self.topology = topology
        self.n = topology.n
        self.adj = topology.adjacency().astype(bool)
        self.cfg = reward_cfg
        self.norm = norm
        self.step_cap = 2 * self.n if step_cap is None else step_cap
        self.active = False
        self.done = False

    @property
    def obs_dim(self) -> int:
        return N_STATE_CHANNELS * self.n * self.n

    def reset(self, src: int, dst: int, snapshot) -> np.ndarray:
        if src == dst:
            raise EpisodeError("source and destination must differ")
        for v in (src, dst):
            if not 1 <= v <= self.n:
                raise EpisodeError(f"node {v} is not in the topology")
        self.norm_info = normalized_info(as_info(snapshot, self.topology), self.norm)
        self.rewards = reward_matrix(self.norm_info, self.cfg)
        self._metric_obs = _metric_features(self.norm_info)
        self.src, self.dst = src, dst
        self.current = src
        self.path = [src]
        self.visited = {src}
        self.steps = 0
        self.trace = EpisodeTrace(src, dst, path=[src])
        self.active = True
        self.done = False
        return self.state()

    def position_matrix(self) -> np.ndarray:
        pos = np.zeros((self.n, self.n))
        for v in self.visited:
            pos[v - 1, v - 1] = VISITED
        pos[self.dst - 1, self.dst - 1] = DESTINATION
        pos[self.current - 1, self.current - 1] = CURRENT
        return pos

    def state(self) -> np.ndarray:
        """(C, n, n) tensor; metric channels keep NaN off-link."""
        metric = np.stack([self.norm_info[ch] for ch in INFO_CHANNELS])
        return np.concatenate([self.position_matrix()[None], metric])

    def observation(self) -> np.ndarray:
        return np.concatenate([self.position_matrix()[None], self._metric_obs]).ravel()

    def step(self, action: int) -> StepResult:
        if not self.active:
            raise EpisodeError("episode is not active; call reset()")
        if self.done:
            raise EpisodeError("episode already finished")
        if not 1 <= action <= self.n:
            raise EpisodeError(f"action {action} outside 1..{self.n}")
        self.steps += 1
        u = self.current
        if not self.adj[u - 1, action - 1]:
            case, reward = "non_edge", self.cfg.r_non_edge
        elif action in self.visited:
            case, reward = "loop", self.cfg.r_loop
            self.current = action
            # excise the revisited segment from the reported path; a node
            # excised earlier can be re-entered without breaking simplicity
            if action in self.path:
                self.path = self.path[: self.path.index(action) + 1]
            else:
                self.path.append(action)
        else:
            reward = float(self.rewards[u - 1, action - 1])
            self.current = action
            self.visited.add(action)
            self.path.append(action)
            case = "hop"
            if action == self.dst:
                reward += self.cfg.r_standard
                case = "arrived"
        truncated = False
        if case == "arrived":
            self.done = True
        elif self.steps >= self.step_cap:
            self.done = truncated = True
        self.trace.actions.append(action)
        self.trace.rewards.append(reward)
        self.trace.path = list(self.path)
        self.trace.reached = case == "arrived"
        info = {"case": case, "truncated": truncated, "path": list(self.path), "steps": self.steps}
        return StepResult(self.state(), reward, self.done, info)
