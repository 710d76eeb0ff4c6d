"""Actor-critic PPO for next-hop routing.

The actor and critic are separate two-hidden-layer tanh MLPs over the
flattened state. The actor step uses the one-step TD advantage; the critic
regresses on n-step discounted returns. Two surrogate objectives are
available: the clipped ratio (default) and a KL-penalized ratio for ablation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .checkpoint import ModelCheckpoint, load_arrays_into, params_to_arrays
from .env import CURRENT, DESTINATION, VISITED, RewardConfig, RoutingEnv, as_info, metric_observation
from .numcore import MLP, Adam, Param, clip_gradients, softmax, zero_grad
from .topology import NormalizationConfig, TopologySpec

OBJECTIVES = ("clip", "kl")
ADVANTAGES = ("td", "nstep")
OBS_STD_FLOOR = 0.1


class DegeneratePolicyError(ValueError):
    pass


class KLError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class PpoConfig:
    actor_lr: float = 1e-3
    critic_lr: float = 3e-3
    batch_size: int = 32
    clip_epsilon: float = 0.2
    update_count: int = 10
    buffer_capacity: int = 3000
    gamma: float = 0.99
    episodes: int = 1000
    kl_sigma: float = 0.5
    n_step: int = 10
    objective: str = "clip"
    max_grad_norm: float = 0.5
    hidden: int = 128
    advantage: str = "td"
    normalize_advantage: bool = False
    bootstrap_truncated: bool = True
    metric_gain: float = 0.01
    # an episode end triggers an update once this many steps are buffered (None: batch_size)
    min_update_steps: int | None = None

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip epsilon must lie in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.advantage not in ADVANTAGES:
            raise ValueError(f"advantage must be one of {ADVANTAGES}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        for name in ("batch_size", "update_count", "buffer_capacity", "episodes", "n_step", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.min_update_steps is not None and self.min_update_steps < 1:
            raise ValueError("min_update_steps must be positive")
        if self.metric_gain <= 0:
            raise ValueError("metric_gain must be positive")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer must hold at least one minibatch")


# --- scalar pieces of the objective ---------------------------------------

def importance_ratio(p_new, p_old):
    p_new = np.asarray(p_new, dtype=np.float64)
    p_old = np.asarray(p_old, dtype=np.float64)
    if np.any(p_old <= 0):
        raise DegeneratePolicyError("old action probability must be positive")
    r = p_new / p_old
    return float(r) if r.ndim == 0 else r


def advantage(r, v_next, v_now, gamma: float, done=False):
    """One-step TD advantage; no bootstrap past a terminal step."""
    boot = np.where(np.asarray(done, dtype=bool), 0.0, np.asarray(v_next, dtype=np.float64))
    a = np.asarray(r, dtype=np.float64) + gamma * boot - np.asarray(v_now, dtype=np.float64)
    return float(a) if a.ndim == 0 else a


def n_step_returns(rewards, dones, ends, values, next_values, gamma: float, n: int) -> np.ndarray:
    """Discounted n-step returns over a chronological buffer.

    ``dones`` marks terminal steps (no bootstrap); ``ends`` marks any other
    cut in the trajectory (truncation or end of buffer) where the return
    bootstraps from ``next_values`` of that step. ``values`` bootstraps
    windows that stop inside an episode.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    T = len(rewards)
    out = np.zeros(T)
    for t in range(T):
        g, disc = 0.0, 1.0
        k = t
        while True:
            g += disc * rewards[k]
            disc *= gamma
            if dones[k]:
                break
            if ends[k]:
                g += disc * next_values[k]
                break
            if k - t + 1 == n:
                g += disc * values[k + 1]
                break
            k += 1
        out[t] = g
    return out


def clipped_objective(eta, A, eps: float):
    eta = np.asarray(eta, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    out = np.minimum(eta * A, np.clip(eta, 1.0 - eps, 1.0 + eps) * A)
    return float(out) if out.ndim == 0 else out


def kl_divergence(p, q) -> float:
    """KL(p || q) over the last axis."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any((p > 0) & (q <= 0)):
        raise KLError("second distribution has zero mass where the first does not")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(np.where(q > 0, q, 1.0))), 0.0)
    out = terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def kl_objective(eta, A, sigma: float, p_new_dist, p_old_dist):
    out = np.asarray(eta, dtype=np.float64) * np.asarray(A, dtype=np.float64) \
        - sigma * np.asarray(kl_divergence(p_old_dist, p_new_dist))
    return float(out) if out.ndim == 0 else out


# --- networks ---------------------------------------------------------------

@dataclass
class PolicyOutput:
    probs: np.ndarray
    value: float


class ActorCritic:
    """Separate actor and critic MLPs over the flattened state.

    With ``n_nodes`` set, the leading n*n inputs are read as the position plane.
    Its diagonal markers are expanded into current/destination/visited
    indicator vectors plus a one-hot (current, destination) plane, and these
    replace the raw plane at the network input. On a single channel the three
    markers differ only in amplitude, which a freshly initialised dense layer
    separates very slowly.
    """

    def __init__(self, obs_dim: int, n_actions: int, hidden: int = 128, seed: int = 0,
                 n_nodes: int | None = None):
        rng = np.random.default_rng(seed)
        self.obs_dim, self.n_actions, self.hidden, self.n_nodes = obs_dim, n_actions, hidden, n_nodes
        in_dim = obs_dim
        if n_nodes is not None:
            if n_nodes * n_nodes > obs_dim:
                raise ValueError("position plane larger than the observation")
            in_dim = obs_dim + 3 * n_nodes
        self.actor = MLP([in_dim, hidden, hidden, n_actions], "tanh", rng=rng, name="actor")
        self.critic = MLP([in_dim, hidden, hidden, 1], "tanh", rng=rng, name="critic")
        # start from a near-uniform policy
        self.actor.layers[-1].W.value *= 0.01
        # fixed input standardization, fitted once from the training snapshots
        self.obs_shift = Param(np.zeros(obs_dim), "obs.shift")
        self.obs_scale = Param(np.ones(obs_dim), "obs.scale")

    def prep(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        x = (obs - self.obs_shift.value) * self.obs_scale.value
        if self.n_nodes is None:
            return x
        n = self.n_nodes
        diag = obs[..., np.arange(n) * (n + 1)]
        marks = [(diag == m).astype(np.float64) for m in (CURRENT, DESTINATION, VISITED)]
        pair = (marks[0][..., :, None] * marks[1][..., None, :]).reshape(obs.shape[:-1] + (n * n,))
        return np.concatenate(marks + [pair, x[..., n * n:]], axis=-1)

    def fit_inputs(self, features: np.ndarray, start: int = 0, floor: float = OBS_STD_FLOOR,
                   gain: float = 1.0):
        """Centre input features ``start:`` and scale them by gain/max(std, floor)."""
        f = np.atleast_2d(np.asarray(features, dtype=np.float64))
        self.obs_shift.value[start:] = f.mean(axis=0)
        self.obs_scale.value[start:] = gain / np.maximum(f.std(axis=0), floor)

    def actor_params(self) -> list[Param]:
        return self.actor.params()

    def critic_params(self) -> list[Param]:
        return self.critic.params()

    def params(self) -> list[Param]:
        return self.actor_params() + self.critic_params()

    def stored(self) -> list[Param]:
        return [self.obs_shift, self.obs_scale] + self.params()

    def policy(self, obs) -> np.ndarray:
        return softmax(self.actor(self.prep(obs)))

    def value(self, obs):
        return self.critic(self.prep(obs))[..., 0]

    def act(self, obs) -> PolicyOutput:
        return PolicyOutput(self.policy(obs), float(self.value(obs)))

    def checkpoint(self, seed: int, config: dict) -> ModelCheckpoint:
        cfg = dict(config)
        cfg.update(obs_dim=self.obs_dim, n_actions=self.n_actions, hidden=self.hidden, n_nodes=self.n_nodes)
        return ModelCheckpoint("actor-critic", params_to_arrays(self.stored()), seed, cfg)

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint) -> "ActorCritic":
        if ckpt.kind != "actor-critic":
            raise ValueError(f"checkpoint holds a {ckpt.kind!r} model, not an actor-critic")
        c = ckpt.config
        model = cls(c["obs_dim"], c["n_actions"], c["hidden"], n_nodes=c.get("n_nodes"))
        load_arrays_into(model.stored(), ckpt.arrays)
        return model


# --- rollout storage ----------------------------------------------------------

@dataclass
class RolloutStep:
    state: np.ndarray
    action: int  # node id, 1-based
    reward: float
    prob: float
    value: float
    next_state: np.ndarray
    done: bool
    end: bool = False  # trajectory cut without termination
    old_dist: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.prob <= 1.0:
            raise DegeneratePolicyError(f"stored action probability {self.prob} outside (0, 1]")
        if not np.isfinite(self.reward):
            raise TrainingError("non-finite reward in rollout")


@dataclass
class RolloutBuffer:
    capacity: int
    steps: list[RolloutStep] = field(default_factory=list)

    def add(self, step: RolloutStep):
        if len(self.steps) >= self.capacity:
            raise OverflowError("rollout buffer is full")
        self.steps.append(step)

    def __len__(self):
        return len(self.steps)

    @property
    def full(self) -> bool:
        return len(self.steps) >= self.capacity

    def clear(self):
        self.steps.clear()


@dataclass
class UpdateStats:
    actor_loss: float
    critic_loss: float
    approx_kl: float
    passes: int


def _actor_grad_logits(probs, actions, eta, adv, old_dist, cfg: PpoConfig):
    """d(-objective)/d(logits) for one minibatch, averaged over samples."""
    m = len(actions)
    onehot = np.zeros_like(probs)
    onehot[np.arange(m), actions] = 1.0
    deta = eta[:, None] * (onehot - probs)  # d eta / d logits
    if cfg.objective == "clip":
        lo, hi = 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon
        # gradient flows only where the unclipped term is the active minimum
        active = np.where(adv >= 0, eta <= hi, eta >= lo)
        g = -(active * adv)[:, None] * deta
    else:
        g = -adv[:, None] * deta + cfg.kl_sigma * (probs - old_dist)
    return g / m


def surrogate_loss(agent: ActorCritic, states, actions, old_probs, adv, old_dist, cfg: PpoConfig) -> float:
    """Actor loss value: negative mean of the configured surrogate."""
    probs = agent.policy(states)
    eta = probs[np.arange(len(actions)), actions] / old_probs
    if cfg.objective == "clip":
        return -float(np.mean(clipped_objective(eta, adv, cfg.clip_epsilon)))
    return -float(np.mean(kl_objective(eta, adv, cfg.kl_sigma, probs, old_dist)))


def actor_backward(agent: ActorCritic, states, actions, old_probs, adv, old_dist, cfg: PpoConfig) -> float:
    logits = agent.actor.forward(agent.prep(states))
    probs = softmax(logits)
    eta = probs[np.arange(len(actions)), actions] / old_probs
    agent.actor.backward(_actor_grad_logits(probs, actions, eta, adv, old_dist, cfg))
    if cfg.objective == "clip":
        return -float(np.mean(clipped_objective(eta, adv, cfg.clip_epsilon)))
    return -float(np.mean(kl_objective(eta, adv, cfg.kl_sigma, probs, old_dist)))


def critic_backward(agent: ActorCritic, states, returns) -> float:
    v = agent.critic.forward(agent.prep(states))[:, 0]
    d = v - returns
    agent.critic.backward((2.0 * d / len(d))[:, None])
    return float(np.mean(d * d))


class Trainer:
    """Holds the agent, its optimizers and the minibatch RNG."""

    def __init__(self, agent: ActorCritic, cfg: PpoConfig, seed: int = 0):
        self.agent, self.cfg = agent, cfg
        self.actor_opt = Adam(agent.actor_params(), lr=cfg.actor_lr)
        self.critic_opt = Adam(agent.critic_params(), lr=cfg.critic_lr)
        self.rng = np.random.default_rng(seed)

    def targets(self, buffer: RolloutBuffer):
        steps = buffer.steps
        states = np.stack([s.state for s in steps])
        next_states = np.stack([s.next_state for s in steps])
        values = self.agent.value(states)
        next_values = self.agent.value(next_states)
        rewards = np.array([s.reward for s in steps])
        dones = np.array([s.done for s in steps])
        ends = np.array([s.end for s in steps])
        ends[-1] = ends[-1] or not dones[-1]
        ret = n_step_returns(rewards, dones, ends, np.append(values, 0.0), next_values,
                             self.cfg.gamma, self.cfg.n_step)
        if self.cfg.advantage == "td":
            adv = np.atleast_1d(advantage(rewards, next_values, values, self.cfg.gamma, dones))
        else:
            adv = ret - values
        if self.cfg.normalize_advantage and len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        return adv, ret

    def update(self, buffer: RolloutBuffer, advantages=None, returns=None) -> UpdateStats:
        cfg = self.cfg
        if len(buffer) < 1:
            raise ValueError("empty buffer")
        steps = buffer.steps
        states = np.stack([s.state for s in steps])
        actions = np.array([s.action - 1 for s in steps])
        old_probs = np.array([s.prob for s in steps])
        if cfg.objective == "kl":
            old_dist = np.stack([s.old_dist for s in steps])
        else:
            old_dist = np.zeros((len(steps), self.agent.n_actions))
        if advantages is None or returns is None:
            adv, ret = self.targets(buffer)
            advantages = adv if advantages is None else advantages
            returns = ret if returns is None else returns
        advantages = np.asarray(advantages, dtype=np.float64)
        returns = np.asarray(returns, dtype=np.float64)
        T = len(steps)
        a_losses, c_losses = [], []
        for p in range(cfg.update_count):
            order = self.rng.permutation(T)
            for start in range(0, T, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                zero_grad(self.agent.params())
                la = actor_backward(self.agent, states[idx], actions[idx], old_probs[idx],
                                    advantages[idx], old_dist[idx], cfg)
                lc = critic_backward(self.agent, states[idx], returns[idx])
                if not (np.isfinite(la) and np.isfinite(lc)):
                    raise TrainingError(f"non-finite loss on update pass {p}", p)
                clip_gradients(self.agent.actor_params(), cfg.max_grad_norm)
                clip_gradients(self.agent.critic_params(), cfg.max_grad_norm)
                self.actor_opt.step()
                self.critic_opt.step()
                a_losses.append(la)
                c_losses.append(lc)
        new = self.agent.policy(states)
        approx_kl = float(np.mean(np.log(old_probs) - np.log(new[np.arange(T), actions])))
        buffer.clear()
        return UpdateStats(float(np.mean(a_losses)), float(np.mean(c_losses)), approx_kl, cfg.update_count)


def ppo_update(trainer: Trainer, buffer: RolloutBuffer, **kw) -> UpdateStats:
    return trainer.update(buffer, **kw)


# --- training loop -----------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    best_checkpoint: ModelCheckpoint
    rewards: list[float]
    steps: list[int]
    reached: list[bool]
    best_episode: int

    def curves_csv(self) -> str:
        lines = ["episode,reward,steps,reached,ma100_reward"]
        ma = moving_average(self.rewards, 100)
        for e, (r, s, ok) in enumerate(zip(self.rewards, self.steps, self.reached)):
            lines.append(f"{e + 1},{r!r},{s},{int(ok)},{ma[e]!r}")
        return "\n".join(lines) + "\n"


def moving_average(x: Sequence[float], w: int) -> list[float]:
    """Trailing mean over up to ``w`` most recent values."""
    c = np.cumsum(np.concatenate([[0.0], np.asarray(x, dtype=np.float64)]))
    return [float((c[i + 1] - c[max(0, i + 1 - w)]) / (i + 1 - max(0, i + 1 - w))) for i in range(len(x))]


def _config_record(cfg: PpoConfig, reward_cfg: RewardConfig, topology: TopologySpec) -> dict:
    return {"ppo": asdict(cfg), "reward": asdict(reward_cfg), "topology_hash": topology.digest(), "n": topology.n}


def sample_pair(rng: np.random.Generator, n: int) -> tuple[int, int]:
    src = int(rng.integers(1, n + 1))
    dst = int(rng.integers(1, n))
    return src, dst + (dst >= src)


def train(topology: TopologySpec, snapshots: Sequence, cfg: PpoConfig = PpoConfig(), seed: int = 0,
          reward_cfg: RewardConfig = RewardConfig(), norm: NormalizationConfig = NormalizationConfig(),
          pairs: Sequence[tuple[int, int]] | None = None,
          on_episode: Callable[[int, float, int], None] | None = None) -> TrainResult:
    """Run ``cfg.episodes`` episodes, snapshot e mod len(snapshots) for episode e."""
    if len(snapshots) == 0:
        raise ValueError("need at least one snapshot")
    env = RoutingEnv(topology, reward_cfg, norm)
    infos = [as_info(s, topology) for s in snapshots]
    agent = ActorCritic(env.obs_dim, topology.n, cfg.hidden, seed=seed, n_nodes=topology.n)
    # position inputs stay raw; metric inputs are standardized over the snapshots and
    # damped so the few position indicators are not swamped by ~5n^2 metric inputs
    agent.fit_inputs(np.stack([metric_observation(i, norm) for i in infos]), start=topology.n ** 2,
                     gain=cfg.metric_gain)
    trainer = Trainer(agent, cfg, seed=seed + 1)
    rng = np.random.default_rng(seed + 2)
    buffer = RolloutBuffer(cfg.buffer_capacity)
    rewards, steps, reached = [], [], []
    record = _config_record(cfg, reward_cfg, topology)
    best_ma, best_ep, best = -np.inf, -1, None
    window = 100
    min_steps = cfg.batch_size if cfg.min_update_steps is None else cfg.min_update_steps
    for ep in range(cfg.episodes):
        src, dst = pairs[int(rng.integers(len(pairs)))] if pairs else sample_pair(rng, topology.n)
        env.reset(src, dst, infos[ep % len(infos)])
        obs = env.observation()
        total = 0.0
        while True:
            probs = agent.policy(obs)
            v = float(agent.value(obs))
            a = int(rng.choice(topology.n, p=probs))
            res = env.step(a + 1)
            if not np.isfinite(res.reward):
                raise TrainingError(f"non-finite reward in episode {ep}", ep)
            nxt = env.observation()
            truncated = res.info["truncated"]
            buffer.add(RolloutStep(obs, a + 1, res.reward, float(probs[a]), v, nxt,
                                   done=res.done and not (truncated and cfg.bootstrap_truncated),
                                   end=truncated and cfg.bootstrap_truncated,
                                   old_dist=probs))
            total += res.reward
            obs = nxt
            if len(buffer) >= cfg.batch_size * cfg.update_count or buffer.full:
                trainer.update(buffer)
            if res.done:
                break
        if len(buffer) >= min_steps:
            trainer.update(buffer)
        rewards.append(total)
        steps.append(env.steps)
        reached.append(env.trace.reached)
        if on_episode is not None:
            on_episode(ep, total, env.steps)
        if ep + 1 >= window:
            ma = float(np.mean(rewards[-window:]))
            if ma > best_ma:
                best_ma, best_ep = ma, ep
                best = agent.checkpoint(seed, record)
    final = agent.checkpoint(seed, record)
    if best is None:
        best, best_ep = final, cfg.episodes - 1
    return TrainResult(final, best, rewards, steps, reached, best_ep + 1)


# --- inference ---------------------------------------------------------------

@dataclass
class RouteResult:
    path: list[int] | None
    steps: int
    reward: float

    @property
    def ok(self) -> bool:
        return self.path is not None


def select_path(checkpoint: ModelCheckpoint | ActorCritic, topology: TopologySpec, src: int, dst: int,
                snapshot, reward_cfg: RewardConfig | None = None,
                norm: NormalizationConfig = NormalizationConfig()) -> RouteResult:
    """Greedy rollout; path is None when the step cap is hit first."""
    agent = checkpoint if isinstance(checkpoint, ActorCritic) else ActorCritic.from_checkpoint(checkpoint)
    if reward_cfg is None:
        rc = checkpoint.config.get("reward") if isinstance(checkpoint, ModelCheckpoint) else None
        reward_cfg = RewardConfig(**rc) if rc else RewardConfig()
    env = RoutingEnv(topology, reward_cfg, norm)
    if agent.obs_dim != env.obs_dim:
        raise ValueError("checkpoint was trained on a topology of a different size")
    env.reset(src, dst, as_info(snapshot, topology))
    total = 0.0
    while not env.done:
        a = int(np.argmax(agent.policy(env.observation())))
        total += env.step(a + 1).reward
    return RouteResult(list(env.path) if env.trace.reached else None, env.steps, total)


def greedy_success_rate(agent, topology: TopologySpec, snapshot, pairs=None) -> float:
    pairs = pairs or [(s, d) for s in range(1, topology.n + 1) for d in range(1, topology.n + 1) if s != d]
    return float(np.mean([select_path(agent, topology, s, d, snapshot).ok for s, d in pairs]))
