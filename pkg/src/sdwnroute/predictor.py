"""GCN-GRU forecaster for the per-link info matrices.

Each frame is the stack of the five info matrices. Node i's feature vector is
row i of every channel, concatenated (width 5n). Per step a graph
convolution mixes neighbour features, a GRU carries the result through time,
and a dense head maps the final hidden state back to the node's rows.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .checkpoint import CheckpointError, ModelCheckpoint, load_arrays_into, params_to_arrays
from .numcore import Adam, Dense, GraphConv, GRUCell, zero_grad
from .topology import INFO_CHANNELS, LinkSnapshot, TopologySpec, to_info_matrices
from .traffic import TrafficMatrixSeries

log = logging.getLogger(__name__)

N_CHANNELS = len(INFO_CHANNELS)
EPS = 1e-6


class TrainingError(RuntimeError):
    pass


@dataclass
class PredictorConfig:
    window: int = 6
    horizon: int = 1
    hidden_dim: int = 64
    learning_rate: float = 3e-3
    episodes: int = 100
    batch_size: int = 32
    l2_lambda: float = 1e-6
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.window < 1 or self.horizon < 1 or self.batch_size < 1:
            raise ValueError("window, horizon and batch_size must be at least 1")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be nonnegative")


def normalize_adjacency(A) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    a_hat = A + np.eye(A.shape[0])
    d = a_hat.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]


# ---------------------------------------------------------------- data prep


def series_frames(series: TrafficMatrixSeries | Sequence[LinkSnapshot], topology: TopologySpec) -> np.ndarray:
    """Raw info matrices, shape (N, 5, n, n), NaN off-link."""
    snaps = series.snapshots if isinstance(series, TrafficMatrixSeries) else list(series)
    return np.stack([np.stack([to_info_matrices(s, topology)[ch] for ch in INFO_CHANNELS])
                     for s in snaps])


@dataclass
class ChannelScaler:
    """Min-max per channel, fitted over all link entries of the given frames."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, frames: np.ndarray) -> "ChannelScaler":
        lo = np.nanmin(frames, axis=(0, 2, 3))
        hi = np.nanmax(frames, axis=(0, 2, 3))
        return cls(lo, hi)

    def transform(self, frames: np.ndarray) -> np.ndarray:
        shape = (1,) * (frames.ndim - 3) + (N_CHANNELS, 1, 1)
        scaled = (frames - self.lo.reshape(shape)) / (self.hi - self.lo + EPS).reshape(shape)
        return np.clip(scaled, 0.0, 1.0)


def to_features(frames: np.ndarray) -> np.ndarray:
    """(..., 5, n, n) -> (..., n, 5n) with NaN replaced by 0."""
    f = np.nan_to_num(frames, nan=0.0)
    f = np.moveaxis(f, -3, -2)  # (..., n, 5, n)
    return f.reshape(f.shape[:-2] + (-1,))


def from_features(feat: np.ndarray, n: int) -> np.ndarray:
    """(..., n, 5n) -> (..., 5, n, n)."""
    f = feat.reshape(feat.shape[:-1] + (N_CHANNELS, n))
    return np.moveaxis(f, -2, -3)


def feature_mask(topology: TopologySpec) -> np.ndarray:
    adj = topology.adjacency().astype(bool)
    return to_features(np.where(np.broadcast_to(adj, (N_CHANNELS,) + adj.shape), 1.0, np.nan)) > 0


def make_windows(features: np.ndarray, window: int, horizon: int = 1):
    """Inputs (K, window, n, 5n) and one-step targets at ``horizon`` ahead."""
    count = features.shape[0] - window - horizon + 1
    if count < 1:
        raise ValueError(f"series of {features.shape[0]} frames is shorter than window + horizon")
    X = np.stack([features[k:k + window] for k in range(count)])
    Y = np.stack([features[k + window + horizon - 1] for k in range(count)])
    return X, Y


# ---------------------------------------------------------------- model


class GCNGRU:
    def __init__(self, n: int, hidden_dim: int = 64, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n = n
        self.in_dim = N_CHANNELS * n
        self.hidden_dim = hidden_dim
        self.gcn = GraphConv(self.in_dim, hidden_dim, rng=rng, name="gcn")
        self.gru = GRUCell(hidden_dim, hidden_dim, rng=rng, name="gru")
        self.fc = Dense(hidden_dim, self.in_dim, "identity", rng=rng, name="fc")
        self._steps = 0

    def params(self):
        return self.gcn.params() + self.gru.params() + self.fc.params()

    def forward(self, X: np.ndarray, norm_adj: np.ndarray):
        """X: (B, t, n, 5n). Returns (hidden, prediction) with prediction (B, n, 5n)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4 or X.shape[2:] != (self.n, self.in_dim):
            raise ValueError(f"expected window of shape (B, t, {self.n}, {self.in_dim}), got {X.shape}")
        h = np.zeros(X.shape[:1] + (self.n, self.hidden_dim))
        for s in range(X.shape[1]):
            h = self.gru.forward(self.gcn.forward(X[:, s], norm_adj), h)
        self._steps = X.shape[1]
        return h, self.fc.forward(h)

    def backward(self, dy):
        dh = self.fc.backward(dy)
        for _ in range(self._steps):
            dg, dh = self.gru.backward(dh)
            self.gcn.backward(dg)
        self._steps = 0

    def clear_cache(self):
        for layer in (self.gcn, self.gru, self.fc):
            layer.clear_cache()
        self._steps = 0

    def predict_features(self, X, norm_adj):
        _, y = self.forward(X, norm_adj)
        self.clear_cache()
        return y


def objective(model: GCNGRU, X, Y, mask, norm_adj, l2_lambda: float, backward: bool = True) -> float:
    """Masked MSE over link entries plus (lambda/2)||theta||^2; fills grads if asked."""
    _, pred = model.forward(X, norm_adj)
    m = np.broadcast_to(mask, pred.shape)
    count = m.sum()
    diff = np.where(m, pred - Y, 0.0)
    mse = float(np.sum(diff * diff) / count)
    params = model.params()
    l2 = 0.5 * l2_lambda * sum(float(np.sum(p.value ** 2)) for p in params)
    if backward:
        model.backward(2.0 * diff / count)
        if l2_lambda:
            for p in params:
                p.grad += l2_lambda * p.value
    else:
        model.clear_cache()
    return mse + l2


def masked_mse(pred, target, mask) -> float:
    m = np.broadcast_to(mask, pred.shape)
    d = np.where(m, pred - target, 0.0)
    return float(np.sum(d * d) / m.sum())


@dataclass
class PredictorResult:
    checkpoint: ModelCheckpoint
    losses: list[float]
    test_mse: float
    persistence_mse: float
    config: PredictorConfig = field(default_factory=PredictorConfig)


def _checkpoint(model: GCNGRU, scaler: ChannelScaler, topology: TopologySpec, cfg: PredictorConfig):
    return ModelCheckpoint(
        kind="gcn-gru-predictor",
        arrays=params_to_arrays(model.params()),
        seed=cfg.seed,
        config={"predictor": asdict(cfg), "n": topology.n, "links": [list(k) for k in topology.link_keys()],
                "scaler_lo": [float(v) for v in scaler.lo], "scaler_hi": [float(v) for v in scaler.hi]},
    )


def train_predictor(series: TrafficMatrixSeries | np.ndarray, topology: TopologySpec,
                    cfg: PredictorConfig = PredictorConfig()) -> PredictorResult:
    """Fit on the first ``train_fraction`` of the series, score on the rest."""
    frames = series if isinstance(series, np.ndarray) else series_frames(series, topology)
    if len(frames) < cfg.window + cfg.horizon:
        raise ValueError("series is shorter than window + horizon")
    split = max(cfg.window + cfg.horizon, int(round(cfg.train_fraction * len(frames))))
    scaler = ChannelScaler.fit(frames[:split])
    feats = to_features(scaler.transform(frames))
    mask = feature_mask(topology)
    X, Y = make_windows(feats[:split], cfg.window, cfg.horizon)
    norm_adj = normalize_adjacency(topology.adjacency())

    rng = np.random.default_rng(cfg.seed)
    model = GCNGRU(topology.n, cfg.hidden_dim, rng=rng)
    params = model.params()
    opt = Adam(params, lr=cfg.learning_rate)
    losses = []
    for episode in range(cfg.episodes):
        order = rng.permutation(len(X))
        batch_losses = []
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            zero_grad(params)
            loss = objective(model, X[idx], Y[idx], mask, norm_adj, cfg.l2_lambda)
            if not np.isfinite(loss):
                raise TrainingError(f"predictor loss diverged at episode {episode}")
            opt.step()
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
        if episode % 20 == 0:
            log.debug("predictor episode %d loss %.6f", episode, losses[-1])

    ckpt = _checkpoint(model, scaler, topology, cfg)
    test_mse = persistence = float("nan")
    if len(frames) - split >= 1:
        lo = split - cfg.window - cfg.horizon + 1
        Xt, Yt = make_windows(feats[lo:], cfg.window, cfg.horizon)
        loaded = load_predictor(ckpt)
        test_mse = masked_mse(loaded.predict_features(Xt, norm_adj), Yt, mask)
        persistence = masked_mse(Xt[:, -1], Yt, mask)
    return PredictorResult(ckpt, losses, test_mse, persistence, cfg)


def load_predictor(ckpt: ModelCheckpoint) -> GCNGRU:
    if ckpt.kind != "gcn-gru-predictor":
        raise CheckpointError(f"expected a predictor checkpoint, got {ckpt.kind!r}")
    pcfg = ckpt.config["predictor"]
    model = GCNGRU(ckpt.config["n"], pcfg["hidden_dim"])
    load_arrays_into(model.params(), ckpt.arrays)
    return model


def check_compatible(ckpt: ModelCheckpoint, topology: TopologySpec) -> None:
    links = [tuple(k) for k in ckpt.config.get("links", [])]
    if ckpt.config.get("n") != topology.n or links != topology.link_keys():
        raise CheckpointError("predictor checkpoint was trained on a different topology")


def predict(ckpt: ModelCheckpoint, window: np.ndarray | Sequence[LinkSnapshot], topology: TopologySpec,
            steps: int | None = None, model: GCNGRU | None = None) -> list[dict[str, np.ndarray]]:
    """Forecast the next ``steps`` frames from the latest ``window`` frames.

    Output matrices live in the scaled [0, 1] domain, are symmetric, and carry
    NaN wherever there is no link.
    """
    check_compatible(ckpt, topology)
    pcfg = ckpt.config["predictor"]
    t = pcfg["window"]
    steps = pcfg["horizon"] if steps is None else steps
    frames = window if isinstance(window, np.ndarray) else series_frames(list(window), topology)
    if len(frames) < t:
        raise ValueError(f"need {t} frames of history, got {len(frames)}")
    scaler = ChannelScaler(np.array(ckpt.config["scaler_lo"]), np.array(ckpt.config["scaler_hi"]))
    feats = to_features(scaler.transform(frames[-t:]))
    model = model if model is not None else load_predictor(ckpt)
    norm_adj = normalize_adjacency(topology.adjacency())
    adj = topology.adjacency().astype(bool)
    out = []
    for _ in range(steps):
        y = model.predict_features(feats[None], norm_adj)[0]
        mats = from_features(y, topology.n)
        mats = np.clip(0.5 * (mats + np.swapaxes(mats, -1, -2)), 0.0, 1.0)
        mats = np.where(adj, mats, np.nan)
        out.append({ch: mats[c] for c, ch in enumerate(INFO_CHANNELS)})
        feats = np.concatenate([feats[1:], to_features(mats)[None]])
    return out


def predicted_frames(ckpt: ModelCheckpoint, frames: np.ndarray, topology: TopologySpec) -> list[dict]:
    """One-step forecasts for every index k >= window, each from frames[k-window:k]."""
    t = ckpt.config["predictor"]["window"]
    model = load_predictor(ckpt)
    return [predict(ckpt, frames[k - t:k], topology, steps=1, model=model)[0] for k in range(t, len(frames))]
