"""Network graph, port counters and the per-link metric formulas.

Units: bandwidth in Mbps (1 Mbps = 125,000 bytes/s), delay in ms, loss and
packet-error rates in percent, distance in meters.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

BYTES_PER_MBIT = 125_000.0
MIN_DELAY_MS = 0.001
INFO_CHANNELS = ("bw_free", "delay", "pkt_err", "distance", "loss")
# not-a-link marker for the diagonal and absent links
SENTINEL = np.nan


class TopologyError(ValueError):
    pass


class SamplingError(ValueError):
    pass


class UndefinedRateError(ValueError):
    pass


class IncompleteSnapshotError(ValueError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"snapshot has no data for links {self.missing}")


class EmptyMatrixError(ValueError):
    pass


def is_sentinel(m):
    return np.isnan(m)


@dataclass(frozen=True)
class NodeSpec:
    id: int
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise TopologyError(f"node {self.id} has non-finite coordinates")


@dataclass(frozen=True)
class LinkSpec:
    """Undirected link with its simulation parameters."""

    i: int
    j: int
    bw_capmax: float  # Mbps
    base_delay: float = 1.0  # ms, uncongested one-way delay
    loss_rate: float = 0.1  # percent
    err_rate: float = 0.1  # percent

    @property
    def key(self) -> tuple[int, int]:
        return (min(self.i, self.j), max(self.i, self.j))


@dataclass(frozen=True)
class TopologySpec:
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        ids = [nd.id for nd in self.nodes]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise TopologyError(f"node ids must be 1..n, got {sorted(ids)}")
        if sorted(ids) != ids:
            object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda nd: nd.id)))
        seen = set()
        for lk in self.links:
            if lk.i == lk.j:
                raise TopologyError(f"self-loop at node {lk.i}")
            if not (1 <= lk.i <= len(ids) and 1 <= lk.j <= len(ids)):
                raise TopologyError(f"link {lk.key} references an unknown node")
            if lk.key in seen:
                raise TopologyError(f"duplicate link {lk.key}")
            if lk.bw_capmax <= 0:
                raise TopologyError(f"link {lk.key} has non-positive capacity")
            seen.add(lk.key)
        if not self._connected():
            raise TopologyError("topology is not connected")

    def _connected(self) -> bool:
        if not self.nodes:
            return False
        adj = {nd.id: set() for nd in self.nodes}
        for lk in self.links:
            adj[lk.i].add(lk.j)
            adj[lk.j].add(lk.i)
        stack, seen = [1], {1}
        while stack:
            u = stack.pop()
            for v in adj[u] - seen:
                seen.add(v)
                stack.append(v)
        return len(seen) == len(self.nodes)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> NodeSpec:
        return self.nodes[node_id - 1]

    def link(self, i: int, j: int) -> LinkSpec:
        key = (min(i, j), max(i, j))
        for lk in self.links:
            if lk.key == key:
                return lk
        raise KeyError(key)

    def has_link(self, i: int, j: int) -> bool:
        return bool(self.adjacency()[i - 1, j - 1])

    def link_keys(self) -> list[tuple[int, int]]:
        return [lk.key for lk in self.links]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) + 1 for j in np.flatnonzero(self.adjacency()[i - 1])]

    def adjacency(self) -> np.ndarray:
        cached = self.__dict__.get("_adj")
        if cached is None:
            cached = np.zeros((self.n, self.n))
            for lk in self.links:
                cached[lk.i - 1, lk.j - 1] = cached[lk.j - 1, lk.i - 1] = 1.0
            cached.setflags(write=False)
            object.__setattr__(self, "_adj", cached)
        return cached

    def distance(self, i: int, j: int) -> float:
        return compute_distance(self.node(i), self.node(j))

    def to_dict(self) -> dict:
        return {
            "nodes": [asdict(nd) for nd in self.nodes],
            "links": [asdict(lk) for lk in self.links],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TopologySpec":
        try:
            nodes = [NodeSpec(int(nd["id"]), float(nd["x"]), float(nd["y"]), float(nd.get("z", 0.0)))
                     for nd in d["nodes"]]
            links = [LinkSpec(int(lk["i"]), int(lk["j"]), float(lk["bw_capmax"]),
                              float(lk.get("base_delay", 1.0)), float(lk.get("loss_rate", 0.1)),
                              float(lk.get("err_rate", 0.1)))
                     for lk in d["links"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise TopologyError(f"malformed topology description: {exc}") from exc
        return cls(tuple(nodes), tuple(links))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TopologySpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def generate_topology(n_nodes: int = 14, n_links: int = 25, seed: int = 0, area: float = 300.0,
                      min_dist: float = 30.0, max_dist: float = 110.0) -> TopologySpec:
    """Random connected AP layout whose link lengths fall in [min_dist, max_dist].

    Link parameters are uniform draws: capacity 5-40 Mbps, delay 1-10 ms,
    loss 0.1-1 %, packet error 0.05-0.5 %.
    """
    if n_links < n_nodes - 1:
        raise TopologyError("too few links for a connected graph")
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        pts = rng.uniform(0.0, area, size=(n_nodes, 2))
        zs = rng.uniform(0.0, 10.0, size=n_nodes)
        xyz = np.column_stack([pts, zs])
        d = np.linalg.norm(xyz[:, None, :] - xyz[None, :, :], axis=-1)
        if np.any(d[np.triu_indices(n_nodes, 1)] < min_dist):
            continue
        cand = [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)
                if min_dist <= d[i, j] <= max_dist]
        if len(cand) < n_links:
            continue
        # random spanning tree over candidate edges, then random extra edges
        order = rng.permutation(len(cand))
        parent = list(range(n_nodes))

        def find(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        chosen = []
        for k in order:
            i, j = cand[k]
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
                chosen.append(cand[k])
        if len(chosen) != n_nodes - 1:
            continue
        rest = [cand[k] for k in order if cand[k] not in chosen]
        chosen += rest[: n_links - len(chosen)]
        chosen.sort()
        nodes = tuple(NodeSpec(i + 1, round(float(xyz[i, 0]), 3), round(float(xyz[i, 1]), 3),
                               round(float(xyz[i, 2]), 3)) for i in range(n_nodes))
        links = tuple(
            LinkSpec(i + 1, j + 1,
                     bw_capmax=round(float(rng.uniform(5, 40)), 3),
                     base_delay=round(float(rng.uniform(1, 10)), 3),
                     loss_rate=round(float(rng.uniform(0.1, 1.0)), 4),
                     err_rate=round(float(rng.uniform(0.05, 0.5)), 4))
            for i, j in chosen)
        return TopologySpec(nodes, links)
    raise TopologyError("could not place a connected layout; relax the distance bounds")


def bundled_topology() -> TopologySpec:
    """The packaged 14-node, 25-link topology."""
    text = resources.files("sdwnroute.data").joinpath("topology14.json").read_text()
    return TopologySpec.from_dict(json.loads(text))


# ---------------------------------------------------------------- counters


@dataclass(frozen=True)
class PortCounters:
    tx_b: float = 0.0
    rx_b: float = 0.0
    tx_p: float = 0.0
    rx_p: float = 0.0
    t_d: float = 0.0

    def __post_init__(self):
        if min(self.tx_b, self.rx_b, self.tx_p, self.rx_p, self.t_d) < 0:
            raise ValueError("port counters must be nonnegative")

    def __sub__(self, other: "PortCounters") -> "PortCounters":
        return PortCounters(self.tx_b - other.tx_b, self.rx_b - other.rx_b,
                            self.tx_p - other.tx_p, self.rx_p - other.rx_p,
                            self.t_d - other.t_d)


def port_bandwidth(before: PortCounters, after: PortCounters) -> float:
    """Used bandwidth (Mbps) seen by one port between two samples."""
    dt = after.t_d - before.t_d
    if dt <= 0:
        raise SamplingError(f"non-positive sampling interval {dt}")
    moved = abs((after.tx_b + after.rx_b) - (before.tx_b + before.rx_b))
    return abs(moved / dt) / BYTES_PER_MBIT


def compute_bandwidth(bw_capmax: float, before: Sequence[PortCounters] | PortCounters,
                      after: Sequence[PortCounters] | PortCounters) -> tuple[float, float]:
    """Returns (bw_use, bw_free) for a link.

    ``before``/``after`` hold the counters of the link's ports at two samples;
    the used bandwidth is the larger of the two ports' rates.
    """
    if isinstance(before, PortCounters):
        before, after = [before], [after]
    bw_use = max(port_bandwidth(b, a) for b, a in zip(before, after))
    return bw_use, abs(bw_capmax - bw_use)


def compute_delay(t_lldp_i: float, t_lldp_j: float, t_echo_i: float, t_echo_j: float) -> float:
    delay = (t_lldp_i + t_lldp_j - t_echo_i - t_echo_j) / 2.0
    return max(delay, MIN_DELAY_MS)


def compute_loss_err_drop(port_i: PortCounters, port_j: PortCounters) -> tuple[float, float, float]:
    """Loss %, packet-error % and dropped packets from the two ends of a link.

    Inputs are counter deltas over one sampling interval (or cumulative
    counters, the formulas only use ratios and differences).
    """
    if port_i.tx_p <= 0 or port_j.tx_p <= 0:
        raise UndefinedRateError("loss rate undefined: a port sent no packets")
    loss = max(1.0 - port_j.rx_p / port_i.tx_p, 1.0 - port_i.rx_p / port_j.tx_p) * 100.0
    if port_i.rx_b <= 0:
        raise UndefinedRateError("packet error rate undefined: no bytes received")
    pkt_err = abs((port_i.rx_b - port_j.tx_b) / port_i.rx_b) * 100.0
    pkt_drop = abs(port_i.rx_p - port_j.tx_p)
    return loss, pkt_err, pkt_drop


def compute_distance(n1: NodeSpec, n2: NodeSpec) -> float:
    d = math.sqrt((n1.x - n2.x) ** 2 + (n1.y - n2.y) ** 2 + (n1.z - n2.z) ** 2)
    if d == 0.0:
        warnings.warn(f"nodes {n1.id} and {n2.id} are co-located", stacklevel=2)
    return d


# ---------------------------------------------------------------- snapshots


@dataclass(frozen=True)
class LinkRecord:
    """Metrics of one link at one timestamp."""

    i: int
    j: int
    bw_free: float
    bw_use: float
    delay: float
    loss: float
    pkt_err: float
    pkt_drop: float
    distance: float
    t_lldp_i: float = 0.0
    t_lldp_j: float = 0.0
    t_echo_i: float = 0.0
    t_echo_j: float = 0.0
    sent_mb: float = 0.0  # megabits carried during the interval

    @property
    def key(self) -> tuple[int, int]:
        return (min(self.i, self.j), max(self.i, self.j))

    FIELDS = ("i", "j", "bw_free", "bw_use", "delay", "loss", "pkt_err", "pkt_drop",
              "distance", "t_lldp_i", "t_lldp_j", "t_echo_i", "t_echo_j", "sent_mb")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)

    @classmethod
    def from_tuple(cls, values: Sequence) -> "LinkRecord":
        if len(values) != len(cls.FIELDS):
            raise ValueError(f"expected {len(cls.FIELDS)} link fields, got {len(values)}")
        return cls(int(values[0]), int(values[1]), *(float(v) for v in values[2:]))


@dataclass(frozen=True)
class LinkSnapshot:
    timestamp: float
    records: tuple[LinkRecord, ...]
    clock: float | None = None  # simulated time of day, seconds

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(sorted(self.records, key=lambda r: r.key)))
        if self.clock is None:
            object.__setattr__(self, "clock", float(self.timestamp) % 86400.0)

    def by_key(self) -> dict[tuple[int, int], LinkRecord]:
        return {r.key: r for r in self.records}

    def record(self, i: int, j: int) -> LinkRecord:
        return self.by_key()[(min(i, j), max(i, j))]


def to_info_matrices(snapshot: LinkSnapshot, topology: TopologySpec) -> dict[str, np.ndarray]:
    """Symmetric n-by-n matrices for each channel in ``INFO_CHANNELS``."""
    recs = snapshot.by_key()
    missing = set(topology.link_keys()) - set(recs)
    if missing:
        raise IncompleteSnapshotError(missing)
    n = topology.n
    out = {}
    for ch in INFO_CHANNELS:
        m = np.full((n, n), SENTINEL)
        for (i, j) in topology.link_keys():
            m[i - 1, j - 1] = m[j - 1, i - 1] = getattr(recs[(i, j)], ch)
        out[ch] = m
    return out


@dataclass(frozen=True)
class NormalizationConfig:
    a: float = 0.0
    b: float = 1.0
    epsilon_denominator: float = 1e-6

    def __post_init__(self):
        if not (0.0 <= self.a < self.b <= 1.0):
            raise ValueError(f"need 0 <= a < b <= 1, got a={self.a}, b={self.b}")


def normalize(matrix, cfg: NormalizationConfig = NormalizationConfig()) -> np.ndarray:
    """Min-max scale the non-sentinel entries into [a, b]; sentinels pass through."""
    m = np.asarray(matrix, dtype=np.float64)
    mask = ~is_sentinel(m)
    if not mask.any():
        raise EmptyMatrixError("matrix has no non-sentinel entries")
    lo, hi = m[mask].min(), m[mask].max()
    out = m.copy()
    out[mask] = cfg.a + (m[mask] - lo) * (cfg.b - cfg.a) / (hi - lo + cfg.epsilon_denominator)
    return out
