"""Synthetic traffic: gravity-model demands, port-counter simulation, snapshot files.

Packet loss is injected into packet counters and corruption into byte
counters, so the loss and packet-error formulas read back the configured
rates. Load above capacity is clipped at capacity and inflates both delay and
loss on that link.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .baselines import dijkstra
from .topology import (BYTES_PER_MBIT, LinkRecord, LinkSnapshot, PortCounters, TopologySpec,
                       UndefinedRateError, compute_bandwidth, compute_delay, compute_loss_err_drop)

SERIES_FORMAT = "sdwnroute-snapshots"
SERIES_VERSION = 1
MAX_DEMAND_MBPS = 50.0
DAY = 86400.0
PEAK_START, PEAK_END = 10 * 3600.0, 15 * 3600.0
RAMP_UP_START, RAMP_DOWN_END = 5 * 3600.0, 22 * 3600.0
NIGHT_LEVEL = 0.2


class SeriesFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


@dataclass(frozen=True)
class TrafficDemand:
    src: int
    dst: int
    rate: float  # Mbps
    timestamp: float = 0.0

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("demand endpoints must differ")
        if not 0.0 <= self.rate <= MAX_DEMAND_MBPS:
            raise ValueError(f"demand rate {self.rate} outside [0, {MAX_DEMAND_MBPS}] Mbps")


def gravity_demand(masses: Sequence[float], total_rate: float, t: float | None = None) -> np.ndarray:
    """Demand matrix whose off-diagonal entries share ``total_rate`` by mass products.

    With ``t`` given, the total is scaled by the diurnal profile at that time.
    """
    m = np.asarray(masses, dtype=np.float64)
    if m.size < 2:
        raise ValueError("gravity model needs at least two nodes")
    if np.any(m <= 0):
        raise ValueError("node masses must be positive")
    if total_rate < 0:
        raise ValueError("total rate must be nonnegative")
    prod = np.outer(m, m)
    np.fill_diagonal(prod, 0.0)
    scale = total_rate * (diurnal_profile(t) if t is not None else 1.0)
    return scale * prod / prod.sum()


def diurnal_profile(t: float) -> float:
    """Load multiplier for a time of day in seconds.

    Flat 1.0 over 10:00-15:00, cosine ramps 05:00-10:00 and 15:00-22:00,
    0.2 overnight.
    """
    if not 0.0 <= t < DAY:
        raise ValueError(f"time of day must be in [0, 86400), got {t}")
    if PEAK_START <= t <= PEAK_END:
        return 1.0
    if RAMP_UP_START < t < PEAK_START:
        frac = (t - RAMP_UP_START) / (PEAK_START - RAMP_UP_START)
    elif PEAK_END < t < RAMP_DOWN_END:
        frac = (RAMP_DOWN_END - t) / (RAMP_DOWN_END - PEAK_END)
    else:
        return NIGHT_LEVEL
    return NIGHT_LEVEL + (1.0 - NIGHT_LEVEL) * 0.5 * (1.0 - math.cos(math.pi * frac))


PortKey = tuple[int, int]  # (node, neighbour): the port on `node` facing `neighbour`


def initial_counters(topology: TopologySpec, t_d: float = 0.0) -> dict[PortKey, PortCounters]:
    ports = {}
    for lk in topology.links:
        ports[(lk.i, lk.j)] = PortCounters(t_d=t_d)
        ports[(lk.j, lk.i)] = PortCounters(t_d=t_d)
    return ports


def congested_delay(base_delay: float, utilization: float) -> float:
    """One-way link delay (ms) given offered load / capacity."""
    if utilization <= 1.0:
        return base_delay * (1.0 + utilization)
    return base_delay * (2.0 + 5.0 * (utilization - 1.0))


@dataclass
class CountResult:
    counters: dict[PortKey, PortCounters]
    snapshot: LinkSnapshot
    offered: dict[tuple[int, int], float] = field(default_factory=dict)  # Mbps per link


def route_and_count(demands: Sequence[TrafficDemand], paths: Sequence[Sequence[int]],
                    topology: TopologySpec, interval: float = 5.0,
                    counters: Mapping[PortKey, PortCounters] | None = None,
                    timestamp: float | None = None, rng: np.random.Generator | None = None,
                    background_mbps: float = 0.0, packet_bytes: int = 1000,
                    jitter: float = 0.05, clock: float | None = None) -> CountResult:
    """Push one interval of traffic through the links and read back a snapshot.

    Without ``rng`` the loss/error injection uses expected counts and the
    probe times carry no jitter.
    """
    if len(demands) != len(paths):
        raise ValueError("need exactly one path per demand")
    if interval <= 0:
        raise ValueError("interval must be positive")
    if counters is None:
        counters = initial_counters(topology, 0.0 if timestamp is None else timestamp)
    t0 = next(iter(counters.values())).t_d if counters else 0.0
    ts = t0 if timestamp is None else timestamp

    directed = {}
    for lk in topology.links:
        directed[(lk.i, lk.j)] = background_mbps
        directed[(lk.j, lk.i)] = background_mbps
    for dem, path in zip(demands, paths):
        if len(path) < 2 or path[0] != dem.src or path[-1] != dem.dst:
            raise ValueError(f"path {list(path)} does not join {dem.src}->{dem.dst}")
        for u, v in zip(path[:-1], path[1:]):
            if (u, v) not in directed:
                raise ValueError(f"path {list(path)} uses missing link {(u, v)}")
            directed[(u, v)] += dem.rate

    new = dict(counters)
    records = []
    offered_by_link = {}
    for lk in topology.links:
        i, j = lk.i, lk.j
        offered = directed[(i, j)] + directed[(j, i)]
        offered_by_link[lk.key] = offered
        util = offered / lk.bw_capmax
        carry = min(1.0, 1.0 / util) if util > 0 else 1.0
        loss_p = lk.loss_rate / 100.0 * max(1.0, util)
        err_p = lk.err_rate / 100.0
        deltas = {}
        for u, v in ((i, j), (j, i)):
            tx_bytes = directed[(u, v)] * carry * BYTES_PER_MBIT * interval
            tx_pkts = round(tx_bytes / packet_bytes)
            tx_bytes = tx_pkts * packet_bytes
            if rng is None:
                lost = round(tx_pkts * min(loss_p, 1.0))
                corrupt = round(tx_bytes * err_p)
            else:
                lost = int(rng.binomial(tx_pkts, min(loss_p, 1.0))) if tx_pkts else 0
                corrupt = int(rng.binomial(int(tx_bytes), err_p)) if tx_bytes else 0
            deltas[(u, v)] = (tx_bytes, tx_pkts, tx_bytes - corrupt, tx_pkts - lost)
        # port (i, j) sends i->j and receives j->i
        port_delta = {}
        for u, v in ((i, j), (j, i)):
            txb, txp, _, _ = deltas[(u, v)]
            _, _, rxb, rxp = deltas[(v, u)]
            port_delta[(u, v)] = PortCounters(txb, rxb, txp, rxp, interval)
            prev = counters[(u, v)]
            new[(u, v)] = PortCounters(prev.tx_b + txb, prev.rx_b + rxb, prev.tx_p + txp,
                                       prev.rx_p + rxp, prev.t_d + interval)
        bw_use, bw_free = compute_bandwidth(lk.bw_capmax, [counters[(i, j)], counters[(j, i)]],
                                            [new[(i, j)], new[(j, i)]])
        bw_use = min(bw_use, lk.bw_capmax)
        bw_free = abs(lk.bw_capmax - bw_use)
        true_delay = congested_delay(lk.base_delay, util)
        if rng is None:
            echo_i = echo_j = 1.0
            jit_i = jit_j = 0.0
        else:
            echo_i, echo_j = rng.uniform(0.5, 2.0, size=2)
            jit_i, jit_j = rng.normal(0.0, jitter * lk.base_delay, size=2)
        lldp_i = echo_i + true_delay + jit_i
        lldp_j = echo_j + true_delay + jit_j
        delay = compute_delay(lldp_i, lldp_j, echo_i, echo_j)
        try:
            loss, pkt_err, pkt_drop = compute_loss_err_drop(port_delta[(i, j)], port_delta[(j, i)])
        except UndefinedRateError:
            # idle link: report the configured (congestion-adjusted) rates
            loss, pkt_err, pkt_drop = min(loss_p, 1.0) * 100.0, err_p * 100.0, 0.0
        sent_mb = sum(deltas[d][0] for d in ((i, j), (j, i))) / BYTES_PER_MBIT
        records.append(LinkRecord(i, j, bw_free, bw_use, delay, min(loss, 100.0), min(pkt_err, 100.0),
                                  pkt_drop, topology.distance(i, j), float(lldp_i), float(lldp_j),
                                  float(echo_i), float(echo_j), sent_mb))
    clock = (ts % DAY) if clock is None else clock
    return CountResult(new, LinkSnapshot(ts, tuple(records), clock), offered_by_link)


@dataclass
class TrafficMatrixSeries:
    topology_hash: str
    sample_interval: float
    seed: int | None
    snapshots: list[LinkSnapshot]

    def __post_init__(self):
        ts = [s.timestamp for s in self.snapshots]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("snapshot timestamps must be strictly increasing")

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, k):
        return self.snapshots[k]

    def at(self, timestamp: float) -> LinkSnapshot:
        for s in self.snapshots:
            if s.timestamp == timestamp:
                return s
        raise KeyError(f"no snapshot at t={timestamp}")

    def index_of(self, timestamp: float) -> int:
        for k, s in enumerate(self.snapshots):
            if s.timestamp == timestamp:
                return k
        raise KeyError(f"no snapshot at t={timestamp}")


@dataclass(frozen=True)
class TrafficConfig:
    total_rate: float = 150.0  # Mbps offered network-wide at peak
    active_fraction: float = 0.3  # share of ordered pairs carrying a flow per interval
    rate_noise: float = 0.3  # log-normal sigma on each flow's rate
    mass_jitter: float = 0.2
    background_mbps: float = 0.05
    interval: float = 5.0
    start_clock: float = 0.0  # time of day of the first sample
    clock_scale: float = DAY / (1000 * 5.0)  # simulated day-seconds per series second; 1000 samples = 1 day
    jitter: float = 0.05


def route_table(topology: TopologySpec) -> dict[tuple[int, int], list[int]]:
    """Fixed min-base-delay paths the generator routes demands over."""
    nbrs = {i: topology.neighbors(i) for i in range(1, topology.n + 1)}
    table = {}
    for s in range(1, topology.n + 1):
        for d in range(1, topology.n + 1):
            if s != d:
                path, _ = dijkstra(topology.n, lambda u, v: topology.link(u, v).base_delay, nbrs, s, d)
                table[(s, d)] = path
    return table


def generate_series(topology: TopologySpec, count: int, seed: int,
                    cfg: TrafficConfig = TrafficConfig()) -> TrafficMatrixSeries:
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    n = topology.n
    masses = 1.0 + cfg.mass_jitter * rng.uniform(-1.0, 1.0, size=n)
    routes = route_table(topology)
    counters = initial_counters(topology, 0.0)
    snaps = []
    for k in range(count):
        ts = k * cfg.interval
        clock = (cfg.start_clock + ts * cfg.clock_scale) % DAY
        gravity = gravity_demand(masses, cfg.total_rate, clock)
        demands, paths = [], []
        active = rng.random((n, n)) < cfg.active_fraction
        noise = rng.lognormal(0.0, cfg.rate_noise, size=(n, n))
        for s in range(1, n + 1):
            for d in range(1, n + 1):
                if s != d and active[s - 1, d - 1]:
                    rate = gravity[s - 1, d - 1] / cfg.active_fraction * noise[s - 1, d - 1]
                    demands.append(TrafficDemand(s, d, float(min(rate, MAX_DEMAND_MBPS)), ts))
                    paths.append(routes[(s, d)])
        res = route_and_count(demands, paths, topology, cfg.interval, counters, ts, rng,
                              cfg.background_mbps, jitter=cfg.jitter, clock=clock)
        counters = res.counters
        snaps.append(res.snapshot)
    return TrafficMatrixSeries(topology.digest(), cfg.interval, seed, snaps)


# ---------------------------------------------------------------- persistence


def _snapshot_record(s: LinkSnapshot) -> dict:
    return {"t": s.timestamp, "clock": s.clock, "links": [list(r.as_tuple()) for r in s.records]}


def series_to_text(series: TrafficMatrixSeries) -> str:
    header = {"format": SERIES_FORMAT, "version": SERIES_VERSION, "topology_hash": series.topology_hash,
              "interval": series.sample_interval, "seed": series.seed, "count": len(series),
              "fields": list(LinkRecord.FIELDS)}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(_snapshot_record(s), sort_keys=True) for s in series.snapshots]
    return "\n".join(lines) + "\n"


def write_series(path, series: TrafficMatrixSeries) -> None:
    Path(path).write_text(series_to_text(series))


def read_series(path) -> TrafficMatrixSeries:
    data = Path(path).read_bytes()
    offset = 0
    header = None
    snaps = []
    for raw in data.splitlines(keepends=True):
        line = raw.strip()
        if line:
            try:
                rec = json.loads(line.decode("utf-8"))
                if header is None:
                    if rec.get("format") != SERIES_FORMAT:
                        raise ValueError("not a snapshot file")
                    if rec.get("version") != SERIES_VERSION:
                        raise ValueError(f"unsupported version {rec.get('version')}")
                    header = rec
                else:
                    records = tuple(LinkRecord.from_tuple(v) for v in rec["links"])
                    snaps.append(LinkSnapshot(float(rec["t"]), records, float(rec["clock"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise SeriesFormatError(f"corrupt record: {exc}", offset) from exc
        offset += len(raw)
    if header is None:
        raise SeriesFormatError("missing header record", 0)
    if header.get("count") is not None and header["count"] != len(snaps):
        raise SeriesFormatError(f"header promises {header['count']} snapshots, found {len(snaps)}", offset)
    return TrafficMatrixSeries(header["topology_hash"], float(header["interval"]), header.get("seed"), snaps)


def series_digest(series: TrafficMatrixSeries) -> str:
    return hashlib.sha256(series_to_text(series).encode()).hexdigest()


def bundled_series(count: int = 1000, seed: int = 42) -> TrafficMatrixSeries:
    """Deterministic series over the packaged topology."""
    from .topology import bundled_topology
    return generate_series(bundled_topology(), count, seed)
