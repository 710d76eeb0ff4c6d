"""Classical routing comparators over a link snapshot.

ospf: Dijkstra on link delay. dvrp: Bellman-Ford on hop count.
lsrp: Dijkstra on a composite cost derived from the link reward.
Ties are broken toward the lexicographically smallest node sequence.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .topology import (INFO_CHANNELS, LinkSnapshot, NormalizationConfig, TopologySpec,
                       normalize, to_info_matrices)

# keeps composite costs strictly positive
COST_FLOOR = 1e-3


def dijkstra(n: int, cost: Callable[[int, int], float], neighbors: Mapping[int, list[int]],
             src: int, dst: int) -> tuple[list[int] | None, float]:
    """Shortest path on nodes 1..n. Returns (path, cost) or (None, inf)."""
    heap = [(0.0, (src,))]
    settled = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in settled:
            continue
        settled.add(u)
        if u == dst:
            return list(path), d
        for v in neighbors[u]:
            if v not in settled:
                c = cost(u, v)
                if c <= 0:
                    raise ValueError(f"edge cost must be positive, got {c} on {(u, v)}")
                heapq.heappush(heap, (d + c, path + (v,)))
    return None, float("inf")


def _neighbors(topology: TopologySpec) -> dict[int, list[int]]:
    return {i: topology.neighbors(i) for i in range(1, topology.n + 1)}


@dataclass
class BellmanFordResult:
    path: list[int] | None
    cost: float
    rounds: int
    converged: bool


def bellman_ford(topology: TopologySpec, cost: Callable[[int, int], float], src: int,
                 dst: int) -> BellmanFordResult:
    """Distance-vector relaxation toward ``dst``; at most n-1 rounds."""
    n = topology.n
    nbrs = _neighbors(topology)
    dist = {v: float("inf") for v in range(1, n + 1)}
    nxt: dict[int, int | None] = {v: None for v in range(1, n + 1)}
    dist[dst] = 0.0
    rounds = 0
    converged = False
    for _ in range(n - 1):
        rounds += 1
        changed = False
        for u in range(1, n + 1):
            if u == dst:
                continue
            for v in nbrs[u]:  # ascending ids, so equal costs keep the smaller next hop
                cand = cost(u, v) + dist[v]
                if cand < dist[u] - 1e-12:
                    dist[u], nxt[u] = cand, v
                    changed = True
        if not changed:
            converged = True
            break
    else:
        # one extra sweep to confirm no further relaxation is possible
        converged = all(dist[u] <= cost(u, v) + dist[v] + 1e-12
                        for u in range(1, n + 1) if u != dst for v in nbrs[u])
    if dist[src] == float("inf"):
        return BellmanFordResult(None, float("inf"), rounds, converged)
    path = [src]
    while path[-1] != dst:
        path.append(nxt[path[-1]])
        if len(path) > n:
            raise RuntimeError("distance-vector next hops form a loop")
    return BellmanFordResult(path, dist[src], rounds, converged)


def ospf_path(snapshot: LinkSnapshot, topology: TopologySpec, src: int, dst: int) -> list[int] | None:
    recs = snapshot.by_key()
    path, _ = dijkstra(topology.n, lambda u, v: recs[(min(u, v), max(u, v))].delay,
                       _neighbors(topology), src, dst)
    return path


def dvrp_path(snapshot: LinkSnapshot, topology: TopologySpec, src: int, dst: int) -> list[int] | None:
    return bellman_ford(topology, lambda u, v: 1.0, src, dst).path


def composite_costs(info: Mapping[str, np.ndarray], betas=(0.7, 0.3, 0.1, 0.1, 0.1),
                    norm: NormalizationConfig = NormalizationConfig()) -> np.ndarray:
    """Edge cost 1 - (link reward rescaled to [0, 1]) + floor; NaN off-links."""
    nm = {ch: normalize(info[ch], norm) for ch in INFO_CHANNELS}
    b1, b2, b3, b4, b5 = betas
    reward = (b1 * nm["bw_free"] - b2 * nm["delay"] - b3 * nm["pkt_err"]
              - b4 * nm["distance"] - b5 * nm["loss"])
    lo = norm.a * b1 - norm.b * (b2 + b3 + b4 + b5)
    hi = norm.b * b1 - norm.a * (b2 + b3 + b4 + b5)
    scaled = (reward - lo) / (hi - lo)
    return 1.0 - scaled + COST_FLOOR


def lsrp_path(snapshot: LinkSnapshot, topology: TopologySpec, src: int, dst: int,
              betas=(0.7, 0.3, 0.1, 0.1, 0.1)) -> list[int] | None:
    cost = composite_costs(to_info_matrices(snapshot, topology), betas)
    path, _ = dijkstra(topology.n, lambda u, v: float(cost[u - 1, v - 1]), _neighbors(topology), src, dst)
    return path


ROUTERS = {"ospf": ospf_path, "dvrp": dvrp_path, "lsrp": lsrp_path}


def route_baseline(algo: str, snapshot: LinkSnapshot, topology: TopologySpec, src: int,
                   dst: int) -> list[int] | None:
    try:
        router = ROUTERS[algo]
    except KeyError:
        raise ValueError(f"unknown baseline {algo!r}; choose from {sorted(ROUTERS)}") from None
    return router(snapshot, topology, src, dst)


def simple_paths(topology: TopologySpec, src: int, dst: int):
    """Every loop-free path from src to dst (depth-first enumeration)."""
    nbrs = _neighbors(topology)
    stack = [(src, [src])]
    while stack:
        u, path = stack.pop()
        if u == dst:
            yield path
            continue
        for v in reversed(nbrs[u]):
            if v not in path:
                stack.append((v, path + [v]))
