"""Path quality metrics and algorithm comparison reports.

Unit convention for throughput: loss and packet-error rates enter the radical
as fractions, delay is in seconds and the carried data b_e in megabits.
Per-snapshot path metrics sum over the path's edges by default; pass
``edge_reduce="mean"`` to average them instead.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

from .topology import LinkSnapshot

METRICS = ("throughput", "delay", "loss", "pkt_err", "distance")
BUCKET_SECONDS = 3 * 3600


class EvaluationError(ValueError):
    pass


def edge_throughput(bw_use: float, loss: float, pkt_err: float, sent_mb: float, delay_s: float) -> float:
    """bw_use * sqrt(1 - (loss + err)) * b_e / (2 * delay); rates as fractions."""
    lost = loss + pkt_err
    if lost >= 1.0:
        warnings.warn("loss plus packet error reaches 1; edge carries nothing", RuntimeWarning)
        return 0.0
    if delay_s <= 0:
        raise EvaluationError("edge delay must be positive")
    return bw_use * math.sqrt(1.0 - lost) * sent_mb / (2.0 * delay_s)


def _edges(path: Sequence[int]):
    if path is None or len(path) < 2:
        raise EvaluationError("a path needs at least two nodes")
    return list(zip(path[:-1], path[1:]))


def path_throughput(path: Sequence[int], snapshot: LinkSnapshot) -> float:
    recs = snapshot.by_key()
    total = 0.0
    for u, v in _edges(path):
        r = recs[(min(u, v), max(u, v))]
        total += edge_throughput(r.bw_use, r.loss / 100.0, r.pkt_err / 100.0, r.sent_mb, r.delay / 1000.0)
    return total


@dataclass(frozen=True)
class EvalMetrics:
    throughput: float  # Mbps
    delay: float  # ms
    loss: float  # %
    pkt_err: float  # %
    distance: float  # m
    samples: int = 1

    def as_dict(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def path_metrics(path: Sequence[int], snapshot: LinkSnapshot, edge_reduce: str = "sum") -> EvalMetrics:
    if edge_reduce not in ("sum", "mean"):
        raise ValueError("edge_reduce must be 'sum' or 'mean'")
    recs = snapshot.by_key()
    rows = [recs[(min(u, v), max(u, v))] for u, v in _edges(path)]
    red = (lambda xs: float(sum(xs))) if edge_reduce == "sum" else (lambda xs: float(sum(xs) / len(xs)))
    return EvalMetrics(
        throughput=path_throughput(path, snapshot),
        delay=red([r.delay for r in rows]),
        loss=red([r.loss for r in rows]),
        pkt_err=red([r.pkt_err for r in rows]),
        distance=red([r.distance for r in rows]),
    )


def aggregate(per_sample: Sequence[EvalMetrics]) -> EvalMetrics:
    """Average per-snapshot (or per-cell) metrics."""
    if len(per_sample) == 0:
        raise EvaluationError("nothing to aggregate")
    k = len(per_sample)
    return EvalMetrics(*(float(sum(getattr(m, f) for m in per_sample) / k) for f in METRICS), samples=k)


def bucket_label(clock: float) -> str:
    b = int((clock % 86400.0) // BUCKET_SECONDS)
    return f"{3 * b:02d}-{3 * b + 3:02d}h"


def pct_delta(value: float, reference: float) -> float:
    """Relative difference of ``value`` over ``reference`` in percent."""
    if reference == 0:
        return 0.0 if value == 0 else math.copysign(math.inf, value)
    return (value - reference) / abs(reference) * 100.0


Router = Callable[[LinkSnapshot, int, int], "Sequence[int] | None"]


@dataclass
class ComparisonReport:
    algorithms: list[str]
    buckets: list[str]
    metrics: dict[tuple[str, str], EvalMetrics]
    no_path: dict[tuple[str, str], int]

    def rows(self):
        for algo in self.algorithms:
            for b in self.buckets:
                m = self.metrics.get((algo, b))
                if m is not None:
                    for name in METRICS:
                        yield algo, b, name, getattr(m, name)
                    yield algo, b, "samples", m.samples
                yield algo, b, "no_path", self.no_path.get((algo, b), 0)

    def to_csv(self) -> str:
        lines = ["algorithm,bucket,metric,value"]
        for algo, b, name, v in self.rows():
            lines.append(f"{algo},{b},{name},{v!r}" if isinstance(v, float) else f"{algo},{b},{name},{v}")
        return "\n".join(lines) + "\n"

    def deltas(self, reference: str, bucket: str = "all") -> dict[str, dict[str, float]]:
        """Percent change of ``reference`` relative to every algorithm."""
        ref = self.metrics[(reference, bucket)]
        out = {}
        for algo in self.algorithms:
            m = self.metrics.get((algo, bucket))
            if m is not None:
                out[algo] = {name: pct_delta(getattr(ref, name), getattr(m, name)) for name in METRICS}
        return out

    def summary(self, reference: str | None = None) -> str:
        head = f"{'algorithm':<12}" + "".join(f"{m:>14}" for m in METRICS) + f"{'no_path':>9}"
        lines = [head, "-" * len(head)]
        for algo in self.algorithms:
            m = self.metrics.get((algo, "all"))
            vals = "".join(f"{getattr(m, k):>14.4f}" for k in METRICS) if m else "".join(
                f"{'-':>14}" for _ in METRICS)
            lines.append(f"{algo:<12}{vals}{self.no_path.get((algo, 'all'), 0):>9}")
        if reference is not None and (reference, "all") in self.metrics:
            lines.append("")
            lines.append(f"change of {reference} relative to each algorithm (%)")
            for algo, d in self.deltas(reference).items():
                if algo != reference:
                    lines.append(f"{algo:<12}" + "".join(f"{d[k]:>14.2f}" for k in METRICS))
        return "\n".join(lines) + "\n"


def compare(routers: Mapping[str, Router], snapshots: Sequence[LinkSnapshot],
            pairs: Sequence[tuple[int, int]], edge_reduce: str = "sum") -> ComparisonReport:
    """Route every pair on every snapshot with every router and tabulate."""
    if not routers or not snapshots or not pairs:
        raise EvaluationError("need routers, snapshots and pairs")
    cells: dict[tuple[str, str], list[EvalMetrics]] = {}
    no_path: dict[tuple[str, str], int] = {}
    buckets = sorted({bucket_label(s.clock) for s in snapshots})
    for algo, route in routers.items():
        for snap in snapshots:
            b = bucket_label(snap.clock)
            for src, dst in pairs:
                path = route(snap, src, dst)
                for key in ((algo, b), (algo, "all")):
                    if path is None:
                        no_path[key] = no_path.get(key, 0) + 1
                    else:
                        cells.setdefault(key, []).append(path_metrics(path, snap, edge_reduce))
    metrics = {k: aggregate(v) for k, v in cells.items()}
    return ComparisonReport(list(routers), buckets + ["all"], metrics, no_path)


def report_dict(report: ComparisonReport) -> dict:
    return {f"{a}/{b}": asdict(m) for (a, b), m in sorted(report.metrics.items())}
