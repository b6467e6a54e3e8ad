"""Aggregation of simulation results into the evaluation quantities.

Total delay is queueing plus service delay. Percentiles are nearest-rank (no
interpolation) and the standard deviation is the population one, so two runs
with identical records aggregate to identical summaries.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

from fecsim.engine import RequestRecord, SimResult

DEFAULT_PERCENTILES = (50, 90, 99)


def nearest_rank(sorted_values: Sequence[float], percentile: float) -> float:
    if not sorted_values:
        raise ValueError("percentile of an empty sequence")
    if not 0 < percentile <= 100:
        raise ValueError("percentile must lie in (0, 100]")
    rank = math.ceil(percentile / 100.0 * len(sorted_values))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class Summary:
    count: int
    mean: float
    std: float
    percentiles: dict[int, float]
    throughput: float
    mean_usage: float
    composition_k: dict[int, float]
    composition_n: dict[int, float]
    overloaded: bool = False

    @property
    def median(self) -> float:
        return self.percentiles[50]


def _post_warmup(result: SimResult) -> list[RequestRecord]:
    records = result.post_warmup()
    if not records:
        raise ValueError("no post-warmup completed requests to summarize")
    return records


def summarize(result: SimResult, percentiles: Sequence[int] = DEFAULT_PERCENTILES) -> Summary:
    """Aggregate post-warmup total delays; OVERLOADED runs keep the flag."""
    records = _post_warmup(result)
    totals = sorted(r.queue_delay + r.service_delay for r in records)
    n = len(totals)
    mean = math.fsum(totals) / n
    var = math.fsum((t - mean) ** 2 for t in totals) / n
    window = result.horizon - result.warmup
    return Summary(
        count=n,
        mean=mean,
        std=math.sqrt(var),
        percentiles={int(p): nearest_rank(totals, p) for p in percentiles},
        throughput=n / window,
        mean_usage=math.fsum(r.usage for r in records) / n,
        composition_k=composition(result, "k"),
        composition_n=composition(result, "n"),
        overloaded=result.overloaded,
    )


def composition(result: SimResult, dimension: str = "k") -> dict[int, float]:
    """Fraction of post-warmup requests served at each code dimension (or length)."""
    if dimension not in ("k", "n"):
        raise ValueError("dimension must be 'k' or 'n'")
    records = _post_warmup(result)
    counts: dict[int, int] = {}
    for r in records:
        value = getattr(r, dimension)
        counts[value] = counts.get(value, 0) + 1
    total = len(records)
    return {value: counts[value] / total for value in sorted(counts)}


@dataclass(frozen=True)
class TimeBucket:
    start: float
    count: int
    mean_total_delay: float
    mean_k: float
    mean_queue_len: float


def time_series(result: SimResult, bucket: float) -> list[TimeBucket]:
    """Bucket post-warmup records by arrival time; empty buckets are omitted."""
    if bucket <= 0:
        raise ValueError("bucket width must be > 0")
    records = _post_warmup(result)
    groups: dict[int, list[RequestRecord]] = {}
    for r in records:
        groups.setdefault(int(r.arrival // bucket), []).append(r)
    out = []
    for idx in sorted(groups):
        rs = groups[idx]
        out.append(
            TimeBucket(
                start=idx * bucket,
                count=len(rs),
                mean_total_delay=math.fsum(r.queue_delay + r.service_delay for r in rs) / len(rs),
                mean_k=math.fsum(r.k for r in rs) / len(rs),
                mean_queue_len=math.fsum(r.queue_len_at_arrival for r in rs) / len(rs),
            )
        )
    return out


@dataclass(frozen=True)
class SummaryRow:
    """One row of a sweep: a (scenario, strategy, rate) cell plus its summary."""

    scenario: str
    strategy: str
    rate: float
    summary: Summary | None  # None when the run overloaded before warmup ended
    overloaded: bool = False


def write_summary_csv(
    rows: Sequence[SummaryRow],
    out: IO[str],
    k_max: int,
    percentiles: Sequence[int] = DEFAULT_PERCENTILES,
    header_lines: Sequence[str] = (),
) -> None:
    for line in header_lines:
        out.write(f"# {line}\n")
    writer = csv.writer(out)
    columns = ["scenario", "strategy", "rate_per_ms", "overloaded", "count", "mean_ms", "std_ms"]
    columns += [f"p{p}_ms" for p in percentiles]
    columns += ["throughput_per_ms", "mean_usage"]
    columns += [f"frac_k{k}" for k in range(1, k_max + 1)]
    writer.writerow(columns)
    for row in rows:
        base = [row.scenario, row.strategy, repr(row.rate), int(row.overloaded or (row.summary.overloaded if row.summary else False))]
        if row.summary is None:
            writer.writerow(base + [""] * (len(columns) - len(base)))
            continue
        s = row.summary
        record = base + [s.count, repr(s.mean), repr(s.std)]
        record += [repr(s.percentiles[int(p)]) for p in percentiles]
        record += [repr(s.throughput), repr(s.mean_usage)]
        record += [repr(s.composition_k.get(k, 0.0)) for k in range(1, k_max + 1)]
        writer.writerow(record)
