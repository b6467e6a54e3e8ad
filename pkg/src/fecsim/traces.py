"""Task-delay trace ingestion, delay-law fitting, and synthetic trace generation.

Trace CSV format: header ``chunk_size_mb,delay_ms[,op_type,timestamp]``, one
row per measured task, ``#`` comment lines allowed anywhere.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from fecsim.model import DelayParams, delay_floor, tail_mean

TRIM_FRACTION = 0.1
MIN_RECORDS_PER_SIZE = 20

# Moments of a unit exponential conditioned below its (1 - TRIM_FRACTION)
# quantile: dropping the top 10% shrinks the tail mean and std by these exact
# factors, which the fit inverts so the recovered law is unbiased.
_T = -math.log(TRIM_FRACTION)
_TRIM_MEAN = (1.0 - TRIM_FRACTION * (1.0 + _T)) / (1.0 - TRIM_FRACTION)
_TRIM_SECOND = (2.0 - TRIM_FRACTION * (_T * _T + 2.0 * _T + 2.0)) / (1.0 - TRIM_FRACTION)
_TRIM_STD = math.sqrt(_TRIM_SECOND - _TRIM_MEAN * _TRIM_MEAN)


@dataclass(frozen=True)
class TraceRecord:
    chunk_size_mb: float
    delay_ms: float
    op_type: str | None = None
    timestamp: float | None = None

    def __post_init__(self) -> None:
        if self.chunk_size_mb <= 0:
            raise ValueError("chunk_size_mb must be > 0")
        if self.delay_ms <= 0:
            raise ValueError("delay_ms must be > 0")


def read_trace_csv(source: IO[str] | str | Path) -> list[TraceRecord]:
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_trace_csv(fh)
    rows = (line for line in source if line.strip() and not line.lstrip().startswith("#"))
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None or [c.strip() for c in header[:2]] != ["chunk_size_mb", "delay_ms"]:
        raise ValueError("trace CSV must start with a 'chunk_size_mb,delay_ms[,...]' header")
    records = []
    for row in reader:
        op_type = row[2].strip() if len(row) > 2 and row[2].strip() else None
        timestamp = float(row[3]) if len(row) > 3 and row[3].strip() else None
        records.append(TraceRecord(float(row[0]), float(row[1]), op_type, timestamp))
    return records


def write_trace_csv(records: Iterable[TraceRecord], out: IO[str] | str | Path) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_trace_csv(records, fh)
            return
    writer = csv.writer(out)
    writer.writerow(["chunk_size_mb", "delay_ms", "op_type", "timestamp"])
    for r in records:
        writer.writerow([
            repr(r.chunk_size_mb),
            repr(r.delay_ms),
            r.op_type or "",
            "" if r.timestamp is None else repr(r.timestamp),
        ])


def _group_by_size(records: Sequence[TraceRecord]) -> dict[float, list[float]]:
    groups: dict[float, list[float]] = {}
    for r in records:
        groups.setdefault(r.chunk_size_mb, []).append(r.delay_ms)
    return groups


def trim_worst(delays: Sequence[float]) -> list[float]:
    """Drop the largest ceil(10%) of the delays; ties keep earlier records."""
    n_drop = math.ceil(TRIM_FRACTION * len(delays))
    if n_drop == 0:
        return list(delays)
    order = sorted(range(len(delays)), key=lambda i: (delays[i], i))
    kept = sorted(order[: len(delays) - n_drop])
    return [delays[i] for i in kept]


def fit_params(records: Sequence[TraceRecord]) -> DelayParams:
    """Estimate the delay law from a trace.

    Per chunk size, the worst 10% of delays are dropped and the trimmed mean
    and standard deviation computed; both are then fit with ordinary least
    squares against chunk size. Because the model's tail is exponential, the
    trimmed moments understate it by fixed factors, which are divided out
    before splitting the mean line into floor and tail components. Negative
    fitted floor components are clamped to zero with a warning.
    """
    groups = _group_by_size(records)
    if len(groups) < 2:
        raise ValueError(f"need at least 2 distinct chunk sizes, got {len(groups)}")
    for size, delays in groups.items():
        if len(delays) < MIN_RECORDS_PER_SIZE:
            raise ValueError(
                f"need at least {MIN_RECORDS_PER_SIZE} records per size, got {len(delays)} at {size}"
            )
    sizes = np.array(sorted(groups))
    means = np.empty_like(sizes)
    stds = np.empty_like(sizes)
    for i, size in enumerate(sizes):
        trimmed = np.asarray(trim_worst(groups[size]))
        means[i] = trimmed.mean()
        stds[i] = trimmed.std()
    mean_slope, mean_icept = np.polyfit(sizes, means, 1)
    std_slope, std_icept = np.polyfit(sizes, stds, 1)

    psi_base = std_icept / _TRIM_STD
    psi_slope = std_slope / _TRIM_STD
    delta_base = mean_icept - _TRIM_MEAN * psi_base
    delta_slope = mean_slope - _TRIM_MEAN * psi_slope
    clamped = {}
    for name, value in (("delta_base", delta_base), ("delta_slope", delta_slope),
                        ("psi_base", psi_base), ("psi_slope", psi_slope)):
        if value < 0:
            warnings.warn(
                f"fitted {name} = {value:.4g} < 0 violates the delay model; clamping to 0",
                RuntimeWarning,
                stacklevel=2,
            )
            value = 0.0
        clamped[name] = value
    return DelayParams(**clamped)


def build_pools(records: Sequence[TraceRecord]) -> dict[float, list[float]]:
    """Group delays by chunk size for empirical resampling, untrimmed: the
    simulation must see the real tails that fitting filters out."""
    groups = _group_by_size(records)
    if any(not delays for delays in groups.values()) or not groups:
        raise ValueError("trace has no records to pool")
    return groups


def generate_synthetic_trace(
    params: DelayParams,
    sizes: Sequence[float],
    count: int,
    seed: int,
    op_type: str = "read",
) -> list[TraceRecord]:
    """Draw ``count`` task delays per chunk size from the parametric law."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    records = []
    for size in sizes:
        floor = delay_floor(params, size)
        tails = rng.exponential(tail_mean(params, size), size=count)
        records.extend(
            TraceRecord(float(size), float(floor + tail), op_type) for tail in tails
        )
    return records


def write_params_file(params: DelayParams, out: IO[str] | str | Path, header_lines: Sequence[str] = ()) -> None:
    """Write the fitted delay law as a key=value file (ms and ms/MB units)."""
    if isinstance(out, (str, Path)):
        with open(out, "w") as fh:
            write_params_file(params, fh, header_lines)
            return
    for line in header_lines:
        out.write(f"# {line}\n")
    for name in ("delta_base", "delta_slope", "psi_base", "psi_slope"):
        out.write(f"{name} = {getattr(params, name)!r}\n")


def read_params_file(source: IO[str] | str | Path) -> DelayParams:
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return read_params_file(fh)
    values = {}
    for line in source:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, raw = line.partition("=")
        values[key.strip()] = float(raw.strip())
    missing = {"delta_base", "delta_slope", "psi_base", "psi_slope"} - values.keys()
    if missing:
        raise ValueError(f"params file is missing keys: {sorted(missing)}")
    return DelayParams(**values)
