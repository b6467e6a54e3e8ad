"""Run configuration: one JSON file fully describes one reproducible run.

Schema (units: ms, MB, requests/ms):

    {
      "system": {"threads": 16},
      "classes": [{"op_type": "read", "file_size_mb": 3.0, "popularity": 1.0,
                   "k_max": 6, "r_max": 2.0,
                   "params": {"delta_base": 3, "delta_slope": 3,
                              "psi_base": 20, "psi_slope": 30}}],
      "arrivals": {"kind": "poisson", "rate_per_ms": 0.05}
                | {"kind": "phased", "phases": [{"duration_ms": ..., "rate_per_ms": ...}, ...]}
                | {"kind": "trace", "times_ms": [...]},
      "sampler":  {"kind": "parametric"}
                | {"kind": "empirical", "trace_csv": "delays.csv"}
                | {"kind": "scripted", "delays_ms": [...]},
      "strategy": {"kind": "tofec", "alpha": 0.99}
                | {"kind": "greedy"}
                | {"kind": "static", "codes": [[n, k], ...]}
                | {"kind": "ideal", "schedule": [{"duration_ms": ..., "codes": [[n, k], ...]}, ...]},
      "horizon_ms": 600000, "warmup_ms": 60000, "seed": 1,
      "leftover_policy": "cancel", "overload_bound": 100000
    }

A class may give "params_file" (key=value file, see traces) instead of inline
"params". File paths are resolved relative to the config file. "warmup_ms"
defaults to 10% of the horizon, "leftover_policy" to "cancel", and
"overload_bound" to 100000.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from fecsim.engine import (
    DEFAULT_OVERLOAD_BOUND,
    ConfigError,
    EmpiricalSampler,
    ParametricSampler,
    PhasedArrivals,
    PoissonArrivals,
    ScriptedSampler,
    TraceArrivals,
)
from fecsim.model import ClassSpec, DelayParams, SystemSpec
from fecsim.strategies import (
    BacklogThresholdStrategy,
    GreedyIdleThreadsStrategy,
    IdealStrategy,
    StaticStrategy,
)
from fecsim.traces import build_pools, fit_params, read_params_file, read_trace_csv


@dataclass
class RunConfig:
    raw: dict
    spec: SystemSpec
    arrivals: Any
    sampler_factory: Callable[[], Any]
    strategy_factory: Callable[[], Any]
    horizon: float
    warmup: float | None
    seed: int
    leftover_policy: str
    overload_bound: int

    def compact_json(self) -> str:
        return json.dumps(self.raw, separators=(",", ":"), sort_keys=True)


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return mapping[key]


def _build_params(entry: dict, base_dir: Path) -> DelayParams:
    if "params" in entry:
        try:
            return DelayParams(**entry["params"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad delay params: {exc}") from exc
    if "params_file" in entry:
        return read_params_file(base_dir / entry["params_file"])
    raise ConfigError("each class needs 'params' or 'params_file'")


def _build_classes(entries: list, base_dir: Path) -> tuple[ClassSpec, ...]:
    if not entries:
        raise ConfigError("'classes' must be a non-empty list")
    classes = []
    for entry in entries:
        classes.append(
            ClassSpec(
                op_type=entry.get("op_type", "read"),
                file_size=float(_require(entry, "file_size_mb", "class")),
                popularity=float(entry.get("popularity", 1.0)),
                k_max=int(_require(entry, "k_max", "class")),
                r_max=float(_require(entry, "r_max", "class")),
                params=_build_params(entry, base_dir),
            )
        )
    return tuple(classes)


def _build_arrivals(entry: dict):
    kind = _require(entry, "kind", "arrivals")
    if kind == "poisson":
        return PoissonArrivals(float(_require(entry, "rate_per_ms", "arrivals")))
    if kind == "phased":
        phases = [
            (float(_require(p, "duration_ms", "phase")), float(_require(p, "rate_per_ms", "phase")))
            for p in _require(entry, "phases", "arrivals")
        ]
        return PhasedArrivals(tuple(phases))
    if kind == "trace":
        return TraceArrivals(tuple(float(t) for t in _require(entry, "times_ms", "arrivals")))
    raise ConfigError(f"unknown arrivals kind {kind!r}")


def _build_sampler_factory(entry: dict, base_dir: Path) -> Callable[[], Any]:
    kind = _require(entry, "kind", "sampler")
    if kind == "parametric":
        shared = ParametricSampler()  # stateless, safe to share across runs
        return lambda: shared
    if kind == "empirical":
        records = read_trace_csv(base_dir / _require(entry, "trace_csv", "sampler"))
        pools = build_pools(records)
        try:
            params = fit_params(records)
        except ValueError:
            params = None  # no rescaling rule; off-pool chunk sizes will error
        shared = EmpiricalSampler(pools, params=params)
        return lambda: shared
    if kind == "scripted":
        delays = [float(d) for d in _require(entry, "delays_ms", "sampler")]
        return lambda: ScriptedSampler(delays)  # stateful: fresh per run
    raise ConfigError(f"unknown sampler kind {kind!r}")


def _build_strategy_factory(entry: dict, spec: SystemSpec) -> Callable[[], Any]:
    kind = _require(entry, "kind", "strategy")
    if kind == "tofec":
        alpha = float(entry.get("alpha", 0.99))
        # threshold tables are immutable; share them across runs
        prototype = BacklogThresholdStrategy.for_classes(spec.classes, spec.thread_count, alpha=alpha)
        return lambda: BacklogThresholdStrategy(prototype.tables, alpha=alpha)
    if kind == "greedy":
        return GreedyIdleThreadsStrategy
    if kind == "static":
        codes = [tuple(c) for c in _require(entry, "codes", "strategy")]
        if len(codes) != len(spec.classes):
            raise ConfigError("static strategy needs one code per class")
        return lambda: StaticStrategy(codes)
    if kind == "ideal":
        segments = [
            (float(_require(seg, "duration_ms", "schedule segment")),
             [tuple(c) for c in _require(seg, "codes", "schedule segment")])
            for seg in _require(entry, "schedule", "strategy")
        ]
        return lambda: IdealStrategy(segments)
    raise ConfigError(f"unknown strategy kind {kind!r}")


def load_config(source: str | Path | dict, base_dir: str | Path | None = None) -> RunConfig:
    if isinstance(source, dict):
        raw = source
        base = Path(base_dir) if base_dir is not None else Path.cwd()
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        base = path.parent if base_dir is None else Path(base_dir)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    system = _require(raw, "system", "config")
    classes = _build_classes(_require(raw, "classes", "config"), base)
    try:
        spec = SystemSpec(int(_require(system, "threads", "system")), classes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    horizon = float(_require(raw, "horizon_ms", "config"))
    warmup = float(raw["warmup_ms"]) if "warmup_ms" in raw else None
    policy = raw.get("leftover_policy", "cancel")
    if policy not in ("cancel", "complete"):
        raise ConfigError(f"unknown leftover_policy {policy!r}")
    return RunConfig(
        raw=raw,
        spec=spec,
        arrivals=_build_arrivals(_require(raw, "arrivals", "config")),
        sampler_factory=_build_sampler_factory(_require(raw, "sampler", "config"), base),
        strategy_factory=_build_strategy_factory(_require(raw, "strategy", "config"), spec),
        horizon=horizon,
        warmup=warmup,
        seed=int(raw.get("seed", 0)),
        leftover_policy=policy,
        overload_bound=int(raw.get("overload_bound", DEFAULT_OVERLOAD_BOUND)),
    )
