"""Per-request code-selection policies.

Every policy exposes ``select(class_index, cls, queue_len, idle_threads, now)``
returning an integer (n, k) code. The engine calls it once per arrival, with
the queue length and idle-thread count snapshotted before the arriving request
is enqueued, and applies the chosen code unchanged at dispatch. A policy
instance carries per-run state and must not be shared between runs.
"""
from __future__ import annotations

import math
from typing import Mapping, Sequence

from fecsim.model import ClassSpec, CodeChoice, validate_code
from fecsim.solver import ThresholdTable, build_thresholds

DEFAULT_MEMORY_FACTOR = 0.99


def _floor_cap(r_max: float, k: int) -> int:
    return int(math.floor(r_max * k + 1e-9))


class BacklogThresholdStrategy:
    """Backlog-driven adaptation: smooth the queue length with an EWMA and map
    it through per-class threshold tables to an (n, k) code.

    ``alpha`` is the memory factor; 0 uses the instantaneous queue length.
    """

    name = "tofec"

    def __init__(self, tables: Sequence[ThresholdTable], alpha: float = DEFAULT_MEMORY_FACTOR):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("memory factor alpha must lie in [0, 1]")
        self.tables = tuple(tables)
        self.alpha = alpha
        self.q_bar = 0.0

    @classmethod
    def for_classes(
        cls, classes: Sequence[ClassSpec], thread_count: int, alpha: float = DEFAULT_MEMORY_FACTOR
    ) -> "BacklogThresholdStrategy":
        return cls([build_thresholds(c, thread_count) for c in classes], alpha=alpha)

    def select(
        self, class_index: int, cls: ClassSpec, queue_len: int, idle_threads: int, now: float
    ) -> CodeChoice:
        if queue_len < 0:
            raise ValueError("queue length must be >= 0")
        self.q_bar = self.alpha * self.q_bar + (1.0 - self.alpha) * queue_len
        table = self.tables[class_index]
        n, k = table.select(self.q_bar)
        n = min(_floor_cap(cls.r_max, k), n)
        n = max(n, k)  # N- and K-tables can disagree at a band edge; n >= k is hard
        return CodeChoice(n, k)


class GreedyIdleThreadsStrategy:
    """Chunk as much as the idle threads allow, then add redundancy with what
    is left; (1, 1) when everything is busy."""

    name = "greedy"

    def select(
        self, class_index: int, cls: ClassSpec, queue_len: int, idle_threads: int, now: float
    ) -> CodeChoice:
        if idle_threads < 0:
            raise ValueError("idle thread count must be >= 0")
        if idle_threads == 0:
            return CodeChoice(1, 1)
        k = min(cls.k_max, idle_threads)
        n = min(_floor_cap(cls.r_max, k), idle_threads)
        return CodeChoice(n, k)


class StaticStrategy:
    """One fixed code per class."""

    name = "static"

    def __init__(self, codes: Sequence[Sequence[int]]):
        self.codes = tuple(validate_code(c) for c in codes)

    def select(
        self, class_index: int, cls: ClassSpec, queue_len: int, idle_threads: int, now: float
    ) -> CodeChoice:
        return self.codes[class_index]


class ScheduleError(ValueError):
    """The per-phase schedule does not cover the requested time."""


class IdealStrategy:
    """Rate-oracle baseline: a fixed per-phase code schedule keyed on time.

    ``segments`` is a sequence of (duration, codes) pairs starting at time 0,
    where ``codes`` maps class index to an (n, k) code (a single code is
    broadcast to all classes). The segments must cover the whole horizon.
    """

    name = "ideal"

    def __init__(self, segments: Sequence[tuple[float, Mapping[int, Sequence[int]] | Sequence[Sequence[int]]]]):
        if not segments:
            raise ScheduleError("schedule must contain at least one segment")
        self.boundaries: list[float] = []
        self.codes: list[dict[int, CodeChoice]] = []
        t = 0.0
        for duration, codes in segments:
            if duration <= 0:
                raise ScheduleError("segment durations must be > 0")
            t += duration
            self.boundaries.append(t)
            if isinstance(codes, Mapping):
                self.codes.append({i: validate_code(c) for i, c in codes.items()})
            else:
                self.codes.append({i: validate_code(c) for i, c in enumerate(codes)})

    def code_at(self, now: float, class_index: int) -> CodeChoice:
        for boundary, codes in zip(self.boundaries, self.codes):
            if now < boundary:
                try:
                    return codes[class_index]
                except KeyError:
                    raise ScheduleError(f"segment has no code for class {class_index}") from None
        raise ScheduleError(f"schedule does not cover time {now}")

    def select(
        self, class_index: int, cls: ClassSpec, queue_len: int, idle_threads: int, now: float
    ) -> CodeChoice:
        return self.code_at(now, class_index)
