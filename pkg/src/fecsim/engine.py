"""Discrete-event simulator of the two-queue, L-thread coded-access proxy.

A request arrives into a FIFO request queue; its (n, k) code is chosen by the
strategy at the arrival instant, from the queue length and idle-thread count
snapshotted before the request is enqueued. The head-of-line request is
dispatched (fanned out into n tasks) only when at least one thread is idle and
the task queue is empty; idle threads then pull tasks FIFO, sampling a task's
delay when it starts. The request completes at its k-th task completion;
with the default ``cancel`` leftover policy the remaining running tasks are
preempted on the spot (charged completion-minus-start) and queued ones are
dropped (charged nothing). With ``leftover_policy="complete"`` leftover tasks
run to completion at normal priority and back-fill the request's usage as they
finish (tasks still unfinished at the horizon contribute nothing).

Events sharing a timestamp are ordered completions first, then the dispatches
they enable, then arrivals; ties within a kind fall back to sequence numbers.
All randomness derives from one seed through named substreams (one for the
arrival process, one per thread), so arrival sequences do not depend on the
strategy, sampler, or thread count.
"""
from __future__ import annotations

import csv
import math
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass
from heapq import heappop, heappush
from typing import IO, Iterator, Mapping, Sequence

import numpy as np

from fecsim.model import ClassSpec, DelayParams, SystemSpec, delay_floor, tail_mean

DEFAULT_OVERLOAD_BOUND = 100_000

_COMPLETION = 0
_ARRIVAL = 1

_QUEUED = 0
_RUNNING = 1
_DONE = 2
_CANCELED = 3
_PREEMPTED = 4


class ConfigError(ValueError):
    """A run was configured inconsistently (bad sampler pool, schedule, ...)."""


class _Stream:
    """A named substream: numpy generator plus a buffer of unit exponentials."""

    __slots__ = ("rng", "_buf", "_i")

    _BLOCK = 1024

    def __init__(self, seed_seq: np.random.SeedSequence):
        self.rng = np.random.default_rng(seed_seq)
        self._buf: list[float] = []
        self._i = 0

    def exponential(self, scale: float) -> float:
        i = self._i
        if i >= len(self._buf):
            self._buf = self.rng.exponential(size=self._BLOCK).tolist()
            i = 0
        self._i = i + 1
        return scale * self._buf[i]

    def uniform(self) -> float:
        return float(self.rng.random())

    def index(self, bound: int) -> int:
        return int(self.rng.integers(bound))


@dataclass(frozen=True)
class PoissonArrivals:
    """Stationary Poisson arrivals at ``rate`` requests per ms."""

    rate: float

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ValueError("arrival rate must be >= 0")

    def times(self, stream: _Stream) -> Iterator[float]:
        if self.rate == 0:
            return
        scale = 1.0 / self.rate
        t = 0.0
        while True:
            t += stream.exponential(scale)
            yield t


@dataclass(frozen=True)
class PhasedArrivals:
    """Piecewise-constant Poisson process: a sequence of (duration, rate) phases."""

    phases: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "phases", tuple((float(d), float(r)) for d, r in self.phases))
        for duration, rate in self.phases:
            if duration <= 0:
                raise ValueError("phase durations must be > 0")
            if rate < 0:
                raise ValueError("phase rates must be >= 0")

    @property
    def total_duration(self) -> float:
        return math.fsum(d for d, _ in self.phases)

    def times(self, stream: _Stream) -> Iterator[float]:
        start = 0.0
        for duration, rate in self.phases:
            end = start + duration
            if rate > 0:
                scale = 1.0 / rate
                t = start + stream.exponential(scale)
                while t < end:
                    yield t
                    t += stream.exponential(scale)
            start = end


@dataclass(frozen=True)
class TraceArrivals:
    """Replay of explicit arrival timestamps (ms)."""

    timestamps: tuple[float, ...]

    def __post_init__(self) -> None:
        ts = tuple(float(t) for t in self.timestamps)
        object.__setattr__(self, "timestamps", ts)
        if any(t < 0 for t in ts):
            raise ValueError("arrival timestamps must be >= 0")
        if any(a > b for a, b in zip(ts, ts[1:])):
            raise ValueError("arrival timestamps must be sorted")

    def times(self, stream: _Stream) -> Iterator[float]:
        return iter(self.timestamps)


class ParametricSampler:
    """Shifted-exponential task delays from each class's fitted delay law."""

    kind = "parametric"

    def sample(self, stream: _Stream, cls: ClassSpec, chunk_size: float) -> float:
        return delay_floor(cls.params, chunk_size) + stream.exponential(
            tail_mean(cls.params, chunk_size)
        )


class EmpiricalSampler:
    """Resample measured task delays from per-chunk-size pools.

    A requested chunk size with no pool is served from the nearest pool,
    rescaled through the fitted delay law; without fitted parameters that
    request is a configuration error.
    """

    kind = "empirical"

    def __init__(self, pools: Mapping[float, Sequence[float]], params: DelayParams | None = None):
        if not pools:
            raise ConfigError("empirical sampler needs at least one delay pool")
        self.pools = {float(b): [float(x) for x in xs] for b, xs in pools.items()}
        for b, xs in self.pools.items():
            if not xs:
                raise ConfigError(f"empty delay pool for chunk size {b}")
        self.params = params
        self._sizes = sorted(self.pools)

    def _nearest_size(self, chunk_size: float) -> float:
        i = bisect_left(self._sizes, chunk_size)
        candidates = self._sizes[max(0, i - 1) : i + 1]
        return min(candidates, key=lambda b: (abs(b - chunk_size), b))

    def sample(self, stream: _Stream, cls: ClassSpec, chunk_size: float) -> float:
        pool = self.pools.get(chunk_size)
        if pool is not None:
            return pool[stream.index(len(pool))]
        if self.params is None:
            raise ConfigError(
                f"no delay pool for chunk size {chunk_size} and no fitted parameters to rescale"
            )
        src = self._nearest_size(chunk_size)
        x = self.pools[src][stream.index(len(self.pools[src]))]
        scale = tail_mean(self.params, chunk_size) / tail_mean(self.params, src)
        return (x - delay_floor(self.params, src)) * scale + delay_floor(self.params, chunk_size)


class ScriptedSampler:
    """Pop explicit task delays in task-start order (for hand-built scenarios)."""

    kind = "scripted"

    def __init__(self, delays: Sequence[float]):
        self._delays = [float(d) for d in delays]
        self._next = 0

    def sample(self, stream: _Stream, cls: ClassSpec, chunk_size: float) -> float:
        if self._next >= len(self._delays):
            raise ConfigError("scripted sampler ran out of delays")
        value = self._delays[self._next]
        self._next += 1
        return value


class _Task:
    __slots__ = ("request", "status", "start", "delay", "thread")

    def __init__(self, request: "_Request"):
        self.request = request
        self.status = _QUEUED
        self.start = -1.0
        self.delay = -1.0
        self.thread = -1


class _Request:
    __slots__ = (
        "id", "class_index", "arrival", "q_at_arrival", "n", "k",
        "dispatch", "done_count", "tasks", "usage", "completion", "record",
    )

    def __init__(self, req_id: int, class_index: int, arrival: float, q_at_arrival: int, n: int, k: int):
        self.id = req_id
        self.class_index = class_index
        self.arrival = arrival
        self.q_at_arrival = q_at_arrival
        self.n = n
        self.k = k
        self.dispatch = -1.0
        self.done_count = 0
        self.tasks: list[_Task] = []
        self.usage = 0.0
        self.completion = -1.0
        self.record: "RequestRecord | None" = None


@dataclass
class RequestRecord:
    """One completed request; delays in ms, usage in ms*threads."""

    id: int
    class_id: int
    arrival: float
    dispatch: float
    completion: float
    n: int
    k: int
    queue_delay: float
    service_delay: float
    usage: float
    queue_len_at_arrival: int


@dataclass
class SimResult:
    records: list[RequestRecord]
    thread_count: int
    horizon: float
    warmup: float
    seed: int
    strategy_name: str
    arrivals: int = 0
    completions: int = 0
    dispatched: int = 0
    waiting_at_end: int = 0
    overloaded: bool = False
    overload_time: float | None = None

    @property
    def in_flight_at_end(self) -> int:
        return self.dispatched - self.completions

    def post_warmup(self) -> list[RequestRecord]:
        return [r for r in self.records if r.arrival >= self.warmup]


class Simulation:
    """One reproducible run; see the module docstring for the event contract."""

    def __init__(
        self,
        spec: SystemSpec,
        arrivals,
        sampler,
        strategy,
        horizon: float,
        warmup: float | None = None,
        seed: int = 0,
        leftover_policy: str = "cancel",
        overload_bound: int = DEFAULT_OVERLOAD_BOUND,
    ):
        if warmup is None:
            warmup = 0.1 * horizon
        if not horizon > warmup >= 0:
            raise ValueError("must have horizon > warmup >= 0")
        if leftover_policy not in ("cancel", "complete"):
            raise ValueError(f"unknown leftover_policy {leftover_policy!r}")
        self.spec = spec
        self.arrivals = arrivals
        self.sampler = sampler
        self.strategy = strategy
        self.horizon = float(horizon)
        self.warmup = float(warmup)
        self.seed = int(seed)
        self.leftover_policy = leftover_policy
        self.overload_bound = int(overload_bound)

        root = np.random.SeedSequence(self.seed)
        children = root.spawn(1 + spec.thread_count)
        self._arrival_stream = _Stream(children[0])
        self._thread_streams = [_Stream(ss) for ss in children[1:]]

        self.now = 0.0
        self._request_queue: deque[_Request] = deque()
        self._task_queue: deque[_Task] = deque()
        self._queued_live = 0
        self._idle = list(range(spec.thread_count - 1, -1, -1))  # pop() yields thread 0 first
        self._heap: list = []
        self._seq = 0
        self._class_cum = self._cumulative_popularity(spec.classes)

        self.result = SimResult(
            records=[],
            thread_count=spec.thread_count,
            horizon=self.horizon,
            warmup=self.warmup,
            seed=self.seed,
            strategy_name=getattr(strategy, "name", type(strategy).__name__),
        )

    @staticmethod
    def _cumulative_popularity(classes: Sequence[ClassSpec]) -> list[float]:
        cum, total = [], 0.0
        for c in classes:
            total += c.popularity
            cum.append(total)
        cum[-1] = 1.0
        return cum

    # -- snapshots (evaluated before the arriving request is enqueued) --

    def queue_length(self) -> int:
        """Requests waiting in the request queue, excluding any in service."""
        return len(self._request_queue)

    def idle_threads(self) -> int:
        return len(self._idle)

    # -- event machinery --

    def _push(self, time: float, kind: int, payload) -> None:
        self._seq += 1
        heappush(self._heap, (time, kind, self._seq, payload))

    def _draw_class(self) -> int:
        if len(self._class_cum) == 1:
            return 0
        u = self._arrival_stream.uniform()
        return bisect_left(self._class_cum, u)

    def _schedule_next_arrival(self, times: Iterator[float]) -> None:
        for t in times:
            if t >= self.horizon:
                return
            self._push(t, _ARRIVAL, self._draw_class())
            return

    def run(self) -> SimResult:
        times = self.arrivals.times(self._arrival_stream)
        self._schedule_next_arrival(times)
        heap = self._heap
        while heap:
            time, kind, _, payload = heappop(heap)
            if time > self.horizon:
                break
            self.now = time
            if kind == _COMPLETION:
                self._complete_task(payload)
                # drain completions sharing this timestamp before dispatching
                while heap and heap[0][0] == time and heap[0][1] == _COMPLETION:
                    self._complete_task(heappop(heap)[3])
                self._dispatch_loop()
            else:
                if not self._handle_arrival(payload):
                    break  # overloaded
                self._schedule_next_arrival(times)
                self._dispatch_loop()
        self.result.waiting_at_end = len(self._request_queue)
        return self.result

    def _handle_arrival(self, class_index: int) -> bool:
        res = self.result
        q = len(self._request_queue)
        idle = len(self._idle)
        cls = self.spec.classes[class_index]
        n, k = self.strategy.select(class_index, cls, q, idle, self.now)
        request = _Request(res.arrivals, class_index, self.now, q, n, k)
        res.arrivals += 1
        self._request_queue.append(request)
        if len(self._request_queue) > self.overload_bound:
            res.overloaded = True
            res.overload_time = self.now
            return False
        return True

    def _dispatch_loop(self) -> None:
        idle = self._idle
        task_queue = self._task_queue
        request_queue = self._request_queue
        while idle:
            if self._queued_live:
                task = task_queue.popleft()
                while task.status != _QUEUED:
                    task = task_queue.popleft()
                self._start_task(task)
            elif request_queue:
                request = request_queue.popleft()
                request.dispatch = self.now
                self.result.dispatched += 1
                tasks = [_Task(request) for _ in range(request.n)]
                request.tasks = tasks
                task_queue.extend(tasks)
                self._queued_live += request.n
            else:
                return

    def _start_task(self, task: _Task) -> None:
        self._queued_live -= 1
        thread = self._idle.pop()
        request = task.request
        cls = self.spec.classes[request.class_index]
        delay = self.sampler.sample(
            self._thread_streams[thread], cls, cls.file_size / request.k
        )
        task.status = _RUNNING
        task.thread = thread
        task.start = self.now
        task.delay = delay
        self._push(self.now + delay, _COMPLETION, task)

    def _complete_task(self, task: _Task) -> None:
        if task.status != _RUNNING:
            return  # stale event: the task was preempted or canceled earlier
        task.status = _DONE
        self._idle.append(task.thread)
        request = task.request
        request.done_count += 1
        if request.completion >= 0.0:
            # leftover of an already-acknowledged request (leftover_policy="complete")
            request.usage += task.delay
            if request.record is not None:
                request.record.usage = request.usage
            return
        request.usage += task.delay
        if request.done_count == request.k:
            self._finish_request(request)

    def _finish_request(self, request: _Request) -> None:
        now = self.now
        request.completion = now
        if self.leftover_policy == "cancel":
            for sibling in request.tasks:
                status = sibling.status
                if status == _RUNNING:
                    sibling.status = _PREEMPTED
                    self._idle.append(sibling.thread)
                    request.usage += now - sibling.start
                elif status == _QUEUED:
                    sibling.status = _CANCELED
                    self._queued_live -= 1
        record = RequestRecord(
            id=request.id,
            class_id=request.class_index,
            arrival=request.arrival,
            dispatch=request.dispatch,
            completion=now,
            n=request.n,
            k=request.k,
            queue_delay=request.dispatch - request.arrival,
            service_delay=now - request.dispatch,
            usage=request.usage,
            queue_len_at_arrival=request.q_at_arrival,
        )
        if self.leftover_policy == "complete":
            request.record = record
        self.result.records.append(record)
        self.result.completions += 1


def run(
    spec: SystemSpec,
    arrivals,
    sampler,
    strategy,
    horizon: float,
    warmup: float | None = None,
    seed: int = 0,
    leftover_policy: str = "cancel",
    overload_bound: int = DEFAULT_OVERLOAD_BOUND,
) -> SimResult:
    """Execute one simulation run; see Simulation for the contract."""
    return Simulation(
        spec, arrivals, sampler, strategy, horizon,
        warmup=warmup, seed=seed,
        leftover_policy=leftover_policy, overload_bound=overload_bound,
    ).run()


_RECORD_COLUMNS = [
    "id", "class_id", "arrival_ms", "dispatch_ms", "completion_ms", "n", "k",
    "queue_delay_ms", "service_delay_ms", "usage_ms_threads", "queue_len_at_arrival",
]


def records_to_csv(result: SimResult, out: IO[str], header_lines: Sequence[str] = ()) -> None:
    """Write one CSV row per completed request, newest provenance comments first."""
    for line in header_lines:
        out.write(f"# {line}\n")
    writer = csv.writer(out)
    writer.writerow(_RECORD_COLUMNS)
    for r in result.records:
        writer.writerow([
            r.id, r.class_id, repr(r.arrival), repr(r.dispatch), repr(r.completion),
            r.n, r.k, repr(r.queue_delay), repr(r.service_delay), repr(r.usage),
            r.queue_len_at_arrival,
        ])
