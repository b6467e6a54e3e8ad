"""Closed-form delay, usage, and queueing quantities for coded storage access.

Units throughout the package: milliseconds for time, megabytes for sizes,
requests per millisecond for rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

EULER_MASCHERONI = 0.5772156649015329

_POPULARITY_TOL = 1e-9


class CodeChoice(NamedTuple):
    """An (n, k) erasure code: n tasks issued, request done after any k."""

    n: int
    k: int


def validate_code(code: Sequence[int]) -> CodeChoice:
    n, k = code
    if int(n) != n or int(k) != k:
        raise ValueError(f"code (n, k) must be integers, got {code!r}")
    n, k = int(n), int(k)
    if not 1 <= k <= n:
        raise ValueError(f"code must satisfy n >= k >= 1, got ({n}, {k})")
    return CodeChoice(n, k)


@dataclass(frozen=True)
class DelayParams:
    """Task-delay law: deterministic floor delta_base + delta_slope*B plus an
    exponential tail with mean psi_base + psi_slope*B, for chunk size B (MB).
    """

    delta_base: float
    delta_slope: float
    psi_base: float
    psi_slope: float

    def __post_init__(self) -> None:
        for name in ("delta_base", "delta_slope", "psi_base", "psi_slope"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.delta_base + self.psi_base <= 0:
            raise ValueError("degenerate delay law: delta_base + psi_base must be > 0")
        if self.delta_slope + self.psi_slope <= 0:
            raise ValueError("degenerate delay law: delta_slope + psi_slope must be > 0")

    def scaled(self, factor: float) -> "DelayParams":
        return DelayParams(
            self.delta_base * factor,
            self.delta_slope * factor,
            self.psi_base * factor,
            self.psi_slope * factor,
        )


@dataclass(frozen=True)
class ClassSpec:
    """One request class: operation type and file size plus adaptation caps."""

    op_type: str
    file_size: float
    popularity: float
    k_max: int
    r_max: float
    params: DelayParams

    def __post_init__(self) -> None:
        if self.op_type not in ("read", "write"):
            raise ValueError(f"op_type must be 'read' or 'write', got {self.op_type!r}")
        if self.file_size <= 0:
            raise ValueError("file_size must be > 0")
        if not 0 <= self.popularity <= 1:
            raise ValueError("popularity must lie in [0, 1]")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")

    @property
    def n_max(self) -> int:
        return int(math.floor(self.r_max * self.k_max + 1e-9))

    def chunk_size(self, k: float) -> float:
        return self.file_size / k

    def max_n_for_k(self, k: int) -> int:
        return int(math.floor(self.r_max * k + 1e-9))

    def code_grid(self) -> Iterator[CodeChoice]:
        """All integer codes allowed by the caps, sorted by (n, k)."""
        codes = [
            CodeChoice(n, k)
            for k in range(1, self.k_max + 1)
            for n in range(k, self.max_n_for_k(k) + 1)
        ]
        codes.sort()
        return iter(codes)


@dataclass(frozen=True)
class SystemSpec:
    thread_count: int
    classes: tuple[ClassSpec, ...]

    def __post_init__(self) -> None:
        if self.thread_count < 1:
            raise ValueError("thread_count must be >= 1")
        if not self.classes:
            raise ValueError("at least one request class is required")
        object.__setattr__(self, "classes", tuple(self.classes))
        total = math.fsum(c.popularity for c in self.classes)
        if abs(total - 1.0) > _POPULARITY_TOL:
            raise ValueError(f"class popularities must sum to 1, got {total}")


def delay_floor(params: DelayParams, chunk_size: float) -> float:
    """Deterministic lower bound of a task's delay at the given chunk size."""
    if chunk_size <= 0:
        raise ValueError("chunk_size must be > 0")
    return params.delta_base + params.delta_slope * chunk_size


def tail_mean(params: DelayParams, chunk_size: float) -> float:
    """Mean (= std) of the exponential tail of a task's delay."""
    if chunk_size <= 0:
        raise ValueError("chunk_size must be > 0")
    return params.psi_base + params.psi_slope * chunk_size


def harmonic_range(lo: int, hi: int) -> float:
    """Sum of 1/j for j = lo..hi inclusive (0 when the range is empty)."""
    return math.fsum(1.0 / j for j in range(lo, hi + 1))


def expected_service_delay(cls: ClassSpec, code: Sequence[int], mode: str = "exact_harmonic") -> float:
    """Mean service delay of an (n, k)-coded request, all tasks started together.

    ``exact_harmonic`` uses the order-statistic harmonic sum; ``log_approx``
    uses its integral upper bound ln(n/(n-k)), which is +inf at n == k.
    """
    n, k = code
    if k > n:
        raise ValueError(f"code dimension k={k} exceeds length n={n}")
    if k < 1:
        raise ValueError("code dimension k must be >= 1")
    b = cls.chunk_size(k)
    floor = delay_floor(cls.params, b)
    tail = tail_mean(cls.params, b)
    if mode == "exact_harmonic":
        n, k = validate_code(code)
        return floor + tail * harmonic_range(n - k + 1, n)
    if mode == "log_approx":
        if n == k:
            return math.inf
        return floor + tail * math.log(n / (n - k))
    raise ValueError(f"unknown mode {mode!r}")


def harmonic_approx_gap(n: int, k: int) -> float:
    """ln(n/(n-k)) minus the harmonic sum it approximates; in (0, gamma]."""
    n, k = validate_code((n, k))
    if n == k:
        raise ValueError("gap is undefined at n == k")
    return math.log(n / (n - k)) - harmonic_range(n - k + 1, n)


def expected_usage(cls: ClassSpec, code: Sequence[int]) -> float:
    """Expected thread-time (ms*threads) consumed by one (n, k)-coded request."""
    n, k = code
    if not 1 <= k <= n:
        raise ValueError(f"code must satisfy n >= k >= 1, got ({n}, {k})")
    b = cls.chunk_size(k)
    return n * delay_floor(cls.params, b) + k * tail_mean(cls.params, b)


def mean_usage(classes: Sequence[ClassSpec], codes: Sequence[Sequence[int]]) -> float:
    """Popularity-weighted mean usage across classes."""
    if len(classes) != len(codes):
        raise ValueError("classes and codes must have the same length")
    total_p = math.fsum(c.popularity for c in classes)
    if abs(total_p - 1.0) > _POPULARITY_TOL:
        raise ValueError(f"class popularities must sum to 1, got {total_p}")
    return math.fsum(c.popularity * expected_usage(c, code) for c, code in zip(classes, codes))


def normalized_load(lam: float, classes: Sequence[ClassSpec], codes: Sequence[Sequence[int]]) -> float:
    """Arrival rate of system usage, lambda * mean usage; stable iff < L."""
    if lam < 0:
        raise ValueError("arrival rate must be >= 0")
    return lam * mean_usage(classes, codes)


def queueing_delay(lambda_bar: float, u_bar: float, thread_count: int) -> float:
    """Mean wait in the request queue under the collapsed single-server model."""
    _check_load(lambda_bar, thread_count)
    return lambda_bar * u_bar / (thread_count * (thread_count - lambda_bar))


def mean_queue_length(lambda_bar: float, thread_count: int) -> float:
    """Mean number of requests waiting, as a function of normalized load."""
    _check_load(lambda_bar, thread_count)
    return lambda_bar**2 / (thread_count * (thread_count - lambda_bar))


def load_from_queue(queue_length: float, thread_count: int) -> float:
    """Normalized load that produces the given mean queue length (inverse map)."""
    if queue_length < 0:
        raise ValueError("queue_length must be >= 0")
    q = queue_length
    return thread_count * (math.sqrt(q * q + 4.0 * q) - q) / 2.0


def static_capacity(classes: Sequence[ClassSpec], codes: Sequence[Sequence[int]], thread_count: int) -> float:
    """Maximum sustainable request rate with the given fixed codes, L / U-bar."""
    return thread_count / mean_usage(classes, codes)


def full_capacity(classes: Sequence[ClassSpec], thread_count: int) -> float:
    """Capacity with no chunking and no redundancy: every class on a (1, 1) code."""
    return static_capacity(classes, [(1, 1)] * len(classes), thread_count)


class OverloadError(ValueError):
    """Raised when a normalized load is at or beyond the thread capacity."""


def _check_load(lambda_bar: float, thread_count: int) -> None:
    if lambda_bar < 0:
        raise ValueError("normalized load must be >= 0")
    if lambda_bar >= thread_count:
        raise OverloadError(
            f"normalized load {lambda_bar:.6g} is not below thread count {thread_count}"
        )
