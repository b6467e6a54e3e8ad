"""Numerical solver for the delay-optimal code choice and its backlog thresholds.

The stationarity system reduces, per class, to one monotone scalar equation in
the redundancy ratio r: the class dimension is a closed-form function k =
omega(r) (strictly increasing), and the load-matching function pi(r) is
strictly decreasing, so every solve below is a bracketed bisection.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Sequence

from fecsim.model import (
    ClassSpec,
    CodeChoice,
    OverloadError,
    expected_service_delay,
    load_from_queue,
    mean_queue_length,
    mean_usage,
    queueing_delay,
)

R_MIN = 1.0 + 1e-9
_BRACKET_LIMIT = 1e15


class SolverError(RuntimeError):
    """Numeric failure: a bracket could not be established or parameters are
    outside the solvable regime."""


@dataclass(frozen=True)
class ClassOptimum:
    """Continuous optimal code for one class: redundancy r, dimension k, length n."""

    r: float
    k: float
    n: float


@dataclass(frozen=True)
class ContinuousOptimum:
    lambda_bar: float
    queue_length: float
    per_class: tuple[ClassOptimum, ...]


def gamma(cls: ClassSpec, r: float) -> float:
    """Coupling function between redundancy ratio and dimension; 0 at r -> 1."""
    if r <= 1.0:
        raise ValueError("redundancy ratio r must be > 1")
    p = cls.params
    j = cls.file_size
    return (
        j * r * (r - 1.0) / (p.delta_base * r + p.psi_base)
        * (p.delta_slope + p.psi_slope * math.log(r / (r - 1.0)))
    )


def omega(cls: ClassSpec, r: float) -> float:
    """Optimal dimension k as a function of r: positive root of the
    stationarity quadratic. Strictly increasing in r."""
    if r <= 1.0:
        raise ValueError("redundancy ratio r must be > 1")
    p = cls.params
    j = cls.file_size
    g = gamma(cls, r)
    if p.psi_base == 0.0:
        # removable degeneracy of the quadratic: linear-equation limit
        denom = p.psi_slope * j - p.delta_base * g
        if denom <= 0.0:
            raise SolverError("psi_base = 0 and the linear limit has no positive root")
        return p.delta_slope * j * g / denom
    a = p.delta_base * g - p.psi_slope * j
    k = (a + math.sqrt(a * a + 4.0 * p.psi_base * p.delta_slope * j * g)) / (2.0 * p.psi_base)
    if k <= 0.0:
        raise SolverError(f"non-positive dimension at r={r}")
    return k


def pi(cls: ClassSpec, r: float, thread_count: int) -> float:
    """Load-matching function evaluated at k = omega(r); strictly decreasing."""
    if r <= 1.0:
        raise ValueError("redundancy ratio r must be > 1")
    p = cls.params
    j = cls.file_size
    k = omega(cls, r)
    return (
        thread_count * (p.psi_base * k + p.psi_slope * j)
        / (k * r * (r - 1.0) * (p.delta_base * k + p.delta_slope * j))
    )


def tau(lambda_bar: float, thread_count: int) -> float:
    """Left-hand side of the load-matching condition, (L/(L-load))^2 - 1."""
    if not 0.0 < lambda_bar < thread_count:
        raise ValueError("normalized load must lie strictly in (0, L)")
    ratio = thread_count / (thread_count - lambda_bar)
    return ratio * ratio - 1.0


def _bisect_decreasing(func, target: float, lo: float, hi: float, rtol: float) -> float:
    """Root of strictly-decreasing ``func(x) == target`` with func(lo) > target
    and func(hi) < target already established."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if func(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return 0.5 * (lo + hi)


def solve_class_at_load(cls: ClassSpec, lambda_bar: float, thread_count: int) -> ClassOptimum:
    """Continuous optimum (r, k, n) for one class at normalized load lambda_bar.

    Caps (k_max, r_max) are deliberately not applied here; they belong to code
    selection, not to the continuous optimum.
    """
    target = tau(lambda_bar, thread_count)
    lo = R_MIN
    if pi(cls, lo, thread_count) <= target:
        # optimum is within 1e-9 of r = 1 (extreme load); treat lo as the root
        r = lo
    else:
        hi = 2.0
        while pi(cls, hi, thread_count) >= target:
            hi *= 2.0
            if hi > _BRACKET_LIMIT:
                raise SolverError("failed to bracket the redundancy ratio")
        r = _bisect_decreasing(lambda x: pi(cls, x, thread_count), target, lo, hi, rtol=1e-14)
    k = omega(cls, r)
    return ClassOptimum(r=r, k=k, n=k * r)


def optimal_codes_multiclass(
    classes: Sequence[ClassSpec], lambda_bar: float, thread_count: int
) -> ContinuousOptimum:
    """Solve each class independently at the shared normalized load."""
    per_class = tuple(solve_class_at_load(c, lambda_bar, thread_count) for c in classes)
    return ContinuousOptimum(
        lambda_bar=lambda_bar,
        queue_length=mean_queue_length(lambda_bar, thread_count),
        per_class=per_class,
    )


def _continuous_usage(cls: ClassSpec, opt: ClassOptimum) -> float:
    p = cls.params
    j = cls.file_size
    return p.delta_base * opt.k * opt.r + p.delta_slope * j * opt.r + p.psi_base * opt.k + p.psi_slope * j


def continuous_optimum_at_rate(
    classes: Sequence[ClassSpec], lam: float, thread_count: int
) -> ContinuousOptimum:
    """Continuous optimum for a raw request rate.

    The normalized load depends on the usage of the optimum itself, so this
    solves the fixed point lambda_bar = lam * U(optimum(lambda_bar)); the
    mismatch is strictly decreasing in lambda_bar, so bisection applies.
    """
    if lam <= 0:
        raise ValueError("request rate must be > 0")
    L = thread_count

    def mismatch(lambda_bar: float) -> float:
        opts = [solve_class_at_load(c, lambda_bar, L) for c in classes]
        u_bar = math.fsum(c.popularity * _continuous_usage(c, o) for c, o in zip(classes, opts))
        return lam * u_bar - lambda_bar

    lo, hi = 1e-9 * L, L * (1.0 - 1e-9)
    if mismatch(hi) >= 0.0:
        raise SolverError(f"rate {lam} exceeds the continuous capacity at L={L}")
    if mismatch(lo) <= 0.0:
        raise SolverError(f"rate {lam} is too small to resolve a fixed point")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mismatch(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return optimal_codes_multiclass(classes, 0.5 * (lo + hi), L)


def code_functions_of_queue(cls: ClassSpec, queue_length: float, thread_count: int) -> ClassOptimum:
    """Continuous optimal (n, k, r) as strictly decreasing functions of backlog."""
    if queue_length < 0:
        raise ValueError("queue_length must be >= 0")
    if queue_length == 0:
        return ClassOptimum(r=math.inf, k=math.inf, n=math.inf)
    lambda_bar = load_from_queue(queue_length, thread_count)
    return solve_class_at_load(cls, lambda_bar, thread_count)


def _invert_monotone_code_fn(cls, target: float, thread_count: int, key) -> float:
    def value(q: float) -> float:
        return key(code_functions_of_queue(cls, q, thread_count))

    lo = hi = 1.0
    while value(lo) <= target:
        lo /= 8.0
        if lo < 1e-280:
            raise SolverError("failed to bracket the backlog from below")
    while value(hi) >= target:
        hi *= 8.0
        if hi > 1e280:
            raise SolverError("failed to bracket the backlog from above")
    return _bisect_decreasing(value, target, lo, hi, rtol=1e-10)


def invert_code_length(cls: ClassSpec, n: float, thread_count: int) -> float:
    """Backlog at which the continuous optimal code length equals n."""
    if n < 1:
        raise ValueError("code length must be >= 1")
    return _invert_monotone_code_fn(cls, n, thread_count, key=lambda opt: opt.n)


def invert_code_dimension(cls: ClassSpec, k: float, thread_count: int) -> float:
    """Backlog at which the continuous optimal code dimension equals k."""
    if k < 1:
        raise ValueError("code dimension must be >= 1")
    return _invert_monotone_code_fn(cls, k, thread_count, key=lambda opt: opt.k)


@dataclass(frozen=True)
class ThresholdTable:
    """Backlog thresholds driving code selection for one class.

    ``q_n[i]`` is the backlog at which the continuous optimal length equals
    i+1; ``h_n`` has one more entry: h_n[0] = +inf, interior entries are
    midpoints of consecutive q_n values, and h_n[-1] = 0. A smoothed backlog
    selects length n when it falls in [h_n[n], h_n[n-1]). Same layout for the
    dimension tables q_k / h_k.
    """

    k_max: int
    r_max: float
    n_max: int
    q_n: tuple[float, ...]
    h_n: tuple[float, ...]
    q_k: tuple[float, ...]
    h_k: tuple[float, ...]

    @staticmethod
    def _pick(h: tuple[float, ...], q_bar: float) -> int:
        # largest 1-based index v with q_bar < h[v-1]; h is strictly decreasing
        v = 1
        for i in range(1, len(h)):
            if q_bar < h[i - 1]:
                v = i
            else:
                break
        return v

    def select(self, q_bar: float) -> CodeChoice:
        """Raw (n, k) table lookup; the caller applies the redundancy cap."""
        if q_bar < 0:
            raise ValueError("backlog must be >= 0")
        return CodeChoice(self._pick(self.h_n, q_bar), self._pick(self.h_k, q_bar))


def _midpoint_thresholds(q: Sequence[float]) -> tuple[float, ...]:
    h = [math.inf]
    h.extend((q[i] + q[i - 1]) / 2.0 for i in range(1, len(q)))
    h.append(0.0)
    return tuple(h)


def build_thresholds(cls: ClassSpec, thread_count: int) -> ThresholdTable:
    """Invert the continuous code functions at every integer level and place
    switching thresholds at midpoints."""
    n_max = cls.n_max
    q_n = tuple(invert_code_length(cls, n, thread_count) for n in range(1, n_max + 1))
    q_k = tuple(invert_code_dimension(cls, k, thread_count) for k in range(1, cls.k_max + 1))
    return ThresholdTable(
        k_max=cls.k_max,
        r_max=cls.r_max,
        n_max=n_max,
        q_n=q_n,
        h_n=_midpoint_thresholds(q_n),
        q_k=q_k,
        h_k=_midpoint_thresholds(q_k),
    )


def thresholds_to_csv(tables: Sequence[ThresholdTable], out: IO[str]) -> None:
    """Write threshold tables as CSV rows (class_id, kind, index, Q_value, H_value)."""
    writer = csv.writer(out)
    writer.writerow(["class_id", "kind", "index", "Q_value", "H_value"])
    for class_id, table in enumerate(tables):
        for kind, q, h in (("N", table.q_n, table.h_n), ("K", table.q_k, table.h_k)):
            for i, h_value in enumerate(h, start=1):
                q_value = repr(q[i - 1]) if i <= len(q) else ""
                writer.writerow([class_id, kind, i, q_value, repr(h_value)])


def static_objective(
    classes: Sequence[ClassSpec],
    codes: Sequence[Sequence[int]],
    lam: float,
    thread_count: int,
) -> float:
    """Mean total delay of a fixed code assignment: queueing delay plus the
    popularity-weighted log-approximate service delay (the solver's objective).
    Raises OverloadError when the assignment cannot sustain lam."""
    u_bar = mean_usage(classes, codes)
    lambda_bar = lam * u_bar
    d_q = queueing_delay(lambda_bar, u_bar, thread_count)
    d_s = math.fsum(
        c.popularity * expected_service_delay(c, code, mode="log_approx")
        for c, code in zip(classes, codes)
    )
    return d_q + d_s


def brute_force_best_static(
    classes: Sequence[ClassSpec], lam: float, thread_count: int
) -> tuple[tuple[CodeChoice, ...], float]:
    """Exhaustive argmin of the analytic objective over the integer code grid.

    Ties (including all-infinite objectives) go to the smallest n, then the
    smallest k, per class in order.
    """
    best_codes: tuple[CodeChoice, ...] | None = None
    best_value = math.inf

    def search(i: int, chosen: list[CodeChoice]) -> None:
        nonlocal best_codes, best_value
        if i == len(classes):
            try:
                value = static_objective(classes, chosen, lam, thread_count)
            except OverloadError:
                return
            if best_codes is None or value < best_value:
                best_codes = tuple(chosen)
                best_value = value
            return
        for code in classes[i].code_grid():
            chosen.append(code)
            search(i + 1, chosen)
            chosen.pop()

    search(0, [])
    if best_codes is None:
        raise OverloadError(f"no feasible static code assignment at rate {lam}")
    return best_codes, best_value


def surrounding_codes(cls: ClassSpec, optimum: ClassOptimum) -> set[CodeChoice]:
    """Integer lattice codes around a continuous optimum, caps applied first."""
    k_capped = min(optimum.k, float(cls.k_max))
    r_capped = min(optimum.r, cls.r_max)
    n_capped = k_capped * r_capped
    candidates = set()
    for k in {math.floor(k_capped), math.ceil(k_capped)}:
        k = min(max(int(k), 1), cls.k_max)
        for n in {math.floor(n_capped), math.ceil(n_capped)}:
            n = min(max(int(n), k), cls.max_n_for_k(k))
            candidates.add(CodeChoice(n, k))
    return candidates
