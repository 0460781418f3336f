"""Monte Carlo and multilevel Monte Carlo estimators over the time-stepping schemes.

Sample ``k`` of level ``l`` always draws its initial value from stream
``(l, k, initial)`` and its Brownian increments from ``(l, k, brownian)``.
Work is split into chunks of consecutive samples; chunks may run on worker
threads, but every level sum is reduced in ascending ``k`` with exact
(``math.fsum``) summation, so reports are bit-identical for any worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .problems import Payoff, SdeProblem
from .randomness import Purpose, batch_increments, batch_normals, derive_seed, resolve_seed
from .schemes import Scheme, simulate_batch

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "EstimatorReport",
    "LevelContribution",
    "RmseRow",
    "classify_divergence",
    "coupled_level_sample",
    "coupled_level_samples",
    "fit_loglog_slope",
    "level_zero_samples",
    "mlmc",
    "monte_carlo_euler",
    "rmse_curve",
]

DIVERGENCE_THRESHOLD = 1e12
# upper bound on Brownian increments held in memory per chunk
_CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class LevelContribution:
    level: int
    sample_count: int
    contribution: float


@dataclass(frozen=True)
class EstimatorReport:
    estimator: str
    problem: str
    scheme: str
    steps: int
    value: float
    per_level: tuple[LevelContribution, ...]
    total_samples: int
    diverged: bool
    divergence_reason: str | None
    runtime_seconds: float
    master_seed: int
    payoff: str = field(default="p2")

    CSV_HEADER = ("estimator", "problem", "scheme", "N", "seed", "value", "diverged",
                  "runtime_seconds")

    def csv_row(self) -> tuple:
        return (self.estimator, self.problem, self.scheme, self.steps, self.master_seed,
                self.value, self.diverged, self.runtime_seconds)


def classify_divergence(value: float, threshold: float = DIVERGENCE_THRESHOLD):
    """(diverged, reason) with reason in {None, "non_finite", "magnitude_exceeded"}."""
    if not math.isfinite(value):
        return True, "non_finite"
    if abs(value) > threshold:
        return True, "magnitude_exceeded"
    return False, None


def _exact_sum(values) -> float:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        return 0.0
    if np.isfinite(arr).all():
        try:
            return math.fsum(arr)
        except OverflowError:
            pass
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sum(arr))


def _run_chunks(fn: Callable[[np.ndarray], object], samples: np.ndarray, per_sample: int,
                workers: int) -> list:
    size = max(1, _CHUNK_ELEMENTS // max(1, per_sample))
    chunks = [samples[i:i + size] for i in range(0, samples.size, size)]
    if workers <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def _initial_values(problem: SdeProblem, seed: int, level: int, ks: np.ndarray) -> np.ndarray:
    law = problem.initial_law
    if law.kind == "point_mass":
        return np.tile(np.asarray(law.point, dtype=float), (ks.size, 1))
    return law.sigma_bar * batch_normals(seed, level, ks, Purpose.INITIAL, problem.d)


def _payoffs(problem, scheme, payoff, init, inc, dt) -> np.ndarray:
    terminal, sup = simulate_batch(problem, scheme, init, inc, dt)
    with np.errstate(over="ignore", invalid="ignore"):
        return payoff.from_summary(terminal, sup)


def _single_level(problem, scheme, payoff, seed, level, steps, ks) -> np.ndarray:
    dt = problem.T / steps
    init = _initial_values(problem, seed, level, ks)
    inc = batch_increments(seed, level, ks, steps, dt, problem.m)
    return _payoffs(problem, scheme, payoff, init, inc, dt)


def _coupled(problem, scheme, payoff, seed, level, ks):
    fine_steps = 2 ** level
    dt = problem.T / fine_steps
    init = _initial_values(problem, seed, level, ks)
    fine_inc = batch_increments(seed, level, ks, fine_steps, dt, problem.m)
    coarse_inc = fine_inc[:, 0::2] + fine_inc[:, 1::2]
    fine = _payoffs(problem, scheme, payoff, init, fine_inc, dt)
    coarse = _payoffs(problem, scheme, payoff, init, coarse_inc, 2.0 * dt)
    return fine, coarse


def level_zero_samples(problem: SdeProblem, scheme, payoff: Payoff, samples: Sequence[int],
                       seed: int, steps: int = 1, workers: int = 1) -> np.ndarray:
    """f(Y_steps) for the level-0 streams ``(0, k)``; one value per sample."""
    scheme = Scheme.parse(scheme)
    ks = np.asarray(samples, dtype=np.int64)
    parts = _run_chunks(
        lambda c: _single_level(problem, scheme, payoff, seed, 0, steps, c),
        ks, steps * problem.m, workers)
    return np.concatenate(parts) if parts else np.empty(0)


def coupled_level_samples(problem: SdeProblem, scheme, payoff: Payoff, level: int,
                          samples: Sequence[int], seed: int, workers: int = 1):
    """Fine and coarse payoffs for samples ``k`` of level ``l >= 1``.

    The fine path takes 2^l steps, the coarse path 2^(l-1) steps on the
    pairwise-summed increments, both from the initial value of stream (l, k).
    Returns two arrays ``(fine, coarse)``.
    """
    if level < 1:
        raise ValueError("coupled levels start at l = 1")
    scheme = Scheme.parse(scheme)
    ks = np.asarray(samples, dtype=np.int64)
    parts = _run_chunks(lambda c: _coupled(problem, scheme, payoff, seed, level, c),
                        ks, 2 ** level * problem.m, workers)
    if not parts:
        return np.empty(0), np.empty(0)
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def coupled_level_sample(problem: SdeProblem, scheme, payoff: Payoff, level: int,
                         sample: int, seed: int) -> float:
    """f(fine path) - f(coarse path) for one (level, sample) pair."""
    fine, coarse = coupled_level_samples(problem, scheme, payoff, level, [sample], seed)
    with np.errstate(invalid="ignore"):
        return float(fine[0] - coarse[0])


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def mlmc(problem: SdeProblem, scheme, payoff: Payoff, N: int, seed: int | None = None, *,
         workers: int = 1, divergence_threshold: float = DIVERGENCE_THRESHOLD) -> EstimatorReport:
    """Multilevel estimate with the fixed allocation N / 2^l samples at level l.

    value = (1/N) sum_k f(Y^{1,0,k}_1)
            + sum_{l=1}^{log2 N} (2^l/N) sum_{k <= N/2^l} [f(fine) - f(coarse)]
    """
    if not _is_power_of_two(int(N)):
        raise ValueError(f"N must be a power of two, got {N}")
    N = int(N)
    scheme = Scheme.parse(scheme)
    seed = resolve_seed(seed)
    n_levels = N.bit_length() - 1

    start = time.perf_counter()
    ks0 = np.arange(1, N + 1, dtype=np.int64)
    level_terms = [level_zero_samples(problem, scheme, payoff, ks0, seed, 1, workers) / N]
    counts = [N]
    for level in range(1, n_levels + 1):
        K = N >> level
        weight = (2.0 ** level) / N
        fine, coarse = coupled_level_samples(problem, scheme, payoff, level,
                                             np.arange(1, K + 1, dtype=np.int64), seed, workers)
        terms = np.empty(2 * K)
        terms[0::2] = weight * fine
        terms[1::2] = -(weight * coarse)
        level_terms.append(terms)
        counts.append(K)
    runtime = time.perf_counter() - start

    per_level = tuple(LevelContribution(l, c, _exact_sum(t))
                      for l, (c, t) in enumerate(zip(counts, level_terms)))
    value = _exact_sum(np.concatenate(level_terms))
    diverged, reason = classify_divergence(value, divergence_threshold)
    return EstimatorReport("mlmc", problem.name, scheme.value, N, value, per_level,
                           sum(counts), diverged, reason, runtime, seed, payoff.label)


def monte_carlo_euler(problem: SdeProblem, payoff: Payoff, N: int, seed: int | None = None, *,
                      scheme=Scheme.EXPLICIT_EULER, workers: int = 1,
                      divergence_threshold: float = DIVERGENCE_THRESHOLD) -> EstimatorReport:
    """Average of f over N^2 independent paths with N steps each (streams (0, k))."""
    if N < 1:
        raise ValueError("N must be >= 1")
    scheme = Scheme.parse(scheme)
    seed = resolve_seed(seed)
    n_samples = N * N
    start = time.perf_counter()
    vals = level_zero_samples(problem, scheme, payoff,
                              np.arange(1, n_samples + 1, dtype=np.int64), seed, N, workers)
    runtime = time.perf_counter() - start
    value = _exact_sum(vals) / n_samples
    diverged, reason = classify_divergence(value, divergence_threshold)
    return EstimatorReport("mc", problem.name, scheme.value, N, value,
                           (LevelContribution(0, n_samples, value),), n_samples,
                           diverged, reason, runtime, seed, payoff.label)


@dataclass(frozen=True)
class RmseRow:
    N: int
    replicates: int
    rmse: float
    mean_runtime: float
    mean_value: float
    std_error: float
    diverged_count: int


def rmse_curve(problem: SdeProblem, scheme, payoff: Payoff, N_list: Sequence[int],
               replicates: int, reference_value: float, seed: int | None = None, *,
               workers: int = 1, replicate_seeds: Sequence[int] | None = None) -> list[RmseRow]:
    """Root-mean-square error of ``replicates`` independent MLMC runs per N.

    Replicate r uses seed ``derive_seed(seed, r)`` unless ``replicate_seeds``
    is given.  Any non-finite estimate makes that row's rmse infinite.
    """
    if not math.isfinite(reference_value):
        raise ValueError("reference value must be finite")
    if replicate_seeds is None:
        if replicates < 2:
            raise ValueError("need at least two replicates")
        base = resolve_seed(seed)
        replicate_seeds = [derive_seed(base, r) for r in range(replicates)]
    seeds = list(replicate_seeds)
    rows = []
    for N in N_list:
        reports = [mlmc(problem, scheme, payoff, N, s, workers=workers) for s in seeds]
        values = np.array([r.value for r in reports])
        runtime = math.fsum(r.runtime_seconds for r in reports) / len(reports)
        n_div = sum(r.diverged for r in reports)
        if np.isfinite(values).all():
            sq = (values - reference_value) ** 2
            rmse = math.sqrt(_exact_sum(sq) / len(values))
            mean = _exact_sum(values) / len(values)
            se = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else math.nan
        else:
            rmse, mean, se = math.inf, math.nan, math.nan
        rows.append(RmseRow(int(N), len(values), rmse, runtime, mean, se, n_div))
    return rows


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
