"""Which MLMC level blows up, computed from the realised initial values.

For the x^5 problem the MLMC Euler estimate with N = 2^L steps is a
deterministic function of the initial values xi^{l,k} (level l, sample k).
The statistics here locate the highest level holding an initial value past
that level's explosion threshold 2^{l/4} T^{-1/4} and record the events used
to show that this level dominates the estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .randomness import Purpose, batch_normals, derive_seed, resolve_seed
from .schemes import x5_threshold

__all__ = [
    "InitialArray",
    "LevelStats",
    "TrendRow",
    "compute_level_stats",
    "diagnose_rows",
    "explosion_predicate",
    "level_stats_trend",
    "sample_initial_array",
]


@dataclass(frozen=True)
class InitialArray:
    """Initial values xi^{l,k}; ``levels[l][k - 1]`` for l = 0..log2(N)."""

    T: float
    sigma_bar: float
    N: int
    levels: tuple

    def __post_init__(self):
        N = self.N
        if N < 2 or N & (N - 1):
            raise ValueError(f"N must be a power of two >= 2, got {N}")
        depth = N.bit_length() - 1
        if len(self.levels) != depth + 1:
            raise ValueError(f"expected {depth + 1} levels, got {len(self.levels)}")
        levels = tuple(np.asarray(v, dtype=float).ravel() for v in self.levels)
        for l, v in enumerate(levels):
            if v.size != N >> l:
                raise ValueError(f"level {l} must hold {N >> l} values, got {v.size}")
        object.__setattr__(self, "levels", levels)

    @property
    def depth(self) -> int:
        return self.N.bit_length() - 1

    @classmethod
    def from_mapping(cls, T: float, sigma_bar: float, N: int,
                     values: Mapping[tuple, float]) -> "InitialArray":
        depth = N.bit_length() - 1
        levels = []
        for l in range(depth + 1):
            try:
                levels.append([values[(l, k)] for k in range(1, (N >> l) + 1)])
            except KeyError as exc:
                raise ValueError(f"missing initial value {exc.args[0]}") from None
        if len(values) != sum(len(v) for v in levels):
            raise ValueError("mapping holds entries outside the level/sample ranges")
        return cls(T, sigma_bar, N, tuple(levels))


@dataclass(frozen=True)
class LevelStats:
    L_N: int
    eta_N: float
    theta_N: float
    A1: bool
    A2: bool
    A3: bool
    A4: bool
    delta: float
    # set when L_N = 1, so theta_N is the maximum over level 0
    theta_from_level_zero: bool


def _level_threshold(l: int, T: float) -> float:
    return 2.0 ** (l / 4.0) * T ** -0.25


def _level_floor(sigma_bar: float, T: float, N: int) -> float:
    # floor(2 ld(sigma_bar^2 sqrt(T) ln N)); -inf when the log argument is not positive
    g = sigma_bar * sigma_bar * math.sqrt(T) * math.log(N)
    if g <= 0:
        return -math.inf
    return math.floor(2.0 * math.log2(g))


def compute_level_stats(init: InitialArray, delta: float = 0.25) -> LevelStats:
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta}")
    T, N = init.T, init.N
    mags = [np.abs(v) for v in init.levels]

    L = 1
    for l in range(1, init.depth + 1):
        if np.any(mags[l] > _level_threshold(l, T)):
            L = l
    eta = float(mags[L].max())
    theta = float(mags[L - 1].max())

    floor_l = _level_floor(init.sigma_bar, T, N)
    a1 = L < floor_l
    a2 = any(np.any(mags[l] >= 2.0 ** ((l - 1) / 4.0) * T ** -0.25 * N)
             for l in range(init.depth + 1))
    a3 = False
    start = 1 if floor_l == -math.inf else max(1, int(floor_l))
    for l in range(start, init.depth + 2):
        lo = _level_threshold(l, T)
        if lo <= eta < lo * (1.0 + 5.0 ** (-delta * 2.0 ** (l - 1))):
            a3 = True
            break
    a4 = abs(eta - theta) <= 4.0 ** (-(2.0 ** (L - 1))) * eta
    return LevelStats(L, eta, theta, bool(a1), bool(a2), a3, bool(a4), delta, L == 1)


def explosion_predicate(xi: float, N: int, T: float = 1.0) -> bool:
    """True iff |xi| > (2N/T)^(1/4), i.e. the x^5 Euler recursion with N steps blows up."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return abs(xi) > x5_threshold(N, T)


def sample_initial_array(sigma_bar: float, T: float, N: int, seed: int | None = None) -> InitialArray:
    """The initial values an MLMC run with this seed would use for the x^5 problem."""
    seed = resolve_seed(seed)
    depth = N.bit_length() - 1
    levels = tuple(
        sigma_bar * batch_normals(seed, l, np.arange(1, (N >> l) + 1), Purpose.INITIAL, 1)[:, 0]
        for l in range(depth + 1)
    )
    return InitialArray(T, sigma_bar, N, levels)


def diagnose_rows(sigma_bar: float, T: float, N_list: Sequence[int], replicates: int,
                  seed: int | None = None, delta: float = 0.25) -> list[tuple]:
    """Rows (N, replicate, L_N, eta_N, theta_N, A1, A2, A3, A4); replicate r uses
    ``derive_seed(seed, r)``, matching ``rmse_curve``'s replicate seeds."""
    base = resolve_seed(seed)
    rows = []
    for N in N_list:
        for r in range(replicates):
            st = compute_level_stats(sample_initial_array(sigma_bar, T, N, derive_seed(base, r)),
                                     delta)
            rows.append((N, r, st.L_N, st.eta_N, st.theta_N, st.A1, st.A2, st.A3, st.A4))
    return rows


@dataclass(frozen=True)
class TrendRow:
    N: int
    mean_L_N: float
    frac_any: float
    frac_A1: float
    frac_A2: float
    frac_A3: float
    frac_A4: float


def level_stats_trend(sigma_bar: float, T: float, N_list: Sequence[int], replicates: int,
                      seed: int | None = None, delta: float = 0.25) -> list[TrendRow]:
    if replicates <= 0:
        return []
    rows = diagnose_rows(sigma_bar, T, N_list, replicates, seed, delta)
    out = []
    for N in N_list:
        block = [r for r in rows if r[0] == N]
        flags = np.array([r[5:9] for r in block], dtype=bool)
        out.append(TrendRow(
            N,
            float(np.mean([r[2] for r in block])),
            float(flags.any(axis=1).mean()),
            *(float(f) for f in flags.mean(axis=0)),
        ))
    return out
