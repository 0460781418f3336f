"""Ground-truth values for the test problems.

* x^5 problem: closed-form solution X_t = xi / (1 + 4 t xi^4)^(1/4), and
  E|X_T|^p as a one-dimensional Gaussian integral.
* Ginzburg-Landau: X_1 = exp(2 W_1) / sqrt(1 + 2 int_0^1 exp(4 W_s) ds) with
  the time integral approximated by the trapezoid rule on a fine grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problems import make_ginzburg_landau
from .randomness import IncrementGrid, Purpose, batch_brownian_paths, resolve_seed
from .schemes import Scheme, simulate_batch

__all__ = [
    "QuadratureError",
    "QuadratureSpec",
    "adaptive_simpson",
    "exact_x5_terminal",
    "gl_exact_path",
    "gl_exact_terminal",
    "gl_reference_value",
    "gl_strong_errors",
    "x5_expectation",
]

# Brownian paths held in memory at once when sampling Ginzburg-Landau references
_GL_CHUNK_ELEMENTS = 1 << 21


class QuadratureError(RuntimeError):
    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class QuadratureSpec:
    """Either ``gauss_hermite`` with ``nodes`` points or ``adaptive_simpson``
    on [-range_multiplier * sigma, range_multiplier * sigma] to ``abs_tol``."""

    rule: str = "adaptive_simpson"
    nodes: int = 64
    abs_tol: float = 1e-8
    range_multiplier: float = 12.0
    max_depth: int = 50

    def __post_init__(self):
        if self.rule == "gauss_hermite":
            if self.nodes < 16:
                raise ValueError("Gauss-Hermite needs at least 16 nodes")
        elif self.rule == "adaptive_simpson":
            if not self.abs_tol > 0:
                raise ValueError("abs_tol must be positive")
            if self.range_multiplier < 8:
                raise ValueError("range_multiplier must be >= 8")
        else:
            raise ValueError(f"unknown quadrature rule {self.rule!r}")


def exact_x5_terminal(xi, t):
    """Solution of dX = -X^5 dt at time t from X_0 = xi (scalar or array)."""
    xi = np.asarray(xi, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    ax = np.abs(xi)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        small = xi / (1.0 + 4.0 * t * ax**4) ** 0.25
        # rewritten for large |xi| so xi^4 never overflows
        inv4 = 1.0 / (ax * ax) / (ax * ax)
        large = np.sign(xi) / (inv4 + 4.0 * t) ** 0.25
    out = np.where(ax <= 1.0, small, large)
    return float(out) if out.ndim == 0 else out


def adaptive_simpson(f, a: float, b: float, abs_tol: float, max_depth: int = 50,
                     initial_panels: int = 64) -> float:
    """Adaptive Simpson quadrature of a vectorised integrand ``f`` on [a, b].

    The interval is first cut into ``initial_panels`` equal panels, each with
    an equal share of ``abs_tol``, so that a peaked integrand is not missed
    by the very first three-point estimate.

    Raises:
        QuadratureError: when some subinterval still misses its share of the
            tolerance at ``max_depth``.
    """
    edges = np.linspace(a, b, initial_panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    fe, fm = f(edges), f(mids)
    stack = []
    for i in range(initial_panels - 1, -1, -1):
        lo, hi = edges[i], edges[i + 1]
        s = (hi - lo) / 6.0 * (fe[i] + 4.0 * fm[i] + fe[i + 1])
        stack.append((lo, hi, fe[i], fm[i], fe[i + 1], s, abs_tol / initial_panels, 0))
    pieces = []
    worst = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, s, tol, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        fl, fr = f(np.array([0.5 * (lo + mid), 0.5 * (mid + hi)]))
        left = (mid - lo) / 6.0 * (flo + 4.0 * fl + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * fr + fhi)
        err = abs(left + right - s) / 15.0
        if err <= tol:
            pieces.append(left + right + (left + right - s) / 15.0)
            continue
        if depth >= max_depth:
            worst = max(worst, err)
            pieces.append(left + right)
            continue
        stack.append((mid, hi, fmid, fr, fhi, right, 0.5 * tol, depth + 1))
        stack.append((lo, mid, flo, fl, fmid, left, 0.5 * tol, depth + 1))
    if worst > 0:
        raise QuadratureError("adaptive Simpson hit the depth limit", worst)
    return math.fsum(pieces)


def x5_expectation(sigma_bar: float, T: float = 1.0, p: float = 2.0,
                   spec: QuadratureSpec | None = None) -> float:
    """E|X_T|^p for the x^5 problem with X_0 ~ N(0, sigma_bar^2).

    Gauss-Hermite loses accuracy once sigma_bar exceeds about 1, because the
    integrand bends on a scale of order T^(-1/4) which the nodes no longer
    resolve; the adaptive Simpson default has no such limit.
    """
    if not sigma_bar > 0:
        raise ValueError("sigma_bar must be positive")
    if not T > 0 or not p > 0:
        raise ValueError("T and p must be positive")
    spec = spec or QuadratureSpec()
    if spec.rule == "gauss_hermite":
        x, w = np.polynomial.hermite.hermgauss(spec.nodes)
        vals = np.abs(exact_x5_terminal(math.sqrt(2.0) * sigma_bar * x, T)) ** p
        return float(np.dot(w, vals) / math.sqrt(math.pi))

    norm = 1.0 / (sigma_bar * math.sqrt(2.0 * math.pi))

    def integrand(x):
        return np.abs(exact_x5_terminal(x, T)) ** p * norm * np.exp(-0.5 * (x / sigma_bar) ** 2)

    half = spec.range_multiplier * sigma_bar
    return adaptive_simpson(integrand, -half, half, spec.abs_tol, spec.max_depth)


def _gl_from_walks(walks: np.ndarray, dt: float) -> np.ndarray:
    """X_1 for a batch of scalar Brownian paths W_dt..W_1 (W_0 = 0 implied)."""
    e = np.exp(4.0 * walks)
    integral = dt * (0.5 * (1.0 + e[:, -1]) + e[:, :-1].sum(axis=1))
    return np.exp(2.0 * walks[:, -1]) / np.sqrt(1.0 + 2.0 * integral)


def gl_exact_terminal(fine_brownian: IncrementGrid) -> float:
    """X_1 of the Ginzburg-Landau equation along the given Brownian increments."""
    if abs(fine_brownian.horizon - 1.0) > 1e-12:
        raise ValueError("the fine grid must span [0, 1]")
    if fine_brownian.m != 1:
        raise ValueError("Ginzburg-Landau is driven by a scalar Brownian motion")
    walks = np.cumsum(fine_brownian.increments[:, 0])[None, :]
    return float(_gl_from_walks(walks, fine_brownian.dt)[0])


def gl_exact_path(walks: np.ndarray, dt: float) -> np.ndarray:
    """X at every fine grid time (including t = 0) for a batch of paths (K, n)."""
    e = np.exp(4.0 * walks)
    # cumulative trapezoid of exp(4 W) with W_0 = 0
    left = np.concatenate([np.ones((walks.shape[0], 1)), e[:, :-1]], axis=1)
    integral = np.cumsum(0.5 * dt * (left + e), axis=1)
    x = np.exp(2.0 * walks) / np.sqrt(1.0 + 2.0 * integral)
    return np.concatenate([np.ones((walks.shape[0], 1)), x], axis=1)


def gl_reference_value(samples: int = 10**6, fine_steps: int = 2**14, seed: int | None = None):
    """Monte Carlo estimate of E[X_1^2] for Ginzburg-Landau.

    Path k uses stream (0, k, reference).  Returns ``(estimate, standard_error)``;
    the standard error is ``None`` for a single sample.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    if fine_steps < 2**12:
        raise ValueError("fine_steps must be at least 2^12")
    seed = resolve_seed(seed)
    dt = 1.0 / fine_steps
    chunk = max(1, _GL_CHUNK_ELEMENTS // fine_steps)
    squares = np.empty(samples)
    for start in range(0, samples, chunk):
        ks = np.arange(start + 1, min(samples, start + chunk) + 1, dtype=np.int64)
        walks = batch_brownian_paths(seed, 0, ks, Purpose.REFERENCE, fine_steps, dt)
        x = _gl_from_walks(walks, dt)
        squares[start:start + ks.size] = x * x
    estimate = math.fsum(squares) / samples
    if samples == 1:
        return estimate, None
    return estimate, float(np.std(squares, ddof=1) / math.sqrt(samples))


def gl_strong_errors(N_list, paths: int = 1000, fine_steps: int = 2**16,
                     seed: int | None = None, scheme=Scheme.TAMED_EULER) -> list[float]:
    """(E sup_t |X_t - Ybar_t|^2)^(1/2) for Ginzburg-Landau, one value per N.

    The scheme runs on the fine increments summed in blocks of fine_steps / N;
    its piecewise-linear interpolant is compared with the exact solution at
    every fine grid time.  Path k uses stream (0, k, reference).
    """
    seed = resolve_seed(seed)
    problem = make_ginzburg_landau()
    dt = 1.0 / fine_steps
    for N in N_list:
        if fine_steps % N:
            raise ValueError(f"N={N} must divide fine_steps={fine_steps}")
    chunk = max(1, _GL_CHUNK_ELEMENTS // fine_steps)
    sup_sq = np.zeros((len(N_list), paths))
    for start in range(0, paths, chunk):
        ks = np.arange(start + 1, min(paths, start + chunk) + 1, dtype=np.int64)
        walks = batch_brownian_paths(seed, 0, ks, Purpose.REFERENCE, fine_steps, dt)
        exact = gl_exact_path(walks, dt)
        full = np.concatenate([np.zeros((ks.size, 1)), walks], axis=1)
        for i, N in enumerate(N_list):
            r = fine_steps // N
            coarse_w = full[:, ::r]
            inc = np.diff(coarse_w, axis=1)[:, :, None]
            states = simulate_batch(problem, scheme, np.ones((ks.size, 1)), inc, 1.0 / N,
                                    record=True)[:, :, 0]
            frac = np.arange(r) / r
            seg = states[:, :-1, None] + frac[None, None, :] * np.diff(states, axis=1)[:, :, None]
            interp = np.concatenate([seg.reshape(ks.size, -1), states[:, -1:]], axis=1)
            err = np.max(np.abs(exact - interp), axis=1)
            sup_sq[i, start:start + ks.size] = err * err
    return [math.sqrt(math.fsum(row) / paths) for row in sup_sq]
