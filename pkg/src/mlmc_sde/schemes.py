"""Time-stepping kernels.

All steppers work on a batch of K independent paths at once: states have
shape (K, d) and increments (K, steps, m).  Each path's iterates depend only
on its own inputs, so results do not change with the batch composition.
The single-path functions (``euler_maruyama`` and friends) are thin wrappers
that run a batch of one and keep every iterate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .problems import SdeProblem, _fifth_power
from .randomness import IncrementGrid

__all__ = [
    "DiscretePath",
    "RadialSolveError",
    "Scheme",
    "deterministic_x5_path",
    "euler_maruyama",
    "implicit_euler_langevin",
    "interpolate",
    "simulate_batch",
    "solve_radial",
    "tamed_euler",
    "x5_log_excess",
    "x5_log_excess_iterates",
    "x5_threshold",
]

LOG2 = math.log(2.0)
_EPS = float(np.finfo(float).eps)


class Scheme(str, enum.Enum):
    EXPLICIT_EULER = "euler"
    TAMED_EULER = "tamed"
    IMPLICIT_EULER = "implicit"
    DETERMINISTIC = "deterministic"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        aliases = {"explicit_euler": "euler", "tamed_euler": "tamed", "implicit_euler": "implicit"}
        return cls(aliases.get(value, value))


class RadialSolveError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class DiscretePath:
    """Iterates Y_0..Y_N on the uniform grid t_n = nT/N."""

    times: np.ndarray
    states: np.ndarray
    scheme_tag: Scheme

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @classmethod
    def uniform(cls, T: float, states, scheme_tag) -> "DiscretePath":
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        n = states.shape[0] - 1
        times = (np.arange(n + 1) * float(T)) / n if n else np.zeros(1)
        return cls(times, states, Scheme.parse(scheme_tag))


def _check_grid(T: float, steps: int, dt: float) -> None:
    if abs(steps * dt - T) > 1e-12 * T:
        raise ValueError(f"grid of {steps} steps with dt={dt} does not span the horizon T={T}")


def _norm(a: np.ndarray) -> np.ndarray:
    if a.shape[-1] == 1:
        return np.abs(a)
    return np.sqrt(np.sum(a * a, axis=-1, keepdims=True))


def solve_radial(h: float, b_norm, tol: float = 1e-12, max_iter: int = 100):
    """Unique root r >= 0 of h r^3 + (1 - h) r = |b| for each entry of ``b_norm``.

    Newton from r = |b|, with bisection on [0, |b| + 1] for entries that have
    not converged after ``max_iter`` Newton steps.  An entry has converged
    when the residual |h r^3 + (1 - h) r - |b|| is at most ``tol``, or at most
    a few ulps of the terms once |b| is so large that ``tol`` is below double
    precision.  Returns ``(r, residual)``.  Entries are iterated
    independently, so each root is unaffected by the rest of the batch.
    """
    if not 0.0 < h <= 1.0:
        raise ValueError(f"implicit step requires 0 < h <= 1, got h={h}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    c = np.array(b_norm, dtype=float, ndmin=1)

    def f(r, target):
        return h * r * r * r + (1.0 - h) * r - target

    def limit(r, target):
        return np.maximum(tol, 8.0 * _EPS * (h * r * r * r + (1.0 - h) * r + target))

    r = c.copy()
    res = np.abs(f(r, c))
    active = np.flatnonzero(~(res <= limit(r, c)))
    for _ in range(max_iter):
        if active.size == 0:
            break
        ra, ca = r[active], c[active]
        slope = np.maximum(3.0 * h * ra * ra + (1.0 - h), 1e-300)
        ra = np.maximum(ra - f(ra, ca) / slope, 0.0)
        r[active] = ra
        res[active] = np.abs(f(ra, ca))
        active = active[~(res[active] <= limit(ra, ca))]

    if active.size:
        lo = np.zeros(active.size)
        hi = c[active] + 1.0
        ca = c[active]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = f(mid, ca)
            lo = np.where(fm < 0, mid, lo)
            hi = np.where(fm < 0, hi, mid)
        ra = 0.5 * (lo + hi)
        r[active] = ra
        res[active] = np.abs(f(ra, ca))
        bad = ~(res[active] <= limit(ra, ca))
        if bad.any():
            raise RadialSolveError("implicit Euler radial equation did not converge",
                                   float(res[active][bad].max()))
    return r, res


def _implicit_langevin_step(y, dw, h, tol, max_iter):
    b = y + dw
    nb = _norm(b)[:, 0]
    r, _ = solve_radial(h, nb, tol, max_iter)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(nb > 0, r / nb, 0.0)
    return b * factor[:, None]


def simulate_batch(problem: SdeProblem, scheme, init, increments, dt: float, *,
                   record: bool = False, tol: float = 1e-12, max_iter: int = 100):
    """Run ``scheme`` on K paths.

    Args:
        init: initial states, shape (K, d).
        increments: Brownian increments, shape (K, steps, m).
        dt: step size; ``steps * dt`` must equal ``problem.T``.
        record: keep every iterate.

    Returns:
        ``states`` of shape (K, steps + 1, d) when ``record`` is set, otherwise
        ``(terminal, sup_square)``: the final states (K, d) and the running
        maximum of |Y_n|^2 over n (K,).
    """
    scheme = Scheme.parse(scheme)
    y = np.array(init, dtype=float, ndmin=2)
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 2:
        inc = inc[:, :, None]
    K, steps, m = inc.shape
    if y.shape != (K, problem.d) or m != problem.m:
        raise ValueError(f"shape mismatch: init {y.shape}, increments {inc.shape}")
    _check_grid(problem.T, steps, dt)
    if scheme is Scheme.IMPLICIT_EULER:
        if problem.name != "langevin":
            raise ValueError("the implicit scheme is implemented for the Langevin problem only")
    elif scheme is Scheme.DETERMINISTIC:
        raise ValueError("use deterministic_x5_path for the deterministic recursion")

    out = np.empty((K, steps + 1, problem.d)) if record else None
    sup = np.sum(y * y, axis=-1)
    if record:
        out[:, 0] = y
    noisy = problem.noise_kind != "zero"
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(steps):
            dw = inc[:, n]
            if scheme is Scheme.IMPLICIT_EULER:
                y = _implicit_langevin_step(y, dw, dt, tol, max_iter)
            else:
                a = problem.drift(y) * dt
                if scheme is Scheme.TAMED_EULER:
                    a = a / (1.0 + _norm(a))
                if noisy:
                    y = y + a + problem.noise(y, dw)
                else:
                    y = y + a
            if record:
                out[:, n + 1] = y
            else:
                np.maximum(sup, np.sum(y * y, axis=-1), out=sup)
    if record:
        return out
    return y, sup


def _single(problem, scheme, init, inc: IncrementGrid, **kw) -> DiscretePath:
    init = np.array(init, dtype=float, ndmin=1)
    states = simulate_batch(problem, scheme, init[None, :], inc.increments[None], inc.dt,
                            record=True, **kw)[0]
    states[0] = init
    return DiscretePath.uniform(problem.T, states, scheme)


def euler_maruyama(problem: SdeProblem, init, inc: IncrementGrid) -> DiscretePath:
    """Y_{n+1} = Y_n + mu(Y_n) h + sigma(Y_n) dW_n."""
    return _single(problem, Scheme.EXPLICIT_EULER, init, inc)


def tamed_euler(problem: SdeProblem, init, inc: IncrementGrid) -> DiscretePath:
    """Euler with the drift increment a = mu(Y) h replaced by a / (1 + |a|)."""
    return _single(problem, Scheme.TAMED_EULER, init, inc)


def implicit_euler_langevin(d: int, init, inc: IncrementGrid, tol: float = 1e-12,
                            max_iter: int = 100) -> DiscretePath:
    """Backward Euler for dX = (X - |X|^2 X) dt + dW.

    Each step reduces to Y (1 - h + h |Y|^2) = Y_n + dW, solved along the
    direction of b = Y_n + dW through the scalar radial equation.
    """
    from .problems import make_langevin

    problem = make_langevin(d, inc.steps * inc.dt)
    return _single(problem, Scheme.IMPLICIT_EULER, init, inc, tol=tol, max_iter=max_iter)


def deterministic_x5_path(x: float, N: int, T: float = 1.0) -> DiscretePath:
    """The recursion y_{n+1} = y_n - y_n^5 T/N started at x."""
    if N < 1:
        raise ValueError("N must be >= 1")
    h = T / N
    ys = [float(x)]
    y = float(x)
    for _ in range(N):
        y = y + (-_fifth_power(y)) * h
        ys.append(y)
    return DiscretePath.uniform(T, ys, Scheme.DETERMINISTIC)


def interpolate(path: DiscretePath, t: float) -> np.ndarray:
    """Piecewise-linear interpolant of ``path`` at time t."""
    T = path.horizon
    if t < -1e-12 or t > T + 1e-12:
        raise ValueError(f"t={t} outside [0, {T}]")
    t = min(max(t, 0.0), T)
    n_steps = path.steps
    if n_steps == 0:
        return path.states[0].copy()
    h = T / n_steps
    n = min(int(np.searchsorted(path.times, t, side="right")) - 1, n_steps)
    if n == n_steps or t == path.times[n]:
        return path.states[n].copy()
    frac = (t - path.times[n]) / h
    y0, y1 = path.states[n], path.states[n + 1]
    return y0 + frac * (y1 - y0)


# ---------------------------------------------------------------------------
# x^5 recursion in log-magnitude coordinates


def x5_threshold(N: int, T: float) -> float:
    """(2N/T)^(1/4): below it the recursion contracts, above it it explodes."""
    return (2.0 * N / T) ** 0.25


def x5_log_excess(x: float, N: int, T: float) -> float:
    """log(|x| / (2N/T)^(1/4)), accurate when |x| is close to the threshold."""
    thr = x5_threshold(N, T)
    return math.log1p((abs(x) - thr) / thr)


def _log_growth(rho: float) -> float:
    # log|y_{n+1} / y_n| as a function of rho_n = log(|y_n| / threshold)
    if rho > 20.0:
        return LOG2 + 4.0 * rho + math.log1p(-0.5 * math.exp(-4.0 * rho))
    q = 2.0 * math.expm1(4.0 * rho)
    if q > -1.0:
        return math.log1p(q)
    v = -1.0 - q
    return math.log(v) if v > 0 else -math.inf


def x5_log_excess_iterates(rho0: float, steps: int) -> np.ndarray:
    """rho_n = log(|y_n| / (2N/T)^(1/4)) for n = 0..steps.

    In these coordinates the recursion no longer depends on N or T:
    rho_{n+1} = rho_n + log|1 + 2 expm1(4 rho_n)|.  Magnitudes that overflow a
    double after a handful of steps stay representable here.
    """
    out = np.empty(steps + 1)
    rho = float(rho0)
    out[0] = rho
    for n in range(steps):
        if rho != -math.inf:
            rho = rho + _log_growth(rho)
        out[n + 1] = rho
    return out
