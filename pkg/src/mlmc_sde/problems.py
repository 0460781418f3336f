"""SDE test problems and path payoffs.

Coefficient functions act on batches: ``drift(x)`` maps an array of shape
(K, d) to (K, d) and ``diffusion(x)`` maps it to (K, d, m).  Arithmetic is
plain IEEE double precision; overflow turns into inf/nan and is never
clamped, because the divergence experiments need to see it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "InitialLaw",
    "Payoff",
    "SdeProblem",
    "PROBLEMS",
    "build_problem",
    "make_ginzburg_landau",
    "make_langevin",
    "make_x5_problem",
]


@dataclass(frozen=True)
class InitialLaw:
    kind: str  # "normal" or "point_mass"
    sigma_bar: float = 0.0
    point: tuple = ()

    def __post_init__(self):
        if self.kind not in ("normal", "point_mass"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        if self.kind == "normal" and not self.sigma_bar >= 0:
            raise ValueError(f"sigma_bar must be nonnegative, got {self.sigma_bar}")

    @classmethod
    def normal(cls, sigma_bar: float) -> "InitialLaw":
        return cls("normal", sigma_bar=float(sigma_bar))

    @classmethod
    def point_mass(cls, point) -> "InitialLaw":
        return cls("point_mass", point=tuple(float(v) for v in np.atleast_1d(point)))


@dataclass(frozen=True)
class SdeProblem:
    """dX = drift(X) dt + diffusion(X) dW on [0, T] with X_0 ~ initial_law."""

    name: str
    d: int
    m: int
    T: float
    drift: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    diffusion: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    initial_law: InitialLaw
    # "zero" and "identity" let steppers skip the matrix product
    noise_kind: str = "general"

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ValueError(f"dimensions must be positive, got d={self.d}, m={self.m}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if self.noise_kind not in ("general", "zero", "identity"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        law = self.initial_law
        if law.kind == "point_mass" and len(law.point) != self.d:
            raise ValueError("point mass dimension does not match d")

    def noise(self, x: np.ndarray, dw: np.ndarray) -> np.ndarray:
        """diffusion(x) @ dw for batched states (K, d) and increments (K, m)."""
        if self.noise_kind == "zero":
            return np.zeros_like(x)
        if self.noise_kind == "identity":
            return np.array(dw, dtype=float)
        return np.matmul(self.diffusion(x), dw[..., None])[..., 0]


def _fifth_power(x):
    # explicit products so scalar and array code round identically
    x2 = x * x
    return x2 * x2 * x


def make_x5_problem(sigma_bar: float = 1.0, T: float = 1.0) -> SdeProblem:
    """dX = -X^5 dt with X_0 ~ N(0, sigma_bar^2)."""
    if not sigma_bar >= 0:
        raise ValueError(f"sigma_bar must be nonnegative, got {sigma_bar}")
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")

    def drift(x):
        return -_fifth_power(np.asarray(x, dtype=float))

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (1,))

    return SdeProblem("x5", 1, 1, float(T), drift, diffusion,
                      InitialLaw.normal(sigma_bar), noise_kind="zero")


def make_ginzburg_landau() -> SdeProblem:
    """dX = (2X - X^3) dt + 2X dW, X_0 = 1, on [0, 1]."""

    def drift(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x - x * x * x

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return (2.0 * x)[..., None]

    return SdeProblem("ginzburg-landau", 1, 1, 1.0, drift, diffusion,
                      InitialLaw.point_mass(1.0))


def make_langevin(d: int = 10, T: float = 1.0) -> SdeProblem:
    """dX = (X - |X|^2 X) dt + dW in R^d, X_0 = 0."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    eye = np.eye(d)

    def drift(x):
        x = np.asarray(x, dtype=float)
        sq = np.sum(x * x, axis=-1, keepdims=True)
        return x - sq * x

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(eye, x.shape[:-1] + (d, d))

    return SdeProblem("langevin", d, d, float(T), drift, diffusion,
                      InitialLaw.point_mass(np.zeros(d)), noise_kind="identity")


PROBLEMS = {
    "x5": make_x5_problem,
    "ginzburg-landau": make_ginzburg_landau,
    "langevin": make_langevin,
}


def build_problem(name: str, sigma_bar: float = 1.0, dim: int = 10,
                  horizon: float = 1.0) -> SdeProblem:
    """Look up a problem by registry name and apply the CLI modifiers."""
    if name == "x5":
        return make_x5_problem(sigma_bar, horizon)
    if name == "langevin":
        return make_langevin(dim, horizon)
    if name == "ginzburg-landau":
        if horizon != 1.0:
            raise ValueError("the Ginzburg-Landau problem is posed on [0, 1]")
        return make_ginzburg_landau()
    raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")


@dataclass(frozen=True)
class Payoff:
    """Path functional f.

    ``kind`` is ``"terminal_power"`` (|X_T|^p, scalar problems),
    ``"terminal_square_norm"`` (|X_T|^2) or ``"path_sup_square_norm"``
    (max of |X_t|^2 over the vertices of the interpolated path, which is
    the sup over the piecewise-linear interpolant).
    """

    kind: str
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("terminal_power", "terminal_square_norm", "path_sup_square_norm"):
            raise ValueError(f"unknown payoff {self.kind!r}")
        if self.kind == "terminal_power" and not self.p > 0:
            raise ValueError(f"exponent must be positive, got {self.p}")

    @classmethod
    def terminal_power(cls, p: float = 2.0) -> "Payoff":
        return cls("terminal_power", float(p))

    @classmethod
    def terminal_square_norm(cls) -> "Payoff":
        return cls("terminal_square_norm")

    @classmethod
    def path_sup_square_norm(cls) -> "Payoff":
        return cls("path_sup_square_norm")

    @property
    def needs_path(self) -> bool:
        return self.kind == "path_sup_square_norm"

    @property
    def label(self) -> str:
        if self.kind == "terminal_power":
            return f"p{self.p:g}"
        return {"terminal_square_norm": "norm2", "path_sup_square_norm": "supnorm2"}[self.kind]

    def from_summary(self, terminal: np.ndarray, sup_square: np.ndarray | None) -> np.ndarray:
        """Payoff values from batched terminal states (K, d) and running sup of |X|^2."""
        if self.kind == "terminal_power":
            if terminal.shape[-1] != 1:
                raise ValueError("terminal_power is defined for scalar problems only")
            return np.abs(terminal[..., 0]) ** self.p
        if self.kind == "terminal_square_norm":
            return np.sum(terminal * terminal, axis=-1)
        return sup_square

    def evaluate(self, path) -> float:
        """Payoff of a single DiscretePath."""
        states = path.states
        sq = np.sum(states * states, axis=-1)
        sup = np.max(sq)
        return float(self.from_summary(states[-1:], np.array([sup]))[0])
