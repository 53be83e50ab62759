"""Continuous-time systems, RK4 sampling and initial-condition samplers.

The discretized map used as ground truth is the RK4 flow over one sampling
period, split into ``substeps`` equal integrator steps.

Double compound pendulum
------------------------
Two identical uniform rods (length l, mass m) hinged in series, state
``(theta1, theta2, p1, p2)`` with generalized momenta.  With
``d = theta1 - theta2`` and ``c = cos d``::

    H = 6 (p1^2 + 4 p2^2 - 3 c p1 p2) / (m l^2 (16 - 9 c^2))
        - (m g l / 2) (3 cos theta1 + cos theta2)

    dtheta1 = 6 (2 p1 - 3 c p2) / (m l^2 (16 - 9 c^2))
    dtheta2 = 6 (8 p2 - 3 c p1) / (m l^2 (16 - 9 c^2))
    dp1 = -(m l^2 / 2) ( dtheta1 dtheta2 sin d + 3 (g / l) sin theta1)
    dp2 = -(m l^2 / 2) (-dtheta1 dtheta2 sin d +     (g / l) sin theta2)

which follow from kinetic energy (m l^2 / 6)(4 w1^2 + w2^2 + 3 c w1 w2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Dataset
from .errors import DivergenceError, InvalidInputError


@dataclass(frozen=True)
class DynamicalSystem:
    """Autonomous vector field x' = F(x), vectorized over leading axes."""

    n: int
    rhs: Callable[[np.ndarray], np.ndarray]
    description: str = ""

    def flow(self, x, period: float, substeps: int = 10) -> np.ndarray:
        """Integrate over ``period`` with ``substeps`` RK4 steps."""
        if substeps < 1:
            raise InvalidInputError("substeps must be >= 1")
        dt = period / substeps
        for _ in range(substeps):
            x = rk4_step(self, x, dt)
        return x


def rk4_step(sys: DynamicalSystem, x, dt: float) -> np.ndarray:
    if not dt > 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    k1 = sys.rhs(x)
    k2 = sys.rhs(x + 0.5 * dt * k1)
    k3 = sys.rhs(x + 0.5 * dt * k2)
    k4 = sys.rhs(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("RK4 step produced non-finite state")
    return out


def _pendulum_rates(x, l, m):
    t1, t2, p1, p2 = np.moveaxis(np.asarray(x, dtype=float), -1, 0)
    c = np.cos(t1 - t2)
    den = m * l * l * (16.0 - 9.0 * c * c)
    w1 = 6.0 * (2.0 * p1 - 3.0 * c * p2) / den
    w2 = 6.0 * (8.0 * p2 - 3.0 * c * p1) / den
    return w1, w2


def double_pendulum_rhs(x, l: float = 1.0, m: float = 0.5, g: float = 9.81) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    t1, t2 = x[..., 0], x[..., 1]
    w1, w2 = _pendulum_rates(x, l, m)
    s = np.sin(t1 - t2)
    dp1 = -0.5 * m * l * l * (w1 * w2 * s + 3.0 * (g / l) * np.sin(t1))
    dp2 = -0.5 * m * l * l * (-w1 * w2 * s + (g / l) * np.sin(t2))
    return np.stack([w1, w2, dp1, dp2], axis=-1)


def double_pendulum_energy(x, l: float = 1.0, m: float = 0.5, g: float = 9.81) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    t1, t2, p1, p2 = np.moveaxis(x, -1, 0)
    c = np.cos(t1 - t2)
    kinetic = 6.0 * (p1 * p1 + 4.0 * p2 * p2 - 3.0 * c * p1 * p2) / (m * l * l * (16.0 - 9.0 * c * c))
    potential = -0.5 * m * g * l * (3.0 * np.cos(t1) + np.cos(t2))
    return kinetic + potential


def double_pendulum(l: float = 1.0, m: float = 0.5, g: float = 9.81) -> DynamicalSystem:
    return DynamicalSystem(
        n=4,
        rhs=lambda x: double_pendulum_rhs(x, l, m, g),
        description=f"double compound pendulum (l={l:g}, m={m:g}, g={g:g})",
    )


def double_pendulum_normal_modes(l: float = 1.0, m: float = 0.5, g: float = 9.81) -> np.ndarray:
    """Small-oscillation angular frequencies from the mass and stiffness matrices."""
    mass = (m * l * l / 6.0) * np.array([[8.0, 3.0], [3.0, 2.0]])
    stiffness = 0.5 * m * g * l * np.diag([3.0, 1.0])
    w2 = np.linalg.eigvals(np.linalg.solve(mass, stiffness))
    return np.sort(np.sqrt(np.real(w2)))


def linear_test_system(rate: float = -0.5, n: int = 1) -> DynamicalSystem:
    return DynamicalSystem(n=n, rhs=lambda x: rate * np.asarray(x, dtype=float),
                           description=f"linear x' = {rate:g} x in R^{n}")


def zero_system(n: int = 1) -> DynamicalSystem:
    return DynamicalSystem(n=n, rhs=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                           description=f"zero vector field in R^{n}")


SYSTEMS: dict[str, Callable[..., DynamicalSystem]] = {
    "double_pendulum": double_pendulum,
    "linear_test": linear_test_system,
    "zero": zero_system,
}


def get_system(name: str, **params) -> DynamicalSystem:
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise InvalidInputError(f"unknown system {name!r}; known: {sorted(SYSTEMS)}") from None
    return factory(**params)


@dataclass(frozen=True)
class InitialConditionSampler:
    """Uniform box or box-truncated Gaussian distribution of initial states."""

    kind: str
    lo: tuple
    hi: tuple
    mean: tuple = field(default=None)
    std: tuple = field(default=None)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi) or not lo:
            raise InvalidInputError("sampler box bounds must be non-empty and of equal length")
        if any(a > b for a, b in zip(lo, hi)):
            raise InvalidInputError("sampler box is empty (lo > hi)")
        if self.kind == "uniform":
            return
        if self.kind != "truncated_gaussian":
            raise InvalidInputError(f"unknown sampler kind {self.kind!r}")
        mean = tuple(float(v) for v in (self.mean if self.mean is not None else [0.0] * len(lo)))
        std = tuple(float(v) for v in (self.std if self.std is not None else [1.0] * len(lo)))
        if len(mean) != len(lo) or len(std) != len(lo) or any(s <= 0 for s in std):
            raise InvalidInputError("truncated_gaussian needs positive std and matching dimensions")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def uniform_box(cls, lo, hi) -> "InitialConditionSampler":
        return cls("uniform", tuple(lo), tuple(hi))

    @classmethod
    def truncated_gaussian(cls, mean, std, lo, hi) -> "InitialConditionSampler":
        return cls("truncated_gaussian", tuple(lo), tuple(hi), tuple(mean), tuple(std))

    @property
    def n(self) -> int:
        return len(self.lo)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lo, hi = np.array(self.lo), np.array(self.hi)
        if self.kind == "uniform":
            return rng.uniform(lo, hi, size=(size, self.n))
        mean, std = np.array(self.mean), np.array(self.std)
        out = np.empty((size, self.n))
        filled = 0
        while filled < size:
            draw = rng.normal(mean, std, size=(2 * (size - filled) + 8, self.n))
            ok = draw[np.all((draw >= lo) & (draw <= hi), axis=1)]
            take = min(len(ok), size - filled)
            out[filled:filled + take] = ok[:take]
            filled += take
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "lo": list(self.lo), "hi": list(self.hi)}
        if self.kind == "truncated_gaussian":
            d.update(mean=list(self.mean), std=list(self.std))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InitialConditionSampler":
        return cls(d["kind"], tuple(d["lo"]), tuple(d["hi"]), d.get("mean"), d.get("std"))


def simulate(sys: DynamicalSystem, x0: np.ndarray, T: int, sampling_period: float,
             substeps: int = 10) -> np.ndarray:
    """Roll out initial states ``x0`` (m, n) for ``T`` periods; returns (m, T+1, n)."""
    x = np.asarray(x0, dtype=float)
    states = [x]
    for _ in range(T):
        x = sys.flow(x, sampling_period, substeps)
        states.append(x)
    return np.stack(states, axis=1)


def generate_dataset(sys: DynamicalSystem, sampler: InitialConditionSampler, N: int, T: int,
                     sampling_period: float, substeps: int, B: float, seed: int) -> Dataset:
    if N < 1 or T < 1:
        raise InvalidInputError("N and T must be >= 1")
    if sampler.n != sys.n:
        raise InvalidInputError(f"sampler dimension {sampler.n} does not match system dimension {sys.n}")
    rng = np.random.default_rng(seed)
    states = simulate(sys, sampler.sample(rng, N), T, sampling_period, substeps)
    return Dataset(states, B)
