"""Trajectory containers, the one-step loss, clipping and the error functionals.

States are stored as arrays of shape ``(N, T + 1, n)``: trajectory index,
time index, state coordinate.  Transition pairs are always flattened
trajectory-major, so row ``i * T + t`` of :meth:`Dataset.inputs` is
``x_t(xi_i)`` and the same row of :meth:`Dataset.targets` is ``x_{t+1}(xi_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidInputError

ASSUMPTION_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """A single sampled state sequence x_0, ..., x_T."""

    states: np.ndarray

    def __post_init__(self):
        states = _frozen(self.states)
        if states.ndim != 2:
            raise InvalidInputError(f"trajectory states must be 2-D (T+1, n), got shape {states.shape}")
        if states.shape[0] < 2 or states.shape[1] < 1:
            raise InvalidInputError(f"trajectory needs T >= 1 and n >= 1, got shape {states.shape}")
        if not np.all(np.isfinite(states)):
            raise InvalidInputError("trajectory contains non-finite states")
        object.__setattr__(self, "states", states)

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class Dataset:
    """N trajectories of common length T with a known state-norm bound.

    Construction checks that every state lies in the ball of radius
    ``state_bound`` (relative slack 1e-9 for round-off).
    """

    states: np.ndarray
    state_bound: float

    def __post_init__(self):
        states = _frozen(self.states)
        if states.ndim != 3:
            raise InvalidInputError(f"dataset states must have shape (N, T+1, n), got {states.shape}")
        N, T1, n = states.shape
        if N < 1 or T1 < 2 or n < 1:
            raise InvalidInputError(f"dataset needs N >= 1, T >= 1, n >= 1, got shape {states.shape}")
        if not np.all(np.isfinite(states)):
            raise InvalidInputError("dataset contains non-finite states")
        B = float(self.state_bound)
        if not (np.isfinite(B) and B > 0):
            raise InvalidInputError(f"state_bound must be positive and finite, got {self.state_bound}")
        norms = np.linalg.norm(states, axis=-1)
        bad = np.argwhere(norms > B * (1 + ASSUMPTION_TOL))
        if len(bad):
            i, t = bad[0]
            raise InvalidInputError(
                f"state norm {norms[i, t]:.6g} exceeds bound B={B:g} "
                f"(trajectory {i}, time {t}; {len(bad)} violations)"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "state_bound", B)

    @classmethod
    def from_trajectories(cls, trajectories, state_bound) -> "Dataset":
        trajectories = list(trajectories)
        if not trajectories:
            raise InvalidInputError("dataset needs at least one trajectory")
        shapes = {tr.states.shape for tr in trajectories}
        if len(shapes) != 1:
            raise InvalidInputError(f"trajectories disagree on (T+1, n): {sorted(shapes)}")
        return cls(np.stack([tr.states for tr in trajectories]), state_bound)

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.states.shape[1] - 1

    @property
    def n(self) -> int:
        return self.states.shape[2]

    @property
    def trajectories(self) -> list[Trajectory]:
        return [Trajectory(s) for s in self.states]

    def time_slice(self, t: int) -> np.ndarray:
        """The states x_t(xi_i), i = 1..N, as an (N, n) array."""
        if not 0 <= t <= self.T:
            raise InvalidInputError(f"time index {t} outside 0..{self.T}")
        return self.states[:, t, :]

    def inputs(self) -> np.ndarray:
        return self.states[:, :-1, :].reshape(-1, self.n)

    def targets(self) -> np.ndarray:
        return self.states[:, 1:, :].reshape(-1, self.n)


@dataclass(frozen=True)
class LossSpec:
    """One-step loss ell(.) with its Lipschitz constant on the ball of radius 2B.

    Only the Euclidean norm is built in; its Lipschitz constant is exactly 1.
    """

    kind: str = "euclidean"
    lipschitz_constant: float = 1.0

    KINDS = ("euclidean",)

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidInputError(f"unknown loss kind {self.kind!r}; known: {self.KINDS}")
        if self.kind == "euclidean" and self.lipschitz_constant != 1.0:
            raise InvalidInputError("the euclidean loss has Lipschitz constant exactly 1")
        if not self.lipschitz_constant > 0:
            raise InvalidInputError("lipschitz_constant must be positive")

    @property
    def L(self) -> float:
        return self.lipschitz_constant

    def value(self, residuals: np.ndarray) -> np.ndarray:
        """Row-wise loss of an (m, n) residual array."""
        return np.linalg.norm(residuals, axis=-1)

    def gradient(self, residuals: np.ndarray) -> np.ndarray:
        """Row-wise (sub)gradient; zero where the residual vanishes."""
        norms = np.linalg.norm(residuals, axis=-1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        return np.where(norms > 0, residuals / safe, 0.0)


@dataclass(frozen=True)
class OptConfig:
    """Settings shared by the projected first-order solvers.

    ``step`` is the initial step size.  It is halved whenever a trial step
    fails to decrease the objective and multiplied by ``growth`` after an
    accepted step.  The kernel solver counts ``max_iter`` in iterations, the
    network solver in epochs.
    """

    step: float = 1e-2
    max_iter: int = 5000
    patience: int = 50
    rel_tol: float = 1e-7
    growth: float = 1.05
    momentum: float = 0.9
    batch_size: int = 32

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidInputError("step must be positive")
        if self.max_iter < 1 or self.patience < 1 or self.batch_size < 1:
            raise InvalidInputError("max_iter, patience and batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise InvalidInputError("momentum must lie in [0, 1)")
        if not self.growth >= 1:
            raise InvalidInputError("growth must be >= 1")
        if not self.rel_tol >= 0:
            raise InvalidInputError("rel_tol must be >= 0")


@dataclass
class FitResult:
    """Outcome of one constrained fit."""

    training_error: float
    n_iter: int
    warnings: list[str] = field(default_factory=list)


def clip(y, B: float) -> np.ndarray:
    """Radially rescale ``y`` into the closed ball of radius ``B``.

    Works on a single vector or row-wise on an (m, n) array.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("clip: non-finite input")
    if not B > 0:
        raise InvalidInputError(f"clip: bound must be positive, got {B}")
    norms = np.linalg.norm(y, axis=-1, keepdims=True)
    scale = np.where(norms > B, B / np.where(norms > B, norms, 1.0), 1.0)
    return y * scale


def clip_vjp(z: np.ndarray, B: float, g: np.ndarray) -> np.ndarray:
    """Pull a row-wise cotangent ``g`` on clip(z) back to ``z``.

    Inside the ball clipping is the identity.  Outside it is B z/|z| with
    Jacobian (B/|z|)(I - u u^T), u = z/|z|.  On the sphere itself the
    inside branch is used.
    """
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    out = norms > B
    safe = np.where(out, norms, 1.0)
    u = z / safe
    g_out = (B / safe) * (g - np.sum(g * u, axis=-1, keepdims=True) * u)
    return np.where(out, g_out, g)


def _predict_fn(f):
    if hasattr(f, "predict"):
        return f.predict
    if callable(f):
        return f
    raise InvalidInputError(f"{f!r} is neither a predictor nor a callable")


def _evaluate(f, X):
    Z = np.asarray(_predict_fn(f)(X), dtype=float)
    if Z.shape != X.shape:
        raise InvalidInputError(f"predictor maps inputs of shape {X.shape} to shape {Z.shape}")
    return Z


def training_error(f, S: Dataset, loss: LossSpec = LossSpec()) -> float:
    """Average one-step loss of the clipped predictor over all N*T pairs."""
    X, Y = S.inputs(), S.targets()
    Z = clip(_evaluate(f, X), S.state_bound)
    return float(np.mean(loss.value(Z - Y)))


def trajectory_losses(f, states: np.ndarray, B: float, loss: LossSpec = LossSpec()) -> np.ndarray:
    """Per-trajectory average loss of clip(f) on an (m, T+1, n) state array."""
    m, T1, n = states.shape
    X = states[:, :-1, :].reshape(-1, n)
    Y = states[:, 1:, :].reshape(-1, n)
    Z = clip(_evaluate(f, X), B)
    return loss.value(Z - Y).reshape(m, T1 - 1).mean(axis=1)


def true_error_mc(f, dyn, sampler, T: int, loss: LossSpec, m: int, seed: int, *,
                  state_bound: float, sampling_period: float = 0.05, substeps: int = 10):
    """Monte-Carlo estimate of the expected one-step risk of clip(f).

    Draws ``m`` fresh initial conditions from ``sampler``, rolls out the
    discretized system for ``T`` sampling periods and averages the
    per-trajectory mean loss.  Returns ``(mean, standard_error)``; the
    standard error is NaN when ``m == 1``.
    """
    if m < 1:
        raise InvalidInputError("m must be >= 1")
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    rng = np.random.default_rng(seed)
    x = sampler.sample(rng, m)
    states = [x]
    for t in range(T):
        x = dyn.flow(x, sampling_period, substeps)
        norms = np.linalg.norm(x, axis=-1)
        if not np.all(np.isfinite(norms)) or np.any(norms > 10 * state_bound):
            raise DivergenceError(
                f"simulated state norm {np.nanmax(norms):.4g} exceeds 10*B = {10 * state_bound:g} at step {t + 1}"
            )
        states.append(x)
    per_traj = trajectory_losses(f, np.stack(states, axis=1), state_bound, loss)
    mean = float(per_traj.mean())
    se = float(per_traj.std(ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
    return mean, se
