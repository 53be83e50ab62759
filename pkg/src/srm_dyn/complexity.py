"""Rademacher penalties, the norm discretization grid and the epsilon bounds.

The closed-form penalties used for selection:

* kernel classes::

    r = 2 sqrt(2) L n M / (T N) * sum_t sqrt(sum_i k(x_t^i, x_t^i))

* depth-D networks::

    r = L n M^D a(D) / (T N) * sum_t sqrt(sum_i (|x_t^i|^2 + 1)),
    a(D) = 2 sqrt(2) (sqrt(2 log(2) D) + 1)

where ``M`` is the grid value covering the learned model's norm.  The
Monte-Carlo estimator :func:`general_penalty_mc` evaluates the generic
penalty ``2 sqrt(2) L / T * sum_t sum_j Rad_{S_t}(clipped class_j)`` with a
numerically maximized inner supremum.  It is only a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn, rkhs
from .core import Dataset, LossSpec, OptConfig, clip, clip_vjp
from .errors import ConstraintViolatedError, InvalidInputError, KernelError, OracleUnavailableError

GRID_TOL = 1e-9


@dataclass(frozen=True)
class DiscretizationGrid:
    """Increasing positive norm levels M_1 < ... < M_Q."""

    values: tuple
    spacing: float | None = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise InvalidInputError("grid needs at least one value")
        if vals[0] <= 0 or any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidInputError("grid values must be positive and strictly increasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_spacing(cls, spacing: float, max_bound: float) -> "DiscretizationGrid":
        """Equal-spacing grid M_q = q * spacing extended until it covers ``max_bound``."""
        if not spacing > 0 or not max_bound > 0:
            raise InvalidInputError("spacing and max_bound must be positive")
        Q = max(1, math.ceil(max_bound / spacing - GRID_TOL))
        return cls(tuple(np.arange(1, Q + 1) * spacing), float(spacing))

    @property
    def Q(self) -> int:
        return len(self.values)

    @property
    def M_max(self) -> float:
        return self.values[-1]


@dataclass(frozen=True)
class PenaltyReport:
    penalty: float
    M_used: float
    epsilon: float


def lookup_q(norm_value: float, grid: DiscretizationGrid) -> tuple[int, float]:
    """Smallest 1-based ``q`` with ``norm_value <= M_q``."""
    if not norm_value >= 0:
        raise InvalidInputError(f"norm must be non-negative, got {norm_value}")
    if norm_value > grid.M_max * (1 + GRID_TOL):
        raise ConstraintViolatedError(
            f"model norm {norm_value:.10g} exceeds the largest grid value {grid.M_max:g}"
        )
    idx = int(np.searchsorted(grid.values, norm_value, side="left"))
    idx = min(idx, grid.Q - 1)
    return idx + 1, grid.values[idx]


def _slice_sums(S: Dataset, per_point) -> float:
    total = 0.0
    for t in range(S.T):
        total += math.sqrt(float(np.sum(per_point(S.time_slice(t)))))
    return total


def rkhs_penalty(kernel: rkhs.Kernel, S: Dataset, M_used: float, loss: LossSpec = LossSpec()) -> float:
    if M_used < 0:
        raise InvalidInputError("M_used must be >= 0")

    def diag(X):
        d = kernel.diag(X)
        if np.any(d < 0):
            raise KernelError("kernel diagonal is negative")
        return d

    scale = 2.0 * math.sqrt(2.0) * loss.L * S.n * M_used / (S.T * S.N)
    return scale * _slice_sums(S, diag)


def depth_factor(D: int) -> float:
    return 2.0 * math.sqrt(2.0) * (math.sqrt(2.0 * math.log(2.0) * D) + 1.0)


def nn_penalty(D: int, M_used: float, S: Dataset, loss: LossSpec = LossSpec()) -> float:
    if D < 1:
        raise InvalidInputError("depth must be >= 1")
    if M_used < 0:
        raise InvalidInputError("M_used must be >= 0")
    scale = loss.L * S.n * M_used ** D * depth_factor(D) / (S.T * S.N)
    return scale * _slice_sums(S, lambda X: np.sum(X * X, axis=1) + 1.0)


def epsilon_bound(r_k: float, L: float, B: float, N: int, delta: float, Q: int | None = None) -> float:
    """``r_k + 6 L B sqrt(log(4 Q / delta) / (2 N))``; ``Q=None`` drops the grid factor."""
    if not 0 < delta < 1:
        raise InvalidInputError("delta must be in (0,1)")
    if r_k < 0 or not L > 0 or not B > 0 or N < 1:
        raise InvalidInputError("epsilon_bound needs r_k >= 0, L > 0, B > 0, N >= 1")
    q = 1 if Q is None else int(Q)
    if q < 1:
        raise InvalidInputError("Q must be >= 1")
    return r_k + 6.0 * L * B * math.sqrt(math.log(4.0 * q / delta) / (2.0 * N))


def rademacher_signs(N: int, draws: int, seed: int) -> np.ndarray:
    """Rademacher vectors, draw ``d`` generated from the seed pair (seed, d)."""
    return np.stack([
        np.random.default_rng([seed, d]).integers(0, 2, size=N) * 2.0 - 1.0 for d in range(draws)
    ])


def rademacher_mc(evaluate_sup, N: int, draws: int, seed: int, batched: bool = False):
    """Monte-Carlo estimate of the empirical Rademacher complexity.

    ``evaluate_sup(sigma)`` must return ``sup_g (1/N) sum_i sigma_i g(z_i)``
    for one sign vector; with ``batched=True`` it receives all sign vectors
    as a (draws, N) array and returns one value per row.
    Returns ``(mean, standard_error)``.
    """
    if draws < 1 or N < 1:
        raise InvalidInputError("draws and N must be >= 1")
    sigmas = rademacher_signs(N, draws, seed)
    if batched:
        vals = np.asarray(evaluate_sup(sigmas), dtype=float)
    else:
        vals = np.array([float(evaluate_sup(s)) for s in sigmas])
    if vals.shape != (draws,) or not np.all(np.isfinite(vals)):
        raise OracleUnavailableError("inner supremum returned non-finite or misshaped values")
    se = float(vals.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    return float(vals.mean()), se


def _rkhs_component_sup(spec: rkhs.RkhsClassSpec, Z: np.ndarray, j: int, B: float, opt: OptConfig, iters: int):
    """Batched inner supremum for the clipped j-th component of a kernel class."""
    G = rkhs.gram(spec.kernel, Z)
    N, n = Z.shape

    def sup(sigmas):
        D = len(sigmas)
        if spec.bound == 0:
            return np.zeros(D)
        alphas0 = np.zeros((D, N, n))
        quad = np.einsum("di,ik,dk->d", sigmas, G, sigmas)
        ok = quad > 1e-12
        alphas0[ok, :, j] = spec.bound * sigmas[ok] / np.sqrt(quad[ok])[:, None]
        cot = np.zeros((D, N, n))
        cot[:, :, j] = -sigmas / N

        def objective(P):
            vals = -np.einsum("di,di->d", sigmas, clip(P, B)[:, :, j]) / N
            return vals, clip_vjp(P, B, cot) / 1.0

        _, vals, _, _ = rkhs.minimize_projected(objective, alphas0, G, spec.bound, opt, max_iter=iters)
        return -vals

    return sup


def _nn_component_sup(spec: nn.NnClassSpec, Z: np.ndarray, j: int, B: float, seed: int,
                      iters: int, restarts: int):
    N, n = Z.shape

    def sup(sigmas):
        D = len(sigmas)
        if spec.bound == 0:
            return np.zeros(D)
        cot = np.zeros((D, N, n))
        cot[:, :, j] = -sigmas / N

        def objective(Ws):
            out, cache = nn.forward_stack(Ws, Z, spec.activation)
            vals = -np.einsum("di,di->d", sigmas, clip(out, B)[:, :, j]) / N
            grads = nn.backward_stack(Ws, cache, clip_vjp(out, B, cot), spec.activation)
            return vals, grads

        best = np.full(D, -np.inf)
        for r in range(restarts):
            rng = np.random.default_rng([seed, r])
            Ws0 = nn.init_weights(rng, n, spec, stack=D)
            Ws0 = [W * (spec.bound / max(np.linalg.norm(W[0]), 1e-12)) for W in Ws0]
            _, vals = nn.minimize_stack(objective, Ws0, spec.bound, step=0.5, momentum=0.9, iters=iters)
            best = np.maximum(best, -vals)
        return best

    return sup


def general_penalty_mc(spec, S: Dataset, loss: LossSpec = LossSpec(), draws: int = 2000, seed: int = 0,
                       inner_iters: int = 200, opt: OptConfig | None = None, restarts: int = 2):
    """Monte-Carlo value of the generic penalty for one class.

    ``spec`` is an :class:`rkhs.RkhsClassSpec` or :class:`nn.NnClassSpec`.
    The inner supremum over the class is found by the class's projected
    solver started from a feasible point, so each draw is a lower bound on
    the exact supremum.  Returns ``(value, standard_error)``; the standard
    error combines the independent per-(t, j) estimates.
    """
    opt = opt or OptConfig(step=1.0, patience=max(inner_iters, 1), rel_tol=0.0)
    total, var = 0.0, 0.0
    factor = 2.0 * math.sqrt(2.0) * loss.L / S.T
    try:
        for t in range(S.T):
            Z = S.time_slice(t)
            for j in range(S.n):
                sub_seed = int(np.random.SeedSequence([seed, t, j]).generate_state(1)[0])
                if isinstance(spec, rkhs.RkhsClassSpec):
                    sup = _rkhs_component_sup(spec, Z, j, S.state_bound, opt, inner_iters)
                elif isinstance(spec, nn.NnClassSpec):
                    sup = _nn_component_sup(spec, Z, j, S.state_bound, sub_seed, inner_iters, restarts)
                else:
                    raise InvalidInputError(f"unsupported class spec {spec!r}")
                mean, se = rademacher_mc(sup, S.N, draws, sub_seed, batched=True)
                total += mean
                var += se * se
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise OracleUnavailableError(f"inner maximization failed: {exc}") from exc
    return factor * total, factor * math.sqrt(var)
