"""Norm-constrained vector-valued kernel predictors.

A predictor in the class with kernel ``k`` and bound ``B_k`` is a kernel
expansion over the N*T training inputs,

    f(x) = sum_a alpha_a k(p_a, x),      alpha in R^{NT x n},

and class membership is the per-output constraint
``alpha[:, j]^T G alpha[:, j] <= B_k^2`` with ``G`` the Gram matrix of the
anchors ``p_a``.  The solver is an accelerated projected gradient method run
in the geometry induced by ``G``: the step direction is the derivative of the
summed loss with respect to the predictions at the anchors, and projection
onto the norm ball is a radial rescaling of each output column.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .core import Dataset, FitResult, LossSpec, OptConfig, clip, clip_vjp
from .errors import InvalidInputError, KernelError, NumericError

SYM_TOL = 1e-12
NEG_QUAD_TOL = 1e-10
MIN_NORM = 1e-12
MIN_STEP = 1e-10
ZERO_OBJECTIVE = 1e-10

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Kernel:
    """Gaussian ``exp(-gamma |x - x'|^2)`` or polynomial ``(x.x' + c)^degree``."""

    kind: str
    gamma: float = 1.0
    c: float = 0.0
    degree: int = 1

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.gamma > 0:
                raise InvalidInputError(f"gaussian kernel needs gamma > 0, got {self.gamma}")
        elif self.kind == "polynomial":
            if self.c < 0 or int(self.degree) != self.degree or self.degree < 1:
                raise InvalidInputError("polynomial kernel needs c >= 0 and integer degree >= 1")
        else:
            raise InvalidInputError(f"unknown kernel kind {self.kind!r}")

    @classmethod
    def gaussian(cls, gamma: float) -> "Kernel":
        return cls("gaussian", gamma=float(gamma))

    @classmethod
    def polynomial(cls, c: float, degree: int) -> "Kernel":
        return cls("polynomial", c=float(c), degree=int(degree))

    def __call__(self, x, y) -> float:
        return kernel_eval(self, x, y)

    def matrix(self, X, Y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.kind == "gaussian":
            return np.exp(-self.gamma * cdist(X, Y, "sqeuclidean"))
        return (X @ Y.T + self.c) ** self.degree

    def diag(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "gaussian":
            return np.ones(len(X))
        return (np.sum(X * X, axis=1) + self.c) ** self.degree

    def describe(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian(gamma={self.gamma:g})"
        return f"polynomial(c={self.c:g},q={self.degree})"

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "gamma": self.gamma}
        return {"kind": "polynomial", "c": self.c, "degree": self.degree}

    @classmethod
    def from_dict(cls, d: dict) -> "Kernel":
        if d["kind"] == "gaussian":
            return cls.gaussian(d["gamma"])
        return cls.polynomial(d.get("c", 0.0), d.get("degree", 1))


def kernel_eval(k: Kernel, x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if k.kind == "gaussian":
        d = x - y
        return float(np.exp(-k.gamma * np.dot(d, d)))
    return float((np.dot(x, y) + k.c) ** k.degree)


def gram(k: Kernel, points) -> np.ndarray:
    """Symmetric Gram matrix over ``points``."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if len(P) < 1:
        raise InvalidInputError("gram needs at least one point")
    G = k.matrix(P, P)
    scale = max(1.0, float(np.max(np.abs(G))))
    asym = float(np.max(np.abs(G - G.T)))
    if asym > SYM_TOL * scale:
        raise KernelError(f"kernel matrix asymmetric by {asym:.3g}")
    return 0.5 * (G + G.T)


@dataclass(frozen=True)
class RkhsClassSpec:
    """One class of the kernel hierarchy: a kernel and a norm bound."""

    kernel: Kernel
    bound: float

    def __post_init__(self):
        if not self.bound >= 0:
            raise InvalidInputError("class norm bound must be >= 0")

    family = "rkhs"

    def describe(self) -> str:
        return f"{self.kernel.describe()};B={self.bound:g}"


@dataclass
class KernelPredictor:
    alphas: np.ndarray
    anchors: np.ndarray
    kernel: Kernel
    clip_bound: float
    fit: FitResult | None = field(default=None, compare=False)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.anchors = np.asarray(self.anchors, dtype=float)
        if self.alphas.ndim != 2 or self.alphas.shape != self.anchors.shape:
            raise InvalidInputError(
                f"alphas {self.alphas.shape} and anchors {self.anchors.shape} must share shape (NT, n)"
            )

    @property
    def n(self) -> int:
        return self.anchors.shape[1]

    def predict(self, x) -> np.ndarray:
        return predict(self, x)

    def clipped(self, x) -> np.ndarray:
        return clip(predict(self, x), self.clip_bound)

    def norms(self) -> np.ndarray:
        return column_norms(self.alphas, gram(self.kernel, self.anchors))

    def max_norm(self) -> float:
        return float(np.max(self.norms()))


def predict(f: KernelPredictor, x) -> np.ndarray:
    """Unclipped kernel expansion at one point (n,) or a batch (m, n)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    K = f.kernel.matrix(np.atleast_2d(x), f.anchors)
    out = K @ f.alphas
    return out[0] if single else out


def column_norms(alphas: np.ndarray, G: np.ndarray, GA: np.ndarray | None = None) -> np.ndarray:
    """RKHS norm of every output column (works with a leading batch axis)."""
    if GA is None:
        GA = G @ alphas
    quad = np.sum(alphas * GA, axis=-2)
    scale = np.maximum(1.0, np.sum(np.abs(alphas) * np.abs(GA), axis=-2))
    if np.any(quad < -NEG_QUAD_TOL * scale):
        raise NumericError(f"negative RKHS quadratic form {quad.min():.3g}")
    return np.sqrt(np.maximum(quad, 0.0))


def rkhs_norm(f: KernelPredictor, j: int) -> float:
    if not 0 <= j < f.n:
        raise InvalidInputError(f"output index {j} outside 0..{f.n - 1}")
    return float(column_norms(f.alphas[:, j:j + 1], gram(f.kernel, f.anchors))[0])


def project(alphas: np.ndarray, GA: np.ndarray, bound: float):
    """Radially rescale every column whose RKHS norm exceeds ``bound``.

    Returns the projected coefficients and the matching ``G @ alphas``.
    """
    norms = column_norms(alphas, None, GA)
    over = norms > np.maximum(bound, MIN_NORM)
    scale = np.where(over, bound / np.where(over, norms, 1.0), 1.0)
    scale = scale[..., None, :]
    return alphas * scale, GA * scale


def clipped_objective(Z: np.ndarray, Y: np.ndarray, B: float, loss: LossSpec):
    """Mean clipped loss and its derivative with respect to the predictions ``Z``."""
    R = clip(Z, B) - Y
    value = float(np.mean(loss.value(R)))
    dZ = clip_vjp(Z, B, loss.gradient(R)) / len(Z)
    return value, dZ


def smoothed_direction(Z: np.ndarray, Y: np.ndarray, B: float, rel: float = 0.1):
    """Mean clipped loss plus a Huber-smoothed descent direction.

    Row residuals below ``rel`` times the median residual norm contribute
    ``r / delta`` instead of the unit vector ``r / |r|``; this keeps the step
    size from collapsing at the kink of the Euclidean norm.  Only the
    direction is smoothed, the returned value is the exact objective.
    """
    R = clip(Z, B) - Y
    norms = np.linalg.norm(R, axis=-1, keepdims=True)
    value = float(np.mean(norms))
    delta = max(rel * float(np.median(norms)), 1e-12)
    g = R / np.maximum(norms, delta)
    return value, clip_vjp(Z, B, g) / len(Z)


def objective_and_gradient(alphas, G, Y, B, loss: LossSpec = LossSpec()):
    """Clipped training error and its Euclidean gradient with respect to ``alphas``."""
    value, dZ = clipped_objective(G @ alphas, Y, B, loss)
    return value, G @ dZ


def minimize_projected(objective, alphas0: np.ndarray, G: np.ndarray, bound: float,
                       opt: OptConfig, max_iter: int | None = None):
    """Monotone accelerated projected gradient descent over kernel coefficients.

    ``objective(Z)`` receives predictions ``G @ alphas`` with shape
    ``(..., P, n)`` and returns per-problem values (shape ``(...)``) and a
    descent direction with respect to ``Z``.  Since the Euclidean gradient in
    ``alphas`` is ``G @ dZ``, stepping along ``dZ`` is the gradient step in the
    RKHS geometry, where radial rescaling is the exact projection.

    Each iteration backtracks (halving the step) until the projected trial
    point does not increase the objective relative to the extrapolated
    point, or the step falls below ``MIN_STEP``; the step then grows by
    ``opt.growth``.  The returned iterate is the best one seen, so the
    objective never increases.  Independent problems may be stacked on
    leading axes.

    Progress is checked every ``opt.patience`` iterations.  A window without
    any decrease restarts the momentum; a second flat window in a row stops
    that problem and flags it as stalled.  A window whose relative decrease
    is below ``opt.rel_tol`` stops it as converged.

    Returns ``(alphas, values, n_iter, stalled)``.
    """
    max_iter = opt.max_iter if max_iter is None else max_iter
    a, Ga = project(alphas0, G @ alphas0, bound)
    L_a, _ = objective(Ga)
    L_a = np.asarray(L_a, dtype=float)
    batch = L_a.shape
    P = a.shape[-2]
    v, Gv = a, Ga
    t = np.ones(batch)
    eta = np.full(batch, opt.step)
    active = np.ones(batch, dtype=bool)
    stalled = np.zeros(batch, dtype=bool)
    restarted = np.zeros(batch, dtype=bool)
    window_ref = L_a.copy()

    def col(x):
        return x[..., None, None]

    it = 0
    for it in range(1, max_iter + 1):
        L_v, dZ = objective(Gv)
        u, Gu, L_u = v, Gv, np.asarray(L_v, dtype=float)
        step = eta.copy()
        pending = active.copy()
        while np.any(pending):
            trial = v - col(step) * P * dZ
            ut, Gut = project(trial, G @ trial, bound)
            L_t, _ = objective(Gut)
            L_t = np.asarray(L_t, dtype=float)
            if not np.all(np.isfinite(L_t[pending])):
                raise NumericError(f"non-finite objective at iteration {it}")
            accept = pending & ((L_t <= L_v) | (step < MIN_STEP))
            u = np.where(col(accept), ut, u)
            Gu = np.where(col(accept), Gut, Gu)
            L_u = np.where(accept, L_t, L_u)
            pending &= ~accept
            step = np.where(pending, 0.5 * step, step)

        improve = active & (L_u < L_a)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        a_next = np.where(col(improve), u, a)
        Ga_next = np.where(col(improve), Gu, Ga)
        mom_u = col(t / t_next)
        mom_a = col((t - 1.0) / t_next)
        moving = col(active)
        v = np.where(moving, a_next + mom_u * (u - a_next) + mom_a * (a_next - a), v)
        Gv = np.where(moving, Ga_next + mom_u * (Gu - Ga_next) + mom_a * (Ga_next - Ga), Gv)
        t = np.where(active, t_next, t)
        a, Ga = a_next, Ga_next
        L_a = np.where(improve, L_u, L_a)
        eta = np.where(active, step * opt.growth, eta)

        if it % opt.patience == 0:
            gain = window_ref - L_a
            flat = active & (gain <= 0) & (L_a > ZERO_OBJECTIVE)
            # a flat window first restarts the momentum; a second one in a row stops
            stop = flat & restarted
            stalled |= stop
            done = stop | (active & ~flat & (gain <= opt.rel_tol * np.abs(window_ref))) | (L_a <= ZERO_OBJECTIVE)
            restart = flat & ~restarted
            v = np.where(col(restart), a, v)
            Gv = np.where(col(restart), Ga, Gv)
            t = np.where(restart, 1.0, t)
            restarted = restart
            active &= ~done
            window_ref = L_a.copy()
            if not np.any(active):
                break
    return a, L_a, it, stalled


def fit_constrained(S: Dataset, k: Kernel, bound: float, loss: LossSpec = LossSpec(),
                    opt: OptConfig = OptConfig(), seed: int = 0, G: np.ndarray | None = None
                    ) -> KernelPredictor:
    """Minimize the clipped training error over the norm-bounded kernel class.

    Starts from ``alpha = 0`` (feasible for every bound).  ``seed`` is accepted
    for interface symmetry with the network solver; the kernel solver is
    deterministic.  A precomputed Gram matrix of ``S.inputs()`` may be passed.
    """
    if not bound >= 0:
        raise InvalidInputError("bound must be >= 0")
    X, Y = S.inputs(), S.targets()
    B = S.state_bound
    if G is None:
        G = gram(k, X)
    alphas0 = np.zeros_like(Y)
    if bound == 0:
        value, _ = clipped_objective(np.zeros_like(Y), Y, B, loss)
        return KernelPredictor(alphas0, X, k, B, FitResult(value, 0))

    def objective(Z):
        if loss.kind == "euclidean":
            return smoothed_direction(Z, Y, B)
        return clipped_objective(Z, Y, B, loss)

    alphas, value, n_iter, stalled = minimize_projected(objective, alphas0, G, bound, opt)
    result = FitResult(float(value), n_iter)
    if bool(stalled):
        msg = f"{k.describe()}: objective did not decrease over {opt.patience} iterations"
        result.warnings.append(msg)
        log.warning(msg)
    return KernelPredictor(alphas, X, k, B, result)
