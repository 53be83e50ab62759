"""Frobenius-norm-constrained multilayer perceptrons.

A depth-D network maps ``x`` to

    W_D g(W_{D-1} g( ... g(W_1 [x; 1])))

with ``W_1`` of shape (H+1, n+1), hidden ``W_d`` of shape (H+1, H+1) and
``W_D`` of shape (n, H+1).  Biases enter only through the constant input
coordinate; a hidden unit driven by that coordinate alone carries a bias to
the next layer.  For D = 1 the network is the affine map ``W_1 [x; 1]`` with
``W_1`` of shape (n, n+1).

Internally every weight matrix carries a leading stack axis so that several
independent networks can be evaluated and trained at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, FitResult, LossSpec, OptConfig, clip, clip_vjp
from .errors import InvalidInputError, TrainingDivergedError

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "leaky_relu")
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class NnClassSpec:
    """Networks of fixed depth and width with every ``|W_d|_F <= bound``."""

    depth: int
    width: int
    bound: float
    activation: str = "relu"

    family = "nn"

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise InvalidInputError("depth and width must be >= 1")
        if not self.bound >= 0:
            raise InvalidInputError("bound must be >= 0")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")

    def describe(self) -> str:
        return f"mlp(D={self.depth},H={self.width});B={self.bound:g}"


def layer_shapes(n: int, depth: int, width: int) -> list[tuple[int, int]]:
    if depth == 1:
        return [(n, n + 1)]
    return [(width + 1, n + 1)] + [(width + 1, width + 1)] * (depth - 2) + [(n, width + 1)]


def _act(h, kind):
    if kind == "relu":
        return np.maximum(h, 0.0)
    return np.where(h > 0, h, LEAKY_SLOPE * h)


def _act_grad(h, kind):
    if kind == "relu":
        return (h > 0).astype(float)
    return np.where(h > 0, 1.0, LEAKY_SLOPE)


def _augment(X):
    ones = np.ones(X.shape[:-1] + (1,))
    return np.concatenate([X, ones], axis=-1)


def forward_stack(Ws, X, activation="relu"):
    """Evaluate stacked networks.

    ``Ws[d]`` has shape (S, rows, cols); ``X`` is (m, n) or (S, m, n).
    Returns the outputs (S, m, n) and the cache needed by :func:`backward_stack`.
    """
    a = _augment(np.asarray(X, dtype=float))
    inputs, pre = [a], []
    for d, W in enumerate(Ws):
        h = a @ np.swapaxes(W, -1, -2)
        if d < len(Ws) - 1:
            pre.append(h)
            a = _act(h, activation)
            inputs.append(a)
        else:
            out = h
    return out, (inputs, pre)


def backward_stack(Ws, cache, d_out, activation="relu"):
    """Gradients of a scalar with cotangent ``d_out`` on the outputs."""
    inputs, pre = cache
    grads = [None] * len(Ws)
    delta = d_out
    for d in range(len(Ws) - 1, -1, -1):
        a_in = inputs[d]
        g = np.swapaxes(delta, -1, -2) @ a_in
        if g.ndim < Ws[d].ndim:
            g = np.broadcast_to(g, Ws[d].shape)
        grads[d] = g
        if d > 0:
            delta = (delta @ Ws[d]) * _act_grad(pre[d - 1], activation)
    return grads


def frob_project(W, bound: float) -> np.ndarray:
    """Euclidean projection onto the Frobenius ball (stack-aware)."""
    W = np.asarray(W, dtype=float)
    norms = np.sqrt(np.sum(W * W, axis=(-2, -1), keepdims=True))
    over = norms > bound
    return np.where(over, W * (bound / np.where(over, norms, 1.0)), W)


@dataclass
class MlpPredictor:
    weights: tuple
    activation: str = "relu"
    clip_bound: float = np.inf
    fit: FitResult | None = field(default=None, compare=False)

    def __post_init__(self):
        self.weights = tuple(np.asarray(W, dtype=float) for W in self.weights)
        if not self.weights:
            raise InvalidInputError("a network needs at least one layer")
        n = self.weights[-1].shape[0]
        D = len(self.weights)
        H = self.weights[0].shape[0] - 1 if D > 1 else 1
        expected = layer_shapes(n, D, H)
        got = [W.shape for W in self.weights]
        if got != expected:
            raise InvalidInputError(f"weight shapes {got} do not match (n={n}, D={D}, H={H}): {expected}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def width(self) -> int:
        return self.weights[0].shape[0] - 1 if self.depth > 1 else 1

    @property
    def n(self) -> int:
        return self.weights[-1].shape[0]

    def predict(self, x) -> np.ndarray:
        return forward(self, x)

    def clipped(self, x) -> np.ndarray:
        return clip(forward(self, x), self.clip_bound)


def forward(f: MlpPredictor, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Ws = [W[None] for W in f.weights]
    out, _ = forward_stack(Ws, np.atleast_2d(x), f.activation)
    out = out[0]
    return out[0] if single else out


def max_frob_norm(f: MlpPredictor) -> float:
    return float(max(np.linalg.norm(W) for W in f.weights))


def clipped_loss_and_grads(Ws, X, Y, B, loss: LossSpec = LossSpec(), activation="relu"):
    """Mean clipped loss of stacked networks and gradients for every layer.

    Returns per-network losses (S,) and a list of gradients shaped like ``Ws``.
    """
    Z, cache = forward_stack(Ws, X, activation)
    R = clip(Z, B) - Y
    values = np.mean(loss.value(R), axis=-1)
    dZ = clip_vjp(Z, B, loss.gradient(R)) / Z.shape[-2]
    return values, backward_stack(Ws, cache, dZ, activation)


def loss_and_gradients(f: MlpPredictor, X, Y, B, loss: LossSpec = LossSpec()):
    """Clipped training error of one network on (X, Y) with its weight gradients."""
    Ws = [W[None] for W in f.weights]
    values, grads = clipped_loss_and_grads(Ws, X, Y, B, loss, f.activation)
    return float(values[0]), [g[0] for g in grads]


def init_weights(rng: np.random.Generator, n: int, spec: NnClassSpec, stack: int | None = None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights projected into the class."""
    Ws = []
    for rows, cols in layer_shapes(n, spec.depth, spec.width):
        shape = (rows, cols) if stack is None else (stack, rows, cols)
        lim = 1.0 / np.sqrt(cols)
        Ws.append(frob_project(rng.uniform(-lim, lim, size=shape), spec.bound))
    return Ws


def minimize_stack(objective, Ws0, bound: float, step: float, momentum: float, iters: int):
    """Full-batch projected momentum descent on stacked networks.

    ``objective(Ws)`` returns per-network values (S,) and gradients.  Each
    network halves its own step when its objective increases.  Returns the
    best weights seen and their values.
    """
    Ws = [frob_project(W, bound) for W in Ws0]
    vel = [np.zeros_like(W) for W in Ws]
    values, grads = objective(Ws)
    best_val = values.copy()
    best = [W.copy() for W in Ws]
    lr = np.full(values.shape, step)
    prev = values
    for _ in range(iters):
        col = lr[:, None, None]
        vel = [momentum * v - col * g for v, g in zip(vel, grads)]
        Ws = [frob_project(W + v, bound) for W, v in zip(Ws, vel)]
        values, grads = objective(Ws)
        worse = values > prev
        lr = np.where(worse, 0.5 * lr, lr)
        if np.any(worse):
            vel = [np.where(worse[:, None, None], 0.0, v) for v in vel]
        better = values < best_val
        best_val = np.where(better, values, best_val)
        best = [np.where(better[:, None, None], W, Wb) for W, Wb in zip(Ws, best)]
        prev = values
    return best, best_val


def train_constrained(S: Dataset, spec: NnClassSpec, loss: LossSpec = LossSpec(),
                      opt: OptConfig = OptConfig(), seed: int = 0) -> MlpPredictor:
    """Projected mini-batch momentum descent on the clipped training error.

    Every weight matrix is projected onto its Frobenius ball after every
    update.  ``opt.max_iter`` counts epochs.  The step is halved after
    ``max(1, patience // 5)`` epochs without improvement and training stops
    after ``patience`` such epochs.  Returns the best iterate by full
    training error.
    """
    X, Y = S.inputs(), S.targets()
    B = S.state_bound
    rng = np.random.default_rng(seed)
    if spec.bound == 0:
        Ws = [np.zeros((1, r, c)) for r, c in layer_shapes(S.n, spec.depth, spec.width)]
    else:
        Ws = init_weights(rng, S.n, spec, stack=1)
    m = len(X)
    batch = min(m, opt.batch_size)
    plateau = max(1, opt.patience // 5)

    def full_error(Ws):
        values, _ = clipped_loss_and_grads(Ws, X, Y, B, loss, spec.activation)
        return float(values[0])

    best_err = full_error(Ws)
    best = [W.copy() for W in Ws]
    vel = [np.zeros_like(W) for W in Ws]
    lr = opt.step
    since_best = 0
    step_count = 0
    epoch = 0
    for epoch in range(1, opt.max_iter + 1):
        if spec.bound == 0:
            break
        order = rng.permutation(m)
        for start in range(0, m, batch):
            idx = order[start:start + batch]
            values, grads = clipped_loss_and_grads(Ws, X[idx], Y[idx], B, loss, spec.activation)
            step_count += 1
            if not np.all(np.isfinite(values)) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(f"{spec.describe()}: NaN loss at update {step_count}", step_count)
            vel = [opt.momentum * v - lr * g for v, g in zip(vel, grads)]
            Ws = [frob_project(W + v, spec.bound) for W, v in zip(Ws, vel)]
        err = full_error(Ws)
        if not np.isfinite(err):
            raise TrainingDivergedError(f"{spec.describe()}: NaN training error after epoch {epoch}", step_count)
        if err < best_err * (1.0 - opt.rel_tol):
            best_err, best, since_best = err, [W.copy() for W in Ws], 0
        else:
            since_best += 1
            if since_best % plateau == 0:
                lr *= 0.5
            if since_best >= opt.patience:
                break
    result = FitResult(best_err, epoch)
    return MlpPredictor(tuple(W[0] for W in best), spec.activation, B, result)
