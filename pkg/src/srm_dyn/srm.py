"""Model hierarchies, per-class fitting and the SRM selection rule.

Selection is two-stage: every class is fitted on its own, then the class
with the smallest ``training_error + penalty`` wins.  The penalty of class k
uses the grid value covering the fitted model's norm, not the class bound.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import complexity, nn, rkhs
from .complexity import DiscretizationGrid
from .core import Dataset, LossSpec, OptConfig, training_error, true_error_mc
from .errors import InvalidInputError, SrmError

log = logging.getLogger(__name__)

FAMILIES = ("rkhs", "nn")


class AllClassesFailedError(SrmError):
    """Every class of a hierarchy failed to fit."""


@dataclass(frozen=True)
class Hierarchy:
    """Ordered classes of one family sharing a norm grid."""

    classes: tuple
    grid: DiscretizationGrid
    family: str

    def __post_init__(self):
        classes = tuple(self.classes)
        object.__setattr__(self, "classes", classes)
        if not classes:
            raise InvalidInputError("a hierarchy needs at least one class")
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown family {self.family!r}; known: {FAMILIES}")
        wrong = [c for c in classes if getattr(c, "family", None) != self.family]
        if wrong:
            raise InvalidInputError(f"classes {wrong} do not belong to family {self.family!r}")
        top = max(c.bound for c in classes)
        if self.grid.M_max < top * (1 - complexity.GRID_TOL):
            raise InvalidInputError(
                f"grid M_Q = {self.grid.M_max:g} is below the largest class bound max B_k = {top:g}"
            )

    @property
    def K(self) -> int:
        return len(self.classes)

    @classmethod
    def gaussian(cls, gammas, bound: float, spacing: float = 0.01) -> "Hierarchy":
        classes = tuple(rkhs.RkhsClassSpec(rkhs.Kernel.gaussian(g), bound) for g in gammas)
        return cls(classes, DiscretizationGrid.from_spacing(spacing, bound), "rkhs")

    @classmethod
    def mlp(cls, depth: int, widths, bound: float, spacing: float = 0.01, activation="relu") -> "Hierarchy":
        classes = tuple(nn.NnClassSpec(depth, w, bound, activation) for w in widths)
        return cls(classes, DiscretizationGrid.from_spacing(spacing, bound), "nn")


@dataclass(frozen=True)
class ErrorRow:
    k: int
    description: str
    training_error: float = math.nan
    penalty: float = math.nan
    epsilon: float = math.nan
    M_used: float = math.nan
    norm: float = math.nan
    q: int = 0
    true_error_mean: float = math.nan
    true_error_se: float = math.nan
    failure: str | None = None
    warnings: tuple = ()

    @property
    def srm_error(self) -> float:
        return self.training_error + self.penalty

    @property
    def ok(self) -> bool:
        return self.failure is None


@dataclass(frozen=True)
class ErrorReport:
    rows: tuple
    selected_k: int
    delta: float
    lipschitz: float
    state_bound: float
    N: int
    Q: int
    opt: OptConfig = OptConfig()
    predictors: tuple = field(default=(), compare=False, repr=False)

    @property
    def K(self) -> int:
        return len(self.rows)

    @property
    def has_true_error(self) -> bool:
        return any(r.ok and not math.isnan(r.true_error_mean) for r in self.rows)


def derived_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def select_index(values, valid=None) -> int:
    """Argmin over valid entries; ties go to the smallest index."""
    values = np.asarray(values, dtype=float)
    valid = np.ones(len(values), bool) if valid is None else np.asarray(valid, bool)
    if not valid.any():
        raise AllClassesFailedError("no class produced a usable fit")
    masked = np.where(valid, values, np.inf)
    return int(np.flatnonzero(masked == masked.min())[0])


def model_norm(f) -> float:
    if isinstance(f, rkhs.KernelPredictor):
        return f.max_norm()
    if isinstance(f, nn.MlpPredictor):
        return nn.max_frob_norm(f)
    raise InvalidInputError(f"unsupported predictor {type(f).__name__}")


def fit_k_class(S: Dataset, h: Hierarchy, k: int, loss: LossSpec = LossSpec(),
                opt: OptConfig = OptConfig(), seed: int = 0):
    """Fit class ``k`` and return ``(predictor, training_error)``."""
    if not 0 <= k < h.K:
        raise InvalidInputError(f"class index {k} outside 0..{h.K - 1}")
    spec = h.classes[k]
    if h.family == "rkhs":
        f = rkhs.fit_constrained(S, spec.kernel, spec.bound, loss, opt, seed)
    else:
        f = nn.train_constrained(S, spec, loss, opt, seed)
    return f, training_error(f, S, loss)


def class_penalty(h: Hierarchy, k: int, S: Dataset, M_used: float, loss: LossSpec) -> float:
    spec = h.classes[k]
    if h.family == "rkhs":
        return complexity.rkhs_penalty(spec.kernel, S, M_used, loss)
    return complexity.nn_penalty(spec.depth, M_used, S, loss)


def _score_class(S, h, k, loss, opt, seed, delta):
    desc = h.classes[k].describe()
    try:
        f, err = fit_k_class(S, h, k, loss, opt, derived_seed(seed, k))
        norm = model_norm(f)
        q, M = complexity.lookup_q(norm, h.grid)
        r = class_penalty(h, k, S, M, loss)
        eps = complexity.epsilon_bound(r, loss.L, S.state_bound, S.N, delta, h.grid.Q)
    except SrmError as exc:
        log.error("class %d (%s) failed: %s", k, desc, exc)
        return ErrorRow(k, desc, failure=f"{type(exc).__name__}: {exc}"), None
    warnings = tuple(f.fit.warnings) if f.fit is not None else ()
    return ErrorRow(k, desc, err, r, eps, M, norm, q, warnings=warnings), f


def srm_select(S: Dataset, h: Hierarchy, loss: LossSpec = LossSpec(), opt: OptConfig = OptConfig(),
               seed: int = 0, delta: float = 0.1, threads: int = 1) -> ErrorReport:
    """Fit every class, score it and pick the smallest SRM error."""
    if not 0 < delta < 1:
        raise InvalidInputError("delta must be in (0,1)")
    jobs = range(h.K)
    if threads > 1 and h.K > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda k: _score_class(S, h, k, loss, opt, seed, delta), jobs))
    else:
        results = [_score_class(S, h, k, loss, opt, seed, delta) for k in jobs]
    rows = tuple(r for r, _ in results)
    selected = select_index([r.srm_error if r.ok else np.inf for r in rows], [r.ok for r in rows])
    return ErrorReport(rows, selected, delta, loss.L, S.state_bound, S.N, h.grid.Q, opt,
                       predictors=tuple(f for _, f in results))


def attach_true_errors(report: ErrorReport, dyn, sampler, T: int, loss: LossSpec, m: int, seed: int,
                       sampling_period: float = 0.05, substeps: int = 10) -> ErrorReport:
    """Monte-Carlo true error for every fitted class.

    All classes are evaluated on the same test trajectories, which makes
    differences between classes far less noisy than the errors themselves.
    """
    rows = []
    for row, f in zip(report.rows, report.predictors):
        if f is None:
            rows.append(row)
            continue
        mean, se = true_error_mc(f, dyn, sampler, T, loss, m, seed, state_bound=report.state_bound,
                                 sampling_period=sampling_period, substeps=substeps)
        rows.append(replace(row, true_error_mean=mean, true_error_se=se))
    return replace(report, rows=tuple(rows))


@dataclass(frozen=True)
class EpsilonTable:
    epsilon: tuple
    epsilon_guarantee: tuple
    delta: float

    def guarantee_rhs(self, errors) -> float:
        """``min_k (errors_k + 2 eps_k)`` with eps at the split confidence level."""
        vals = [e + 2.0 * eps for e, eps in zip(errors, self.epsilon_guarantee)
                if not (math.isnan(e) or math.isnan(eps))]
        if not vals:
            raise AllClassesFailedError("no class has both an error and an epsilon value")
        return min(vals)


def epsilon_table(report: ErrorReport, delta: float, h: Hierarchy) -> EpsilonTable:
    """Per-class bounds at ``delta`` and at ``2 delta / (K + 1)``."""
    if not 0 < delta < 1:
        raise InvalidInputError("delta must be in (0,1)")
    split = 2.0 * delta / (h.K + 1)

    def eps(row, d):
        if not row.ok:
            return math.nan
        return complexity.epsilon_bound(row.penalty, report.lipschitz, report.state_bound,
                                        report.N, d, h.grid.Q)

    return EpsilonTable(tuple(eps(r, delta) for r in report.rows),
                        tuple(eps(r, split) for r in report.rows), delta)
