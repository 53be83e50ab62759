"""JSON experiment configuration and the end-to-end runner.

Config schema (all keys optional unless marked)::

    {
      "system": "double_pendulum",          # registry id
      "system_params": {"l": 1.0, "m": 0.5, "g": 9.81},
      "dataset_path": null,                 # CSV dataset; replaces simulation
      "sampler": {"kind": "uniform", "lo": [...], "hi": [...]},
      "N": 140, "T": 5, "sampling_period": 0.05, "substeps": 10,
      "state_bound": 2.2,                   # required
      "hierarchy": {                        # required
        "family": "rkhs",
        "gammas": [1e-05, ...],             # gaussian shorthand, or
        "kernels": [{"kind": "polynomial", "c": 1.0, "degree": 2}, ...],
        "bounds": 20.0,                     # scalar or one per class
        "spacing": 0.01,
        "grid_max": null                    # defaults to max bound
      },
      # nn hierarchies use "depth", "widths", "activation" instead of kernels
      "loss": "euclidean",
      "opt": {"step": 0.01, "max_iter": 5000, "patience": 50, ...},
      "delta": 0.1,
      "true_error_m": 1000,                 # 0 disables true-error estimates
      "seed": 0, "threads": 1, "out_dir": "runs/out", "plot": true
    }
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import complexity, dynamics, io, nn, rkhs
from .core import LossSpec, OptConfig
from .errors import ConfigError, SrmError
from .srm import ErrorReport, Hierarchy, attach_true_errors, derived_seed, srm_select

log = logging.getLogger(__name__)

DATA_STREAM = 7919
TEST_STREAM = 7927
CONFIG_DIR = Path(__file__).parent / "configs"


@dataclass(frozen=True)
class ExperimentConfig:
    state_bound: float
    hierarchy: dict
    system: str = "double_pendulum"
    system_params: dict = field(default_factory=dict)
    dataset_path: str | None = None
    sampler: dict = field(default_factory=lambda: {"kind": "uniform", "lo": [-0.5] * 4, "hi": [0.5] * 4})
    N: int = 140
    T: int = 5
    sampling_period: float = 0.05
    substeps: int = 10
    loss: str = "euclidean"
    opt: dict = field(default_factory=dict)
    delta: float = 0.1
    true_error_m: int = 0
    seed: int = 0
    threads: int = 1
    out_dir: str = "srm_out"
    plot: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        missing = [k for k in ("state_bound", "hierarchy") if k not in d]
        if missing:
            raise ConfigError(f"missing required config keys: {missing}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def resolve_config_path(name) -> Path:
    """A path as given, or the name of a bundled config."""
    path = Path(name)
    if path.exists():
        return path
    bundled = CONFIG_DIR / (path.name if path.suffix else path.name + ".json")
    if bundled.exists():
        return bundled
    raise ConfigError(f"config {name!r} not found (bundled: {sorted(p.name for p in CONFIG_DIR.glob('*.json'))})")


def load_config(path) -> ExperimentConfig:
    path = resolve_config_path(path)
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return ExperimentConfig.from_dict(data)


def _bounds(h: dict, K: int) -> list[float]:
    b = h.get("bounds")
    if b is None:
        raise ConfigError("hierarchy.bounds is required")
    if isinstance(b, (int, float)):
        return [float(b)] * K
    if len(b) != K:
        raise ConfigError(f"hierarchy.bounds has {len(b)} entries for {K} classes")
    return [float(v) for v in b]


def build_hierarchy(h: dict) -> Hierarchy:
    family = h.get("family")
    if family == "rkhs":
        if "gammas" in h:
            kernels = [rkhs.Kernel.gaussian(g) for g in h["gammas"]]
        elif "kernels" in h:
            kernels = [rkhs.Kernel.from_dict(k) for k in h["kernels"]]
        else:
            raise ConfigError("rkhs hierarchy needs 'gammas' or 'kernels'")
        bounds = _bounds(h, len(kernels))
        classes = [rkhs.RkhsClassSpec(k, b) for k, b in zip(kernels, bounds)]
    elif family == "nn":
        widths = h.get("widths")
        if not widths:
            raise ConfigError("nn hierarchy needs 'widths'")
        bounds = _bounds(h, len(widths))
        depth = int(h.get("depth", 2))
        act = h.get("activation", "relu")
        classes = [nn.NnClassSpec(depth, int(w), b, act) for w, b in zip(widths, bounds)]
    else:
        raise ConfigError(f"hierarchy.family must be 'rkhs' or 'nn', got {family!r}")
    if not classes:
        raise ConfigError("hierarchy has no classes")
    spacing = float(h.get("spacing", 0.01))
    grid_max = h.get("grid_max")
    grid_max = max(bounds) if grid_max is None else float(grid_max)
    grid = complexity.DiscretizationGrid.from_spacing(spacing, grid_max)
    return Hierarchy(tuple(classes), grid, family)


def validate_config(cfg: ExperimentConfig | dict) -> list[str]:
    """Every problem found in the config; an empty list means it is runnable."""
    if isinstance(cfg, dict):
        try:
            cfg = ExperimentConfig.from_dict(cfg)
        except (ConfigError, TypeError) as exc:
            return [str(exc)]
    out = []

    def check(cond, msg):
        if not cond:
            out.append(msg)

    def attempt(fn, prefix):
        try:
            return fn()
        except (SrmError, TypeError, ValueError, KeyError) as exc:
            out.append(f"{prefix}: {exc}")
            return None

    check(isinstance(cfg.delta, (int, float)) and 0 < cfg.delta < 1, "delta must be in (0,1)")
    check(isinstance(cfg.state_bound, (int, float)) and cfg.state_bound > 0, "state_bound must be positive")
    check(isinstance(cfg.N, int) and cfg.N >= 1, "N must be an integer >= 1")
    check(isinstance(cfg.T, int) and cfg.T >= 1, "T must be an integer >= 1")
    check(cfg.sampling_period > 0, "sampling_period must be positive")
    check(isinstance(cfg.substeps, int) and cfg.substeps >= 1, "substeps must be an integer >= 1")
    check(isinstance(cfg.true_error_m, int) and cfg.true_error_m >= 0, "true_error_m must be an integer >= 0")
    check(isinstance(cfg.threads, int) and cfg.threads >= 1, "threads must be an integer >= 1")
    check(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed must be a non-negative integer")
    attempt(lambda: LossSpec(cfg.loss), "loss")
    attempt(lambda: OptConfig(**cfg.opt), "opt")

    need_system = cfg.dataset_path is None or cfg.true_error_m > 0
    sys = None
    if need_system:
        sys = attempt(lambda: dynamics.get_system(cfg.system, **cfg.system_params), "system")
        sampler = attempt(lambda: dynamics.InitialConditionSampler.from_dict(cfg.sampler), "sampler")
        if sys is not None and sampler is not None:
            check(sampler.n == sys.n, f"sampler dimension {sampler.n} does not match system dimension {sys.n}")
    if cfg.dataset_path is not None:
        check(Path(cfg.dataset_path).exists(), f"dataset_path {cfg.dataset_path} does not exist")

    h = cfg.hierarchy
    if not isinstance(h, dict):
        out.append("hierarchy must be an object")
        return out
    spacing = h.get("spacing", 0.01)
    check(isinstance(spacing, (int, float)) and spacing > 0, "hierarchy.spacing must be positive")
    bounds = h.get("bounds")
    blist = [bounds] if isinstance(bounds, (int, float)) else list(bounds or [])
    check(bool(blist) and all(isinstance(b, (int, float)) and b >= 0 for b in blist),
          "hierarchy.bounds must be non-negative numbers")
    grid_max = h.get("grid_max")
    if grid_max is not None and blist and all(isinstance(b, (int, float)) for b in blist):
        check(grid_max >= max(blist),
              f"grid M_Q = {grid_max:g} is below the largest class bound max B_k = {max(blist):g}")
    if not out:
        attempt(lambda: build_hierarchy(h), "hierarchy")
    return out


def _write_outputs(report: ErrorReport, cfg: ExperimentConfig, out_dir: Path, plot: bool) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": io.save_report(report, out_dir / "report.csv"),
        "curves": io.save_curves(report, out_dir / "curves.csv"),
    }
    echo = out_dir / "config.echo.json"
    echo.write_text(cfg.to_json())
    paths["config"] = echo
    if plot:
        from .plotting import plot_curves

        paths["figure"] = plot_curves(report, out_dir / "curves.png")
    return paths


def run_experiment(cfg: ExperimentConfig, plot: bool | None = None):
    """Validate, fit the hierarchy, score it and write the output files.

    Returns ``(report, paths)`` where ``paths`` maps output names to files.
    """
    problems = validate_config(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    loss = LossSpec(cfg.loss)
    opt = OptConfig(**cfg.opt)
    h = build_hierarchy(cfg.hierarchy)
    sys = sampler = None
    if cfg.dataset_path is None or cfg.true_error_m > 0:
        sys = dynamics.get_system(cfg.system, **cfg.system_params)
        sampler = dynamics.InitialConditionSampler.from_dict(cfg.sampler)
    S = generate_data(cfg, sys, sampler)
    log.info("dataset N=%d T=%d n=%d; %d classes", S.N, S.T, S.n, h.K)
    report = srm_select(S, h, loss, opt, cfg.seed, cfg.delta, cfg.threads)
    if cfg.true_error_m > 0:
        report = attach_true_errors(report, sys, sampler, S.T, loss, cfg.true_error_m,
                                    derived_seed(cfg.seed, TEST_STREAM), cfg.sampling_period, cfg.substeps)
    paths = _write_outputs(report, cfg, Path(cfg.out_dir), cfg.plot if plot is None else plot)
    return report, paths


def generate_data(cfg: ExperimentConfig, sys=None, sampler=None):
    if cfg.dataset_path is not None:
        return io.load_dataset(cfg.dataset_path, cfg.state_bound)
    sys = sys or dynamics.get_system(cfg.system, **cfg.system_params)
    sampler = sampler or dynamics.InitialConditionSampler.from_dict(cfg.sampler)
    return dynamics.generate_dataset(sys, sampler, cfg.N, cfg.T, cfg.sampling_period, cfg.substeps,
                                     cfg.state_bound, derived_seed(cfg.seed, DATA_STREAM))


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
