"""Structural risk minimization for one-step dynamics models."""

from .core import Dataset, FitResult, LossSpec, OptConfig, Trajectory, clip, training_error, true_error_mc
from .complexity import DiscretizationGrid, epsilon_bound, lookup_q, nn_penalty, rkhs_penalty
from .dynamics import InitialConditionSampler, generate_dataset, get_system
from .nn import MlpPredictor, NnClassSpec
from .rkhs import Kernel, KernelPredictor, RkhsClassSpec
from .srm import ErrorReport, Hierarchy, epsilon_table, srm_select

__version__ = "0.1.0"
