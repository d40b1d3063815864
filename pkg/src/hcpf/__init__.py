"""Hierarchical compound Poisson factorization with stochastic variational inference."""

from .compound import CompoundSpec, choose_truncation
from .data import SparseDataset, SplitSet, load_triplets, save_triplets, split
from .edm import EdmFamily, ElementSpec, PseudoFamily
from .errors import (
    ConfigurationError,
    DataFormatError,
    FitError,
    HcpfError,
    InvalidParameterError,
    TruncationError,
)
from .evaluation import EvalReport, HeldOut, evaluate
from .model import (
    FittedModel,
    Hyperparams,
    VariationalState,
    default_hyperparams,
    init_variational,
    load_model,
    save_model,
    simulate,
)
from .svi import FitConfig, FitResult, LocalStep, fit, global_step, local_step

__all__ = [
    "CompoundSpec", "choose_truncation",
    "SparseDataset", "SplitSet", "load_triplets", "save_triplets", "split",
    "EdmFamily", "ElementSpec", "PseudoFamily",
    "ConfigurationError", "DataFormatError", "FitError", "HcpfError", "InvalidParameterError", "TruncationError",
    "EvalReport", "HeldOut", "evaluate",
    "FittedModel", "Hyperparams", "VariationalState", "default_hyperparams", "init_variational",
    "load_model", "save_model", "simulate",
    "FitConfig", "FitResult", "LocalStep", "fit", "global_step", "local_step",
]
