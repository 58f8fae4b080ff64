"""Joint search over task groupings and shared-encoder architectures.

A learned surrogate maps (task combination, architecture) pairs to per-task
gains over single-task baselines; progressive UCB sampling spends the
ground-truth budget, and greedy mutation search derives the final budgeted
set of groups.
"""

from .search_space import (
    Architecture,
    OperationKind,
    SearchPoint,
    SearchSpaceConfig,
    TaskCombination,
    decode_point,
    encode_point,
)
from .surrogate import SurrogateConfig, SurrogateParams, TrainConfig, TrainingSample
from .evaluation import (
    BaselineScores,
    EvaluationCache,
    EvaluationRecord,
    SyntheticOracle,
    SyntheticOracleConfig,
    compute_gains,
    overall_gain,
)
from .sampler import AcquisitionVariant, SamplerConfig, SearchState, run_sampler
from .derivation import DerivationConfig, Population, brute_force_best, greedy_search
from .config import RunConfig, build_run_config, derive_seed, load_run_config

__all__ = [
    "AcquisitionVariant",
    "Architecture",
    "BaselineScores",
    "DerivationConfig",
    "EvaluationCache",
    "EvaluationRecord",
    "OperationKind",
    "Population",
    "RunConfig",
    "SamplerConfig",
    "SearchPoint",
    "SearchSpaceConfig",
    "SearchState",
    "SurrogateConfig",
    "SurrogateParams",
    "SyntheticOracle",
    "SyntheticOracleConfig",
    "TaskCombination",
    "TrainConfig",
    "TrainingSample",
    "brute_force_best",
    "build_run_config",
    "compute_gains",
    "decode_point",
    "derive_seed",
    "encode_point",
    "greedy_search",
    "load_run_config",
    "overall_gain",
    "run_sampler",
]
