"""Reference multi-task evaluator for the grouping search engine."""

from .data import DatasetConfig, SyntheticMTLDataset, generate_dataset
from .model import ArchitectureSpec, InstantiatedModel, instantiate, parameter_count
from .training import TrainSettings, evaluate_architecture, train_and_score
from .baselines import BACKBONE, make_baselines

__all__ = [
    "ArchitectureSpec",
    "BACKBONE",
    "DatasetConfig",
    "InstantiatedModel",
    "SyntheticMTLDataset",
    "TrainSettings",
    "evaluate_architecture",
    "generate_dataset",
    "instantiate",
    "make_baselines",
    "parameter_count",
    "train_and_score",
]
