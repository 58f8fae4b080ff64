"""Multi-task training with summed binary cross-entropy and AVP scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.metrics import average_precision_score

from .data import SyntheticMTLDataset
from .model import ArchitectureSpec, InstantiatedModel, instantiate


@dataclass
class TrainSettings:
    learning_rate: float = 3e-4
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 5
    use_test_split: bool = False


def _score_split(model: InstantiatedModel, x: torch.Tensor, y: np.ndarray,
                 tasks: list[int]) -> dict[int, float]:
    model.eval()
    with torch.no_grad():
        outputs = model(x)
    scores = {}
    for t in tasks:
        truth = y[:, t]
        if truth.min() == truth.max():
            raise ValueError(f"degenerate labels for task {t}: single class in split")
        scores[t] = float(average_precision_score(truth, outputs[t].numpy()))
    return scores


def train_and_score(
    model: InstantiatedModel,
    dataset: SyntheticMTLDataset,
    tasks: list[int],
    seed: int,
    settings: TrainSettings | None = None,
) -> dict[int, float]:
    """Train on the train split, early-stop on validation AVP, and return the
    per-task AVP on validation (or test, behind the flag). Deterministic for a
    fixed (model init, seed) pair."""
    settings = settings or TrainSettings()
    torch.set_num_threads(1)
    rng = np.random.Generator(np.random.PCG64(seed))

    train_x, train_y = dataset.split_arrays("train")
    valid_x, valid_y = dataset.split_arrays("valid")
    final_split = "test" if settings.use_test_split else "valid"
    final_x, final_y = dataset.split_arrays(final_split)

    x = torch.as_tensor(train_x, dtype=torch.float32)
    y = torch.as_tensor(train_y, dtype=torch.float32)
    vx = torch.as_tensor(valid_x, dtype=torch.float32)
    fx = torch.as_tensor(final_x, dtype=torch.float32)

    optimizer = torch.optim.Adam(model.parameters(), lr=settings.learning_rate)
    loss_fn = torch.nn.BCEWithLogitsLoss()

    best_valid = -np.inf
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    stale = 0
    for _ in range(settings.max_epochs):
        model.train()
        order = rng.permutation(len(x))
        for start in range(0, len(x), settings.batch_size):
            idx = order[start : start + settings.batch_size]
            batch_x = x[idx]
            batch_y = y[idx]
            outputs = model(batch_x)
            loss = sum(loss_fn(outputs[t], batch_y[:, t]) for t in tasks)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        valid_scores = _score_split(model, vx, valid_y, tasks)
        mean_valid = float(np.mean(list(valid_scores.values())))
        if mean_valid > best_valid:
            best_valid = mean_valid
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= settings.patience:
                break
    model.load_state_dict(best_state)
    return _score_split(model, fx, final_y, tasks)


def evaluate_architecture(
    arch: ArchitectureSpec,
    tasks: list[int],
    dataset: SyntheticMTLDataset,
    seed: int,
    settings: TrainSettings | None = None,
) -> dict[int, float]:
    model = instantiate(arch, tasks, dataset.config.feature_dim, seed=seed)
    return train_and_score(model, dataset, tasks, seed, settings)
