"""Synthetic correlated multi-label time series.

Each sample carries a latent factor vector; the observed sequence mixes the
factors through a fixed random projection under a per-dimension temporal
envelope, and each task's binary label thresholds a linear readout of the
factors. Tasks are built in pairs whose readouts share a factor direction,
so the inter-task label correlation is controlled by one knob.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DatasetConfig:
    num_tasks: int
    seed: int = 0
    num_samples: int = 2000
    seq_len: int = 32
    feature_dim: int = 16
    correlation: float = 0.8
    label_noise: float = 0.1
    obs_noise: float = 0.3
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self):
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must be in [0, 1]")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass
class SyntheticMTLDataset:
    config: DatasetConfig
    sequences: np.ndarray  # [num_samples, L, d_e]
    labels: np.ndarray     # [num_samples, N] in {0, 1}
    task_loadings: np.ndarray  # [N, num_factors]
    train_idx: np.ndarray
    valid_idx: np.ndarray
    test_idx: np.ndarray

    def split_arrays(self, which: str):
        idx = {"train": self.train_idx, "valid": self.valid_idx, "test": self.test_idx}[which]
        return self.sequences[idx], self.labels[idx]


def _task_loadings(n: int, correlation: float, rng: np.random.Generator) -> np.ndarray:
    """Pairs (0,1), (2,3), ... share a factor direction with weight `correlation`."""
    num_factors = 2 * ((n + 1) // 2)
    loadings = np.zeros((n, num_factors))
    for pair in range((n + 1) // 2):
        a, b = 2 * pair, 2 * pair + 1
        loadings[2 * pair, a] = 1.0
        if 2 * pair + 1 < n:
            loadings[2 * pair + 1, a] = correlation
            loadings[2 * pair + 1, b] = np.sqrt(1.0 - correlation**2)
    return loadings


def generate_dataset(config: DatasetConfig) -> SyntheticMTLDataset:
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = config.num_tasks
    loadings = _task_loadings(n, config.correlation, rng)
    num_factors = loadings.shape[1]

    mixer = rng.normal(0.0, 1.0, size=(config.feature_dim, num_factors)) / np.sqrt(num_factors)
    phases = rng.uniform(0.0, 2 * np.pi, size=config.feature_dim)
    rates = rng.uniform(0.5, 2.0, size=config.feature_dim)
    steps = np.arange(config.seq_len)
    # [L, d_e] envelope: every feature dimension oscillates at its own rate
    envelope = np.sin(rates[None, :] * steps[:, None] * (2 * np.pi / config.seq_len) + phases[None, :])

    for attempt in range(16):
        factors = rng.normal(0.0, 1.0, size=(config.num_samples, num_factors))
        clean = factors @ mixer.T  # [num_samples, d_e]
        sequences = clean[:, None, :] * envelope[None, :, :]
        sequences = sequences + rng.normal(0.0, config.obs_noise, size=sequences.shape)
        logits = factors @ loadings.T + rng.normal(0.0, config.label_noise, size=(config.num_samples, n))
        labels = (logits > 0.0).astype(np.float64)

        counts = [int(round(f * config.num_samples)) for f in config.split[:2]]
        train_idx = np.arange(0, counts[0])
        valid_idx = np.arange(counts[0], counts[0] + counts[1])
        test_idx = np.arange(counts[0] + counts[1], config.num_samples)
        ok = True
        for idx in (train_idx, valid_idx, test_idx):
            part = labels[idx]
            if np.any(part.sum(axis=0) == 0) or np.any(part.sum(axis=0) == len(idx)):
                ok = False
                break
        if ok:
            return SyntheticMTLDataset(
                config=config,
                sequences=sequences,
                labels=labels,
                task_loadings=loadings,
                train_idx=train_idx,
                valid_idx=valid_idx,
                test_idx=test_idx,
            )
    raise RuntimeError(
        f"could not draw a dataset with both classes in every split after 16 tries "
        f"(num_samples={config.num_samples}, num_tasks={n})"
    )
