"""Single-task baseline scores from the recurrent backbone (one RNN edge)."""

from __future__ import annotations

import json
from pathlib import Path

from .data import SyntheticMTLDataset
from .model import ArchitectureSpec
from .training import TrainSettings, evaluate_architecture

BACKBONE = ArchitectureSpec(num_nodes=1, edge_ops={(0, 1): "rnn"})


def make_baselines(
    dataset: SyntheticMTLDataset,
    out_path: Path,
    seed: int = 0,
    settings: TrainSettings | None = None,
    backbone: ArchitectureSpec = BACKBONE,
) -> dict[int, float]:
    scores = {}
    for task in range(dataset.config.num_tasks):
        metrics = evaluate_architecture(backbone, [task], dataset, seed, settings)
        scores[task] = metrics[task]
    payload = {
        "metric": "avp",
        "scores": {str(t): scores[t] for t in range(dataset.config.num_tasks)},
    }
    Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return scores
