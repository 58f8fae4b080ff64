"""Progressive construction of the surrogate's training set.

A warm start evaluates random architectures on the full task set, then each
round walks every task: score the candidate combinations containing it under
the current surrogate, pick the acquisition argmax, draw one of its top
architectures, obtain ground truth, and retrain on the grown dataset. Cache
hits reuse the stored record and spend the round's evaluation on the
next-best unevaluated candidate so every round adds fresh information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .evaluation import CachedEvaluator, EvaluationRecord, TransportError
from .search_space import (
    Architecture,
    SearchPoint,
    SearchSpaceConfig,
    TaskCombination,
    architecture_count,
    combinations_containing,
    decode_point,
    encode_point,
    random_architecture,
)
from .surrogate import (
    SurrogateConfig,
    SurrogateParams,
    TrainConfig,
    TrainingSample,
    dataset_mae,
    init_params,
    load_params,
    predict_anchor_gains,
    save_params,
    train,
)


class AcquisitionVariant(Enum):
    MU_PLUS_SIGMA = "mu+sigma"
    MU = "mu"
    SIGMA = "sigma"


@dataclass
class SamplerConfig:
    q0: int
    q1: int
    q2: int
    lam: float = 0.5
    k1: int = 20
    variant: AcquisitionVariant = AcquisitionVariant.MU_PLUS_SIGMA
    candidate_cap: int = 512
    seed: int = 0
    sigma_mode: str = "std"  # "std" | "var"
    retrain_from_scratch: bool = False

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = AcquisitionVariant(self.variant)
        if self.q0 < 1:
            raise ValueError("q0 must be >= 1")
        if not self.q1 >= self.q2 >= 1:
            raise ValueError(f"need q1 >= q2 >= 1, got q1={self.q1} q2={self.q2}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if self.candidate_cap < 2:
            raise ValueError("candidate_cap must be >= 2")
        if self.sigma_mode not in ("std", "var"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")


@dataclass
class SearchState:
    dataset: list[TrainingSample]
    params: SurrogateParams
    round_index: int
    rng: np.random.Generator
    evaluations: int

    def dataset_points(self) -> set[str]:
        return {encode_point(s.point) for s in self.dataset}


class EvaluationFailure(RuntimeError):
    """A required ground-truth evaluation failed after all retries."""


def acquisition_value(
    mu: float, sigma: float, lam: float, variant: AcquisitionVariant
) -> float:
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if variant is AcquisitionVariant.MU_PLUS_SIGMA:
        return mu + lam * sigma
    if variant is AcquisitionVariant.MU:
        return mu
    return sigma


@dataclass
class ScoredCombination:
    combination: TaskCombination
    mu: float
    sigma: float
    top_architectures: list[Architecture]


def sample_distinct_architectures(
    rng: np.random.Generator, space: SearchSpaceConfig, count: int
) -> list[Architecture]:
    """Up to `count` distinct uniform architectures (all of them when the
    space is smaller than `count`)."""
    total = architecture_count(space)
    target = min(count, total)
    picked: list[Architecture] = []
    seen: set[Architecture] = set()
    while len(picked) < target:
        arch = random_architecture(rng, space)
        if arch in seen:
            continue
        seen.add(arch)
        picked.append(arch)
    return picked


def score_combination(
    params: SurrogateParams,
    comb: TaskCombination,
    anchor: int,
    q1: int,
    q2: int,
    rng: np.random.Generator,
    space: SearchSpaceConfig,
    sigma_mode: str = "std",
) -> ScoredCombination:
    """Sample q1 distinct architectures, keep the q2 with the highest
    predicted anchor gain, and summarize those top gains by mean and spread."""
    archs = sample_distinct_architectures(rng, space, q1)
    gains = predict_anchor_gains(params, comb, anchor, archs)
    order = np.argsort(-gains, kind="stable")[:q2]
    top_gains = gains[order]
    mu = float(np.mean(top_gains))
    if q2 == 1:
        sigma = 0.0
    else:
        sigma = float(np.std(top_gains, ddof=1))
        if sigma_mode == "var":
            sigma = sigma**2
    return ScoredCombination(comb, mu, sigma, [archs[int(i)] for i in order])


def _record_to_sample(record: EvaluationRecord) -> TrainingSample:
    members = record.point.combination.members
    return TrainingSample(record.point, np.array([record.gains[t] for t in members]))


def _evaluate_required(
    evaluator: CachedEvaluator, points: Sequence[SearchPoint]
) -> list[EvaluationRecord]:
    records = evaluator.evaluate(points)
    failed = [encode_point(points[i]) for i, r in enumerate(records) if r is None]
    if failed:
        raise EvaluationFailure(f"evaluation failed after retries for: {failed}")
    return records


def warm_start(
    cfg: SamplerConfig,
    space: SearchSpaceConfig,
    surrogate_cfg: SurrogateConfig,
    train_cfg: TrainConfig,
    evaluator: CachedEvaluator,
    rng: np.random.Generator,
) -> SearchState:
    """Evaluate q0 distinct random architectures on the full task set and fit
    a fresh surrogate on the results."""
    if cfg.q0 > architecture_count(space):
        raise ValueError(
            f"q0={cfg.q0} exceeds the {architecture_count(space)} distinct architectures"
        )
    full = TaskCombination.of(range(space.num_tasks))
    points = [
        SearchPoint(full, arch)
        for arch in sample_distinct_architectures(rng, space, cfg.q0)
    ]
    before = evaluator.evaluations_performed
    records = _evaluate_required(evaluator, points)
    dataset = [_record_to_sample(r) for r in records]
    params = init_params(surrogate_cfg, rng)
    params = train(params, dataset, train_cfg, rng)
    return SearchState(
        dataset=dataset,
        params=params,
        round_index=0,
        rng=rng,
        evaluations=evaluator.evaluations_performed - before,
    )


def _select_argmax(values: Sequence[float]) -> int:
    return int(np.argmax(np.asarray(values)))  # first max wins ties


def _next_unevaluated(
    scored: Sequence[ScoredCombination],
    acq: Sequence[float],
    chosen: tuple[int, int],
    evaluator: CachedEvaluator,
) -> Optional[SearchPoint]:
    """First unevaluated (combination, architecture) pair when walking
    candidates by acquisition rank and each top set in rank order."""
    rank = np.argsort(-np.asarray(acq), kind="stable")
    for ci in rank:
        sc = scored[int(ci)]
        for ai, arch in enumerate(sc.top_architectures):
            if (int(ci), ai) == chosen:
                continue
            point = SearchPoint(sc.combination, arch)
            if evaluator.lookup(point) is None:
                return point
    return None


def progressive_round(
    state: SearchState,
    cfg: SamplerConfig,
    space: SearchSpaceConfig,
    evaluator: CachedEvaluator,
    train_cfg: TrainConfig,
) -> SearchState:
    """One acquisition round: at most one fresh evaluation per task, then a
    surrogate update on the full dataset."""
    for task in range(space.num_tasks):
        candidates = combinations_containing(task, space, cfg.candidate_cap, state.rng)
        scored = [
            score_combination(
                state.params, comb, task, cfg.q1, cfg.q2, state.rng, space, cfg.sigma_mode
            )
            for comb in candidates
        ]
        acq = [acquisition_value(s.mu, s.sigma, cfg.lam, cfg.variant) for s in scored]
        best = _select_argmax(acq)
        top = scored[best].top_architectures
        arch_idx = int(state.rng.integers(0, len(top)))
        star = SearchPoint(scored[best].combination, top[arch_idx])
        cached = evaluator.lookup(star)
        if cached is None:
            record = _evaluate_required(evaluator, [star])[0]
            state.dataset.append(_record_to_sample(record))
            state.evaluations += 1
        else:
            if encode_point(star) not in state.dataset_points():
                state.dataset.append(_record_to_sample(cached))
            fallback = _next_unevaluated(scored, acq, (best, arch_idx), evaluator)
            if fallback is not None:
                record = _evaluate_required(evaluator, [fallback])[0]
                state.dataset.append(_record_to_sample(record))
                state.evaluations += 1
    base = (
        init_params(state.params.config, state.rng)
        if cfg.retrain_from_scratch
        else state.params
    )
    state.params = train(base, state.dataset, train_cfg, state.rng)
    state.round_index += 1
    return state


def save_checkpoint(out_dir: Path, state: SearchState) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_params(state.params, out_dir / "surrogate.manifest.json", out_dir / "surrogate.params.bin")
    manifest = {
        "round_index": state.round_index,
        "evaluations": state.evaluations,
        "rng_state": state.rng.bit_generator.state,
        "dataset": [encode_point(s.point) for s in state.dataset],
    }
    (out_dir / "state.json").write_text(json.dumps(manifest, sort_keys=True) + "\n")


def load_checkpoint(
    out_dir: Path,
    space: SearchSpaceConfig,
    surrogate_cfg: SurrogateConfig,
    evaluator: CachedEvaluator,
) -> SearchState:
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "state.json").read_text())
    params = load_params(
        out_dir / "surrogate.manifest.json", out_dir / "surrogate.params.bin", surrogate_cfg
    )
    dataset = []
    for enc in manifest["dataset"]:
        record = evaluator.lookup(decode_point(enc, space))
        if record is None:
            raise RuntimeError(f"checkpoint dataset point {enc!r} missing from cache")
        dataset.append(_record_to_sample(record))
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = manifest["rng_state"]
    return SearchState(
        dataset=dataset,
        params=params,
        round_index=int(manifest["round_index"]),
        rng=rng,
        evaluations=int(manifest["evaluations"]),
    )


def run_sampler(
    cfg: SamplerConfig,
    space: SearchSpaceConfig,
    surrogate_cfg: SurrogateConfig,
    train_cfg: TrainConfig,
    evaluator: CachedEvaluator,
    out_dir: Optional[Path] = None,
    resume: bool = False,
    stop_after_round: Optional[int] = None,
    progress: Optional[Callable[[dict], None]] = None,
) -> SearchState:
    """Warm start plus k1 progressive rounds, checkpointed after every round.

    With `resume`, continues a previous run from its last checkpoint; the
    final state is identical to an uninterrupted run with the same seed.
    `stop_after_round` ends the run early at a consistent checkpoint.
    """

    def note(state: SearchState) -> None:
        info = {
            "round": state.round_index,
            "dataset_size": len(state.dataset),
            "evaluations": state.evaluations,
            "train_mae": dataset_mae(state.params, state.dataset),
        }
        if out_dir is not None:
            with (Path(out_dir) / "history.jsonl").open("a") as fh:
                fh.write(json.dumps(info, sort_keys=True) + "\n")
        if progress is not None:
            progress(info)

    if resume:
        if out_dir is None:
            raise ValueError("resume requires an output directory")
        state = load_checkpoint(out_dir, space, surrogate_cfg, evaluator)
    else:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        state = warm_start(cfg, space, surrogate_cfg, train_cfg, evaluator, rng)
        if out_dir is not None:
            save_checkpoint(out_dir, state)
        note(state)
    while state.round_index < cfg.k1:
        if stop_after_round is not None and state.round_index >= stop_after_round:
            break
        progressive_round(state, cfg, space, evaluator, train_cfg)
        if out_dir is not None:
            save_checkpoint(out_dir, state)
        note(state)
    return state
