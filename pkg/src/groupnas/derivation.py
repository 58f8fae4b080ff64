"""Final configuration search: greedy mutation over budgeted populations.

A population is at most B (combination, architecture) pairs whose
combinations jointly cover every task. The greedy loop mutates one member at
a time and keeps the mutation only when the surrogate-predicted overall gain
strictly improves; multiple restarts guard against local optima. Brute-force
references are provided for spaces small enough to enumerate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .evaluation import CoverageError
from .search_space import (
    Architecture,
    SearchPoint,
    SearchSpaceConfig,
    TaskCombination,
    architecture_count,
    combination_count,
    mutate_point,
    random_architecture,
    random_combination,
)
from .surrogate import SurrogateParams, predict_gains

# Maps a point to the per-task gains used when scoring populations
# (surrogate-predicted or ground-truth, depending on the factory).
PointScorer = Callable[[SearchPoint], Mapping[int, float]]


class GuardRefusal(RuntimeError):
    """Brute force was asked to enumerate a space beyond its guard."""


@dataclass
class DerivationConfig:
    budget: int
    iterations: int = 1000
    restarts: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class Population:
    members: tuple[SearchPoint, ...]

    def __post_init__(self):
        self.members = tuple(self.members)
        if len(set(self.members)) != len(self.members):
            raise ValueError("population members must be distinct")


def population_covers(members: Sequence[SearchPoint], num_tasks: int) -> bool:
    covered: set[int] = set()
    for m in members:
        covered.update(m.combination.members)
    return all(t in covered for t in range(num_tasks))


def surrogate_scorer(params: SurrogateParams) -> PointScorer:
    def score(point: SearchPoint) -> dict[int, float]:
        gains = predict_gains(params, point)
        return {t: float(g) for t, g in zip(point.combination.members, gains)}

    return score


def _overall_from_gains(
    member_gains: Sequence[Mapping[int, float]], num_tasks: int
) -> float:
    best: dict[int, float] = {}
    for gains in member_gains:
        for t, g in gains.items():
            if t not in best or g > best[t]:
                best[t] = g
    missing = [t for t in range(num_tasks) if t not in best]
    if missing:
        raise CoverageError(f"population does not cover task(s) {missing}")
    return float(np.mean([best[t] for t in range(num_tasks)]))


def predicted_overall_gain(
    params: SurrogateParams, pop: Population, num_tasks: int
) -> float:
    """Per-task best predicted gain across members, averaged over tasks."""
    scorer = surrogate_scorer(params)
    return _overall_from_gains([scorer(m) for m in pop.members], num_tasks)


def init_population(
    cfg: DerivationConfig, space: SearchSpaceConfig, rng: np.random.Generator
) -> Population:
    """B random points, re-drawn until they cover all tasks (with a forced
    full-set member after too many failures)."""
    for _ in range(1000):
        members = [
            SearchPoint(random_combination(rng, space), random_architecture(rng, space))
            for _ in range(cfg.budget)
        ]
        if population_covers(members, space.num_tasks) and len(set(members)) == len(members):
            return Population(tuple(members))
    full = TaskCombination.of(range(space.num_tasks))
    while True:
        members[-1] = SearchPoint(full, random_architecture(rng, space))
        if len(set(members)) == len(members):
            return Population(tuple(members))


@dataclass
class RestartResult:
    population: Population
    score: float
    trajectory: list[float]  # accepted score after each iteration


def _greedy_restart(
    scorer: PointScorer,
    cfg: DerivationConfig,
    space: SearchSpaceConfig,
    rng: np.random.Generator,
) -> RestartResult:
    pop = list(init_population(cfg, space, rng).members)
    gains = [dict(scorer(m)) for m in pop]
    score = _overall_from_gains(gains, space.num_tasks)
    trajectory = [score]
    for _ in range(cfg.iterations):
        idx = int(rng.integers(0, len(pop)))
        mutated = mutate_point(rng, pop[idx], space)
        if mutated in pop[:idx] + pop[idx + 1 :]:
            trajectory.append(score)
            continue
        candidate_members = pop[:idx] + [mutated] + pop[idx + 1 :]
        if not population_covers(candidate_members, space.num_tasks):
            trajectory.append(score)
            continue
        candidate_gains = gains[:idx] + [dict(scorer(mutated))] + gains[idx + 1 :]
        candidate_score = _overall_from_gains(candidate_gains, space.num_tasks)
        if candidate_score > score:
            pop, gains, score = candidate_members, candidate_gains, candidate_score
        trajectory.append(score)
    return RestartResult(Population(tuple(pop)), score, trajectory)


def greedy_search(
    params: SurrogateParams,
    cfg: DerivationConfig,
    space: SearchSpaceConfig,
    rng: Optional[np.random.Generator] = None,
    scorer: Optional[PointScorer] = None,
    return_details: bool = False,
):
    """Best population over `restarts` independent greedy runs (ties keep the
    earliest restart). Scores come from the frozen surrogate unless an
    explicit scorer is supplied."""
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if scorer is None:
        scorer = surrogate_scorer(params)
    restart_seeds = [int(rng.integers(0, 2**63)) for _ in range(cfg.restarts)]
    results = [
        _greedy_restart(scorer, cfg, space, np.random.Generator(np.random.PCG64(s)))
        for s in restart_seeds
    ]
    best = max(range(len(results)), key=lambda i: (results[i].score, -i))
    if return_details:
        return results[best].population, results[best], results
    return results[best].population


def enumerate_points(space: SearchSpaceConfig) -> list[SearchPoint]:
    """Every point of the space, in a fixed (mask-major, op-product) order."""
    n = space.num_tasks
    combos = [
        TaskCombination(tuple(t for t in range(n) if mask >> t & 1))
        for mask in range(1, 1 << n)
    ]
    from .search_space import num_edges

    arch_ops = list(itertools.product(space.operations, repeat=num_edges(space.num_nodes)))
    archs = [Architecture(space.num_nodes, ops) for ops in arch_ops]
    return [SearchPoint(c, a) for c in combos for a in archs]


@dataclass
class BruteForceResult:
    population: Population
    score: float
    per_task: dict[int, tuple[SearchPoint, float]]  # task -> (claiming point, gain)


def brute_force_best(
    scorer: PointScorer, space: SearchSpaceConfig, budget: int
) -> BruteForceResult:
    """Exact optimum over coverage-valid populations of size <= budget.

    Guarded: the space must have at most 10_000 points, and the budget must be
    <= 2 (full enumeration) or >= N (per-task-max shortcut).
    """
    total = combination_count(space) * architecture_count(space)
    if total > 10_000:
        raise GuardRefusal(
            f"space has {total} points; brute force is guarded at 10000"
        )
    n = space.num_tasks
    points = enumerate_points(space)
    gains = [dict(scorer(p)) for p in points]

    if budget >= n:
        # every task can claim its globally best point
        per_task: dict[int, tuple[SearchPoint, float]] = {}
        for p, g in zip(points, gains):
            for t, value in g.items():
                if t not in per_task or value > per_task[t][1]:
                    per_task[t] = (p, value)
        members: list[SearchPoint] = []
        for t in range(n):
            if per_task[t][0] not in members:
                members.append(per_task[t][0])
        score = float(np.mean([per_task[t][1] for t in range(n)]))
        return BruteForceResult(Population(tuple(members)), score, per_task)

    if budget > 2:
        raise GuardRefusal(
            f"budget {budget} unsupported: brute force enumerates only budget <= 2 "
            f"or budget >= num_tasks ({n})"
        )

    best_members: Optional[tuple[int, ...]] = None
    best_score = -np.inf
    full_mask = (1 << n) - 1

    def combo_mask(i: int) -> int:
        m = 0
        for t in points[i].combination.members:
            m |= 1 << t
        return m

    masks = [combo_mask(i) for i in range(len(points))]
    for i in range(len(points)):
        if masks[i] == full_mask:
            score = _overall_from_gains([gains[i]], n)
            if score > best_score:
                best_score, best_members = score, (i,)
    if budget >= 2:
        for i, j in itertools.combinations(range(len(points)), 2):
            if masks[i] | masks[j] != full_mask:
                continue
            score = _overall_from_gains([gains[i], gains[j]], n)
            if score > best_score:
                best_score, best_members = score, (i, j)
    if best_members is None:
        raise CoverageError("no coverage-valid population exists in this space")
    member_points = [points[i] for i in best_members]
    per_task = {}
    for idx in best_members:
        for t, value in gains[idx].items():
            if t not in per_task or value > per_task[t][1]:
                per_task[t] = (points[idx], value)
    return BruteForceResult(Population(tuple(member_points)), best_score, per_task)
