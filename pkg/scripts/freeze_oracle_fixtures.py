"""Enumerate desk-scale synthetic-oracle optima and print fixture values.

The acceptance tests pin these numbers; re-run this script to regenerate them
if the oracle definition ever changes. Enumeration is written with plain loops
on purpose so it stays independent of the engine's vectorized paths.
"""

import itertools

import numpy as np

from groupnas.evaluation import SyntheticOracle, SyntheticOracleConfig
from groupnas.search_space import (
    Architecture,
    SearchPoint,
    SearchSpaceConfig,
    TaskCombination,
    num_edges,
)


def enumerate_space(space):
    combos = [
        TaskCombination(tuple(t for t in range(space.num_tasks) if mask >> t & 1))
        for mask in range(1, 1 << space.num_tasks)
    ]
    archs = [
        Architecture(space.num_nodes, ops)
        for ops in itertools.product(space.operations, repeat=num_edges(space.num_nodes))
    ]
    return [SearchPoint(c, a) for c in combos for a in archs]


def per_task_optimum(space, oracle):
    best = {t: -np.inf for t in range(space.num_tasks)}
    points = enumerate_space(space)
    for point in points:
        gains = oracle.evaluate(point).gains
        for t, g in gains.items():
            if g > best[t]:
                best[t] = g
    return best, len(points)


def main():
    for label, space, seed in [
        ("N=6 P=2 seed=7", SearchSpaceConfig(6, 2), 7),
        ("N=4 P=1 seed=7", SearchSpaceConfig(4, 1), 7),
    ]:
        oracle = SyntheticOracle(SyntheticOracleConfig(seed=seed), space)
        best, count = per_task_optimum(space, oracle)
        g_star = float(np.mean([best[t] for t in range(space.num_tasks)]))
        print(f"{label}: {count} points")
        for t in sorted(best):
            print(f"  task {t}: best gain {best[t]:.17g}")
        print(f"  G* = {g_star:.17g}")


if __name__ == "__main__":
    main()
