"""Measure the end-to-end regret criterion statistic for candidate settings."""

import time

import numpy as np

from groupnas.derivation import DerivationConfig, brute_force_best, greedy_search
from groupnas.evaluation import (
    CachedEvaluator,
    EvaluationCache,
    SyntheticEvaluator,
    SyntheticOracle,
    SyntheticOracleConfig,
    overall_gain,
)
from groupnas.sampler import SamplerConfig, run_sampler
from groupnas.search_space import SearchSpaceConfig
from groupnas.surrogate import SurrogateConfig, TrainConfig

SPACE = SearchSpaceConfig(6, 2)
ORACLE = SyntheticOracle(SyntheticOracleConfig(seed=7), SPACE)
G_STAR = brute_force_best(lambda p: ORACLE.evaluate(p).gains, SPACE, 6).score


def one_run(seed, d, epochs):
    scfg = SurrogateConfig(hidden_dim=d, num_tasks=6, num_nodes=2)
    tcfg = TrainConfig(learning_rate=1e-3, batch_size=5, epochs_per_update=epochs)
    samp = SamplerConfig(q0=20, q1=50, q2=10, lam=0.5, k1=20, seed=seed,
                         retrain_from_scratch=True)
    cache = EvaluationCache(SPACE)
    ev = CachedEvaluator(SyntheticEvaluator(ORACLE), cache)
    state = run_sampler(samp, SPACE, scfg, tcfg, ev)
    assert state.evaluations <= 140
    dcfg = DerivationConfig(budget=6, iterations=1000, restarts=8, seed=seed + 1000)
    pop = greedy_search(state.params, dcfg, SPACE)
    return overall_gain([ORACLE.evaluate(p) for p in pop.members], 6) / G_STAR


def main():
    seeds = list(range(10))
    for d, epochs in [(12, 120), (16, 120)]:
        t0 = time.time()
        ratios = [one_run(s, d, epochs) for s in seeds]
        print(
            f"d={d} ep={epochs}: ratios {[round(x, 3) for x in ratios]} "
            f"median {np.median(ratios):.3f} min {min(ratios):.3f} "
            f"{(time.time() - t0) / len(seeds):.0f}s/run",
            flush=True,
        )


if __name__ == "__main__":
    main()
