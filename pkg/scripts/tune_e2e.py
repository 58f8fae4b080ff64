"""Grid-explore sampler/surrogate settings on the desk-scale synthetic setup.

Usage: python3 scripts/tune_e2e.py [--seeds 3] [--quick]
Prints realized-G ratios against the enumerated true optimum per setting.
"""

import argparse
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


def one_run(seed, d, lr, epochs, q1, q2, scratch, lam=0.5, bs=5, k2=1000, restarts=8):
    scfg = SurrogateConfig(hidden_dim=d, num_tasks=6, num_nodes=2)
    tcfg = TrainConfig(learning_rate=lr, batch_size=bs, epochs_per_update=epochs)
    samp = SamplerConfig(
        q0=20, q1=q1, q2=q2, lam=lam, k1=20, seed=seed, retrain_from_scratch=scratch
    )
    cache = EvaluationCache(SPACE)
    ev = CachedEvaluator(SyntheticEvaluator(ORACLE), cache)
    state = run_sampler(samp, SPACE, scfg, tcfg, ev)
    assert state.evaluations <= 140
    dcfg = DerivationConfig(budget=6, iterations=k2, restarts=restarts, seed=seed + 1000)
    pop = greedy_search(state.params, dcfg, SPACE)
    realized = overall_gain([ORACLE.evaluate(p) for p in pop.members], 6)
    best_eval = overall_gain(cache.records(), 6)
    return realized / G_STAR, best_eval / G_STAR


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    grids = [
        dict(d=12, lr=1e-3, epochs=120, q1=50, q2=10, scratch=True),
        dict(d=12, lr=1e-3, epochs=150, q1=100, q2=10, scratch=True),
    ]
    for g in grids:
        t0 = time.time()
        ratios, coverage = [], []
        for s in range(args.seeds):
            r, b = one_run(seed=100 + s, **g)
            ratios.append(r)
            coverage.append(b)
        took = (time.time() - t0) / args.seeds
        print(
            f"{g}: median={np.median(ratios):.3f} min={min(ratios):.3f} "
            f"best_eval_med={np.median(coverage):.3f} {took:.0f}s/run",
            flush=True,
        )


if __name__ == "__main__":
    main()
