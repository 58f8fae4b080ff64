import json
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupnas.evaluation import (
    BaselineScores,
    CacheMismatchError,
    CachedEvaluator,
    ConfigurationError,
    CoverageError,
    EvaluationCache,
    EvaluationRecord,
    EvaluatorHandle,
    ExternalEvaluator,
    SyntheticEvaluator,
    SyntheticOracle,
    SyntheticOracleConfig,
    TransportError,
    compute_gains,
    external_evaluate,
    overall_gain,
    synthetic_evaluate,
)
from groupnas.search_space import (
    Architecture,
    OperationKind,
    SearchPoint,
    SearchSpaceConfig,
    TaskCombination,
    random_architecture,
    random_combination,
)

ECHO = Path(__file__).parent / "helpers" / "echo_evaluator.py"


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def point(tasks, ops):
    return SearchPoint(TaskCombination.of(tasks), Architecture(1, (ops,)))


class TestComputeGains:
    def test_basic(self):
        baselines = BaselineScores("avp", {0: 0.5})
        assert compute_gains({0: 0.55}, baselines)[0] == pytest.approx(0.1, abs=1e-15)

    def test_zero_gain_identity(self):
        baselines = BaselineScores("avp", {0: 0.731})
        assert compute_gains({0: 0.731}, baselines)[0] == 0.0

    def test_backbone_value(self):
        baselines = BaselineScores("avp", {0: 0.5647})
        g = compute_gains({0: 0.6212}, baselines)[0]
        assert abs(g - (0.6212 - 0.5647) / 0.5647) < 1e-12
        assert g == pytest.approx(0.10005312555339117, abs=1e-12)

    def test_missing_baseline(self):
        baselines = BaselineScores("avp", {0: 0.5})
        with pytest.raises(ConfigurationError):
            compute_gains({1: 0.4}, baselines)

    @given(st.floats(0.01, 1.0), st.floats(-0.5, 0.5))
    @settings(max_examples=60, deadline=None)
    def test_scaling_recovers_gain(self, s, g):
        baselines = BaselineScores("avp", {0: s})
        recovered = compute_gains({0: s * (1 + g)}, baselines)[0]
        assert recovered == pytest.approx(g, abs=1e-12)


class TestOverallGain:
    def _rec(self, tasks, gains):
        pt = point(tasks, OperationKind.RNN)
        metrics = {t: 0.5 * (1 + g) for t, g in zip(tasks, gains)}
        return EvaluationRecord(pt, metrics, dict(zip(tasks, gains)), "synthetic")

    def test_max_then_mean(self):
        records = [self._rec([0], [0.1]), self._rec([0, 1], [0.2, 0.05])]
        assert overall_gain(records, 2) == pytest.approx((0.2 + 0.05) / 2)

    def test_single_full_record(self):
        record = self._rec([0, 1, 2], [0.3, 0.0, -0.3])
        assert overall_gain([record], 3) == pytest.approx(0.0)

    def test_uncovered_task_errors(self):
        with pytest.raises(CoverageError):
            overall_gain([self._rec([0], [0.1])], 2)

    def test_monotone_in_records(self):
        r = rng(5)
        records = [self._rec([0, 1], list(r.normal(0, 0.1, 2)))]
        g = overall_gain(records, 2)
        for _ in range(20):
            records.append(self._rec([int(r.integers(0, 2))], [float(r.normal(0, 0.1))]))
            g2 = overall_gain(records, 2)
            assert g2 >= g - 1e-15
            g = g2


class TestSyntheticOracle:
    def test_singleton_no_arch_no_noise_is_zero(self):
        space = SearchSpaceConfig(4, 1)
        cfg = SyntheticOracleConfig(seed=3, op_affinity_scale=0.0)
        record = synthetic_evaluate(cfg, point([2], OperationKind.FFN), space)
        assert record.gains[2] == pytest.approx(0.0, abs=1e-15)

    def test_pair_symmetry(self):
        space = SearchSpaceConfig(5, 1)
        oracle = SyntheticOracle(SyntheticOracleConfig(seed=9, op_affinity_scale=0.0), space)
        a = oracle.evaluate(point([1, 3], OperationKind.ZERO))
        assert a.gains[1] == pytest.approx(a.gains[3])
        assert oracle.pair_affinity[1, 3] == oracle.pair_affinity[3, 1]

    def test_crowding_penalty(self):
        space = SearchSpaceConfig(6, 1)
        cfg = SyntheticOracleConfig(
            seed=1, pair_affinity_scale=0.0, op_affinity_scale=0.0,
            crowding_coeff=0.01, crowding_knee=3,
        )
        oracle = SyntheticOracle(cfg, space)
        big = oracle.evaluate(point([0, 1, 2, 3, 4], OperationKind.FFN))
        assert big.gains[0] == pytest.approx(-0.01 * (5 - 3) ** 2)

    def test_deterministic_across_instances(self):
        space = SearchSpaceConfig(6, 2)
        cfg = SyntheticOracleConfig(seed=42, noise_std=0.01)
        pt = SearchPoint(
            TaskCombination.of([0, 2]), Architecture(2, (OperationKind.RNN,) * 3)
        )
        a = SyntheticOracle(cfg, space).evaluate(pt)
        b = SyntheticOracle(cfg, space).evaluate(pt)
        assert a.gains == b.gains and a.metrics == b.metrics

    def test_metric_gain_relation(self):
        space = SearchSpaceConfig(4, 1)
        baselines = BaselineScores("avp", {0: 0.3, 1: 0.4, 2: 0.5, 3: 0.6})
        oracle = SyntheticOracle(SyntheticOracleConfig(seed=2, baselines=baselines), space)
        record = oracle.evaluate(point([1, 2], OperationKind.ATTENTION))
        for t in (1, 2):
            recovered = compute_gains(record.metrics, baselines)[t]
            assert recovered == pytest.approx(record.gains[t], abs=1e-12)


class TestCache:
    def _record(self, space, seed=0):
        oracle = SyntheticOracle(SyntheticOracleConfig(seed=seed), space)
        r = rng(seed)
        pt = SearchPoint(random_combination(r, space), random_architecture(r, space))
        return oracle.evaluate(pt)

    def test_store_then_lookup(self, tmp_path):
        space = SearchSpaceConfig(4, 1)
        cache = EvaluationCache(space, tmp_path / "cache.log", "cfg", "base")
        record = self._record(space)
        cache.store(record)
        assert cache.lookup(record.point) is record

    def test_lookup_absent(self):
        space = SearchSpaceConfig(4, 1)
        cache = EvaluationCache(space)
        assert cache.lookup(point([0], OperationKind.RNN)) is None

    def test_reload_round_trip(self, tmp_path):
        space = SearchSpaceConfig(4, 2)
        path = tmp_path / "cache.log"
        cache = EvaluationCache(space, path, "cfg", "base")
        records = [self._record(space, seed=s) for s in range(5)]
        for record in records:
            cache.store(record)
        cache.close()
        reloaded = EvaluationCache(space, path, "cfg", "base")
        assert len(reloaded) == len({json.dumps(sorted(r.point.combination.members)) + str(r.point.architecture.ops) for r in records})
        for record in records:
            got = reloaded.lookup(record.point)
            assert got is not None
            assert got.gains == record.gains
            assert got.seq == cache.lookup(record.point).seq

    def test_corrupt_line_skipped(self, tmp_path, caplog):
        space = SearchSpaceConfig(4, 1)
        path = tmp_path / "cache.log"
        cache = EvaluationCache(space, path, "cfg", "base")
        record = self._record(space)
        cache.store(record)
        cache.close()
        with path.open("a") as fh:
            fh.write("{this is corrupt\n")
        reloaded = EvaluationCache(space, path, "cfg", "base")
        assert reloaded.lookup(record.point) is not None

    def test_fingerprint_mismatch(self, tmp_path):
        space = SearchSpaceConfig(4, 1)
        path = tmp_path / "cache.log"
        EvaluationCache(space, path, "cfg-a", "base").close()
        with pytest.raises(CacheMismatchError):
            EvaluationCache(space, path, "cfg-b", "base")

    def test_cached_point_never_reevaluated(self):
        space = SearchSpaceConfig(4, 1)
        oracle = SyntheticOracle(SyntheticOracleConfig(seed=1), space)

        class CountingEvaluator(SyntheticEvaluator):
            calls = 0

            def evaluate(self, points):
                CountingEvaluator.calls += len(points)
                return super().evaluate(points)

        cached = CachedEvaluator(CountingEvaluator(oracle), EvaluationCache(space))
        pt = point([0, 1], OperationKind.FFN)
        cached.evaluate([pt])
        cached.evaluate([pt, pt])
        assert CountingEvaluator.calls == 1
        assert cached.evaluations_performed == 1
        assert cached.cache_hits == 2


def echo_command(num_tasks, *extra):
    return [sys.executable, str(ECHO), "--num-tasks", str(num_tasks), *extra]


class TestExternalEvaluate:
    def test_echo_gives_zero_gains(self):
        space = SearchSpaceConfig(3, 1)
        baselines = BaselineScores.uniform(3, 0.5)
        points = [point([0, 2], OperationKind.RNN), point([1], OperationKind.ZERO)]
        with EvaluatorHandle(echo_command(3), 3) as handle:
            records = external_evaluate(handle, points, baselines)
        assert all(r is not None for r in records)
        for record, pt in zip(records, points):
            assert record.point == pt
            for t in pt.combination.members:
                assert record.gains[t] == pytest.approx(0.0, abs=1e-15)

    def test_out_of_order_responses(self):
        baselines = BaselineScores.uniform(4, 0.5)
        points = [point([t], OperationKind.FFN) for t in range(4)]
        with EvaluatorHandle(echo_command(4, "--reverse-batch", "4"), 4) as handle:
            records = external_evaluate(handle, points, baselines)
        for record, pt in zip(records, points):
            assert record.point == pt

    def test_malformed_line_is_transport_error(self):
        baselines = BaselineScores.uniform(2, 0.5)
        points = [point([0], OperationKind.FFN), point([1], OperationKind.FFN)]
        with EvaluatorHandle(echo_command(2, "--garbage-after", "1"), 2) as handle:
            with pytest.raises(TransportError) as err:
                external_evaluate(handle, points, baselines)
        assert "not json" in str(err.value)

    def test_per_point_failure_dropped_after_retries(self):
        baselines = BaselineScores.uniform(3, 0.5)
        points = [point([0], OperationKind.FFN), point([1], OperationKind.FFN)]
        with EvaluatorHandle(echo_command(3, "--fail-tasks", "1"), 3) as handle:
            records = external_evaluate(handle, points, baselines, retries=2)
        assert records[0] is not None
        assert records[1] is None

    def test_per_point_failure_recovers_within_retries(self):
        baselines = BaselineScores.uniform(3, 0.5)
        points = [point([1], OperationKind.FFN)]
        with EvaluatorHandle(
            echo_command(3, "--fail-tasks", "1", "--fail-times", "2"), 3
        ) as handle:
            records = external_evaluate(handle, points, baselines, retries=2)
        assert records[0] is not None

    def test_handshake_mismatch(self):
        with pytest.raises(TransportError):
            EvaluatorHandle(echo_command(5), 3)

    def test_evaluator_exit_is_transport_error(self):
        baselines = BaselineScores.uniform(2, 0.5)
        with EvaluatorHandle(echo_command(2), 2) as handle:
            handle.proc.stdin.close()
            handle.proc.wait(timeout=5)
            with pytest.raises(TransportError):
                external_evaluate(handle, [point([0], OperationKind.FFN)], baselines)
