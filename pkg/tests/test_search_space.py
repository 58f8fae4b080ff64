import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupnas.search_space import (
    Architecture,
    OperationKind,
    PointDecodeError,
    SearchPoint,
    SearchSpaceConfig,
    TaskCombination,
    architecture_count,
    combination_count,
    combinations_containing,
    decode_point,
    edge_list,
    encode_point,
    mutate_point,
    num_edges,
    random_architecture,
    random_combination,
    validate_point,
)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def random_point(r, config):
    return SearchPoint(random_combination(r, config), random_architecture(r, config))


class TestCounts:
    def test_combination_count(self):
        assert combination_count(SearchSpaceConfig(5, 2)) == 31
        assert combination_count(SearchSpaceConfig(1, 2)) == 1
        assert combination_count(SearchSpaceConfig(25, 3)) == 33_554_431

    def test_architecture_count(self):
        assert architecture_count(SearchSpaceConfig(3, 2)) == 125
        assert architecture_count(SearchSpaceConfig(3, 3)) == 15_625
        assert architecture_count(SearchSpaceConfig(3, 1)) == 5

    def test_edge_list_lexicographic(self):
        assert edge_list(2) == [(0, 1), (0, 2), (1, 2)]
        assert num_edges(3) == 6


class TestRandomCombination:
    def test_single_task(self):
        cfg = SearchSpaceConfig(1, 1)
        assert random_combination(rng(), cfg).members == (0,)

    def test_must_include(self):
        cfg = SearchSpaceConfig(8, 1)
        r = rng(3)
        for _ in range(200):
            assert 3 in random_combination(r, cfg, must_include=3)

    def test_uniform_over_subsets(self):
        # chi-square style check: each of the 7 subsets within 3 sigma of n*p
        cfg = SearchSpaceConfig(3, 1)
        r = rng(12345)
        n = 1_000_000
        counts = {}
        for _ in range(n):
            c = random_combination(r, cfg)
            counts[c.members] = counts.get(c.members, 0) + 1
        assert len(counts) == 7
        p = 1 / 7
        sigma = (n * p * (1 - p)) ** 0.5
        for members, count in counts.items():
            assert abs(count - n * p) < 3 * sigma, (members, count)


class TestRandomArchitecture:
    def test_structure(self):
        cfg = SearchSpaceConfig(2, 1)
        arch = random_architecture(rng(), cfg)
        assert arch.num_nodes == 1
        assert len(arch.ops) == 1
        assert arch.ops[0] in OperationKind

    def test_edge_count(self):
        cfg = SearchSpaceConfig(2, 3)
        assert len(random_architecture(rng(), cfg).ops) == 6

    def test_per_edge_marginal_uniform(self):
        cfg = SearchSpaceConfig(2, 2)
        r = rng(99)
        n = 100_000
        counts = np.zeros((3, 5))
        idx = {op: i for i, op in enumerate(cfg.operations)}
        for _ in range(n):
            for e, op in enumerate(random_architecture(r, cfg).ops):
                counts[e, idx[op]] += 1
        p = 1 / 5
        sigma = (n * p * (1 - p)) ** 0.5
        assert np.all(np.abs(counts - n * p) < 3 * sigma)


class TestCombinationsContaining:
    def test_full_enumeration(self):
        cfg = SearchSpaceConfig(3, 1)
        combos = combinations_containing(0, cfg, cap=512, rng=rng())
        assert sorted(c.members for c in combos) == [(0,), (0, 1), (0, 1, 2), (0, 2)]

    def test_cap_branch(self):
        cfg = SearchSpaceConfig(25, 3)
        combos = combinations_containing(7, cfg, cap=512, rng=rng(5))
        assert len(combos) == 512
        assert len(set(c.members for c in combos)) == 512
        assert all(7 in c for c in combos)
        assert (7,) in [c.members for c in combos]
        assert tuple(range(25)) in [c.members for c in combos]

    @given(st.integers(2, 10), st.integers(0, 9), st.integers(2, 40), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_anchor_always_present(self, n, task, cap, seed):
        task = task % n
        cfg = SearchSpaceConfig(n, 1)
        combos = combinations_containing(task, cfg, cap=cap, rng=rng(seed))
        assert all(task in c for c in combos)
        assert len(set(combos)) == len(combos)


class TestMutatePoint:
    def test_forced_op_mutation(self):
        cfg = SearchSpaceConfig(1, 1)
        point = SearchPoint(
            TaskCombination.of([0]), Architecture(1, (OperationKind.ZERO,))
        )
        r = rng(0)
        for _ in range(20):
            mutated = mutate_point(r, point, cfg)
            assert mutated.combination == point.combination
            assert mutated.architecture.ops[0] != OperationKind.ZERO

    def test_op_mutation_hamming_distance_one(self):
        cfg = SearchSpaceConfig(4, 2)
        r = rng(7)
        for _ in range(300):
            point = random_point(r, cfg)
            mutated = mutate_point(r, point, cfg)
            if mutated.combination == point.combination:
                diff = sum(
                    a != b
                    for a, b in zip(point.architecture.ops, mutated.architecture.ops)
                )
                assert diff == 1

    def test_task_swap_preserves_size(self):
        cfg = SearchSpaceConfig(5, 1)
        r = rng(21)
        point = SearchPoint(
            TaskCombination.of([1, 3]), Architecture(1, (OperationKind.FFN,))
        )
        seen_swap = False
        for _ in range(500):
            mutated = mutate_point(r, point, cfg)
            before, after = set(point.combination), set(mutated.combination)
            if len(after) == 2 and after != before and mutated.architecture == point.architecture:
                assert len(before ^ after) == 2
                seen_swap = True
        assert seen_swap

    @given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 10_000))
    @settings(max_examples=80, deadline=None)
    def test_mutation_valid_and_different(self, n, p, seed):
        cfg = SearchSpaceConfig(n, p)
        r = rng(seed)
        point = random_point(r, cfg)
        for _ in range(30):
            mutated = mutate_point(r, point, cfg)
            assert mutated != point
            validate_point(mutated, cfg)
            assert len(mutated.combination) >= 1
            point = mutated


class TestEncodeDecode:
    def test_canonical_example(self):
        cfg = SearchSpaceConfig(5, 2)
        point = SearchPoint(
            TaskCombination.of([0, 3, 4]),
            Architecture(2, (OperationKind.RNN, OperationKind.FFN, OperationKind.ATTENTION)),
        )
        assert encode_point(point) == "tasks=0,3,4|P=2|ops=rnn,ffn,attention"
        assert decode_point("tasks=0,3,4|P=2|ops=rnn,ffn,attention", cfg) == point

    def test_round_trip_many(self):
        cfg = SearchSpaceConfig(7, 2)
        r = rng(17)
        for _ in range(10_000):
            point = random_point(r, cfg)
            assert decode_point(encode_point(point), cfg) == point

    def test_construction_order_irrelevant(self):
        a = TaskCombination.of([4, 0, 3])
        b = TaskCombination.of([3, 4, 0])
        arch = Architecture(1, (OperationKind.ZERO,))
        assert encode_point(SearchPoint(a, arch)) == encode_point(SearchPoint(b, arch))

    @pytest.mark.parametrize(
        "text",
        [
            "tasks=0,3|P=2|ops=conv,ffn,rnn",      # unknown op
            "tasks=0,9|P=2|ops=ffn,ffn,rnn",       # task out of range
            "tasks=0,1|P=2|ops=ffn,rnn",           # missing edge
            "tasks=1,0|P=2|ops=ffn,rnn,zero",      # not ascending
            "tasks=|P=2|ops=ffn,rnn,zero",         # empty tasks
            "tasks=0|P=3|ops=ffn,rnn,zero",        # wrong node count
            "garbage",
            "tasks=0|P=2",
        ],
    )
    def test_decode_rejects(self, text):
        cfg = SearchSpaceConfig(5, 2)
        with pytest.raises(PointDecodeError):
            decode_point(text, cfg)


class TestInvariants:
    def test_architecture_edge_set_exact(self):
        with pytest.raises(ValueError):
            Architecture(2, (OperationKind.ZERO,) * 2)
        with pytest.raises(ValueError):
            Architecture.from_edge_ops(1, {(0, 1): OperationKind.ZERO, (1, 2): OperationKind.FFN})

    def test_combination_rejects_bad_members(self):
        with pytest.raises(ValueError):
            TaskCombination(())
        with pytest.raises(ValueError):
            TaskCombination((2, 1))
        with pytest.raises(ValueError):
            TaskCombination((1, 1))
