"""Joint search space over task combinations and shared-encoder DAGs.

A search point pairs a nonempty subset of task indices with a DAG whose
edges each carry one operation label. Node 0 is the raw input feature;
computation nodes are numbered 1..P and every node receives one edge from
every earlier node, so a P-node DAG has P*(P+1)/2 edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np


class PointDecodeError(ValueError):
    """Raised when a serialized search point cannot be parsed or validated."""


class OperationKind(Enum):
    """Candidate edge operations, in fixed declaration order."""

    IDENTITY = "identity"
    ZERO = "zero"
    FFN = "ffn"
    RNN = "rnn"
    ATTENTION = "attention"


DEFAULT_OPERATIONS: tuple[OperationKind, ...] = tuple(OperationKind)

_OP_BY_LABEL = {op.value: op for op in OperationKind}


def edge_list(num_nodes: int) -> list[tuple[int, int]]:
    """All edges (src, dst) with 0 <= src < dst <= num_nodes, lexicographic."""
    return [(i, p) for i in range(num_nodes) for p in range(i + 1, num_nodes + 1)]


def num_edges(num_nodes: int) -> int:
    return num_nodes * (num_nodes + 1) // 2


_EDGE_POS_CACHE: dict[int, dict[tuple[int, int], int]] = {}


def _edge_positions(num_nodes: int) -> dict[tuple[int, int], int]:
    cached = _EDGE_POS_CACHE.get(num_nodes)
    if cached is None:
        cached = {e: i for i, e in enumerate(edge_list(num_nodes))}
        _EDGE_POS_CACHE[num_nodes] = cached
    return cached


@dataclass(frozen=True)
class SearchSpaceConfig:
    num_tasks: int
    num_nodes: int
    operations: tuple[OperationKind, ...] = DEFAULT_OPERATIONS

    def __post_init__(self):
        object.__setattr__(self, "operations", tuple(self.operations))
        if self.num_tasks < 1:
            raise ValueError(f"num_tasks must be >= 1, got {self.num_tasks}")
        if self.num_nodes < 1:
            raise ValueError(f"num_nodes must be >= 1, got {self.num_nodes}")
        if not self.operations:
            raise ValueError("operations must be nonempty")
        if len(set(self.operations)) != len(self.operations):
            raise ValueError("operations must be unique")

    def op_index(self, op: OperationKind) -> int:
        return self.operations.index(op)


@dataclass(frozen=True)
class TaskCombination:
    """A nonempty task subset, stored in canonical ascending order."""

    members: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("task combination must be nonempty")
        for t in self.members:
            if not isinstance(t, int) or t < 0:
                raise ValueError(f"task ids must be nonnegative ints, got {t!r}")
        if any(a >= b for a, b in zip(self.members, self.members[1:])):
            raise ValueError(f"members must be strictly ascending, got {self.members}")

    @classmethod
    def of(cls, members: Iterable[int]) -> "TaskCombination":
        return cls(tuple(sorted({int(t) for t in members})))

    def __contains__(self, task: int) -> bool:
        return task in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


@dataclass(frozen=True)
class Architecture:
    """A DAG over `num_nodes` computation nodes; one op per edge.

    Operations are stored in lexicographic edge order, which makes equality,
    hashing and serialization canonical.
    """

    num_nodes: int
    ops: tuple[OperationKind, ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        expected = num_edges(self.num_nodes)
        if self.num_nodes < 1:
            raise ValueError(f"num_nodes must be >= 1, got {self.num_nodes}")
        if len(self.ops) != expected:
            raise ValueError(
                f"architecture with {self.num_nodes} nodes needs {expected} edge ops, "
                f"got {len(self.ops)}"
            )

    def op(self, src: int, dst: int) -> OperationKind:
        return self.ops[_edge_positions(self.num_nodes)[(src, dst)]]

    def edge_ops(self) -> dict[tuple[int, int], OperationKind]:
        return dict(zip(edge_list(self.num_nodes), self.ops))

    @classmethod
    def from_edge_ops(
        cls, num_nodes: int, mapping: Mapping[tuple[int, int], OperationKind]
    ) -> "Architecture":
        expected = edge_list(num_nodes)
        missing = [e for e in expected if e not in mapping]
        extra = [e for e in mapping if e not in set(expected)]
        if missing or extra:
            raise ValueError(f"bad edge set: missing={missing} extra={extra}")
        return cls(num_nodes, tuple(mapping[e] for e in expected))


@dataclass(frozen=True)
class SearchPoint:
    combination: TaskCombination
    architecture: Architecture


def validate_point(point: SearchPoint, config: SearchSpaceConfig) -> None:
    """Raise ValueError unless `point` lies inside the configured space."""
    if point.combination.members[-1] >= config.num_tasks:
        raise ValueError(
            f"task {point.combination.members[-1]} out of range for N={config.num_tasks}"
        )
    if point.architecture.num_nodes != config.num_nodes:
        raise ValueError(
            f"architecture has {point.architecture.num_nodes} nodes, config wants "
            f"{config.num_nodes}"
        )
    allowed = set(config.operations)
    for op in point.architecture.ops:
        if op not in allowed:
            raise ValueError(f"operation {op.value} not in configured set")


def combination_count(config: SearchSpaceConfig) -> int:
    return 2**config.num_tasks - 1


def architecture_count(config: SearchSpaceConfig) -> int:
    return len(config.operations) ** num_edges(config.num_nodes)


def random_combination(
    rng: np.random.Generator,
    config: SearchSpaceConfig,
    must_include: Optional[int] = None,
) -> TaskCombination:
    """Uniform draw over nonempty subsets, optionally conditioned on one task."""
    n = config.num_tasks
    if must_include is None:
        mask = int(rng.integers(1, 1 << n))
        return TaskCombination(tuple(t for t in range(n) if mask >> t & 1))
    if not 0 <= must_include < n:
        raise ValueError(f"must_include={must_include} out of range for N={n}")
    others = [t for t in range(n) if t != must_include]
    mask = int(rng.integers(0, 1 << (n - 1))) if n > 1 else 0
    picked = [others[i] for i in range(n - 1) if mask >> i & 1]
    picked.append(must_include)
    return TaskCombination(tuple(sorted(picked)))


def random_architecture(
    rng: np.random.Generator, config: SearchSpaceConfig
) -> Architecture:
    """Independent uniform operation per edge."""
    draws = rng.integers(0, len(config.operations), size=num_edges(config.num_nodes))
    return Architecture(config.num_nodes, tuple(config.operations[int(i)] for i in draws))


def combinations_containing(
    task: int, config: SearchSpaceConfig, cap: int, rng: np.random.Generator
) -> list[TaskCombination]:
    """Candidate combinations anchored at `task`.

    Full enumeration when 2^(N-1) fits under `cap`; otherwise `cap` distinct
    combinations with the singleton and the full set always included and the
    remainder drawn uniformly without replacement.
    """
    if cap < 2:
        raise ValueError(f"cap must be >= 2, got {cap}")
    n = config.num_tasks
    if not 0 <= task < n:
        raise ValueError(f"task={task} out of range for N={n}")
    others = [t for t in range(n) if t != task]
    total = 1 << (n - 1)

    def from_mask(mask: int) -> TaskCombination:
        picked = [others[i] for i in range(n - 1) if mask >> i & 1]
        picked.append(task)
        return TaskCombination(tuple(sorted(picked)))

    if total <= cap:
        return [from_mask(m) for m in range(total)]
    sampled: list[int] = []
    seen = {0, total - 1}
    while len(sampled) < cap - 2:
        m = int(rng.integers(1, total - 1))
        if m not in seen:
            seen.add(m)
            sampled.append(m)
    return [from_mask(m) for m in [0, *sampled, total - 1]]


def mutate_point(
    rng: np.random.Generator, point: SearchPoint, config: SearchSpaceConfig
) -> SearchPoint:
    """One-step mutation: change one task in C or one edge operation in A.

    A fair coin picks the branch; infeasible branches and moves are re-drawn,
    so the output always differs from the input and is always valid.
    """
    comb, arch = point.combination, point.architecture
    n = config.num_tasks
    comb_mutable = n > 1
    arch_mutable = len(config.operations) > 1
    if not comb_mutable and not arch_mutable:
        raise ValueError("point admits no mutation (N=1 and a single operation)")
    while True:
        if int(rng.integers(0, 2)) == 0:
            if not comb_mutable:
                continue
            members = list(comb.members)
            absent = [t for t in range(n) if t not in comb]
            moves = []
            if absent:
                moves.append("add")
            if len(members) > 1:
                moves.append("remove")
            if absent and len(members) >= 1:
                moves.append("swap")
            if not moves:
                continue
            move = moves[int(rng.integers(0, len(moves)))]
            if move == "add":
                members.append(absent[int(rng.integers(0, len(absent)))])
            elif move == "remove":
                members.pop(int(rng.integers(0, len(members))))
            else:
                out = int(rng.integers(0, len(members)))
                members[out] = absent[int(rng.integers(0, len(absent)))]
            return SearchPoint(TaskCombination(tuple(sorted(members))), arch)
        if not arch_mutable:
            continue
        e = int(rng.integers(0, num_edges(config.num_nodes)))
        alternatives = [o for o in config.operations if o != arch.ops[e]]
        new_op = alternatives[int(rng.integers(0, len(alternatives)))]
        ops = list(arch.ops)
        ops[e] = new_op
        return SearchPoint(comb, Architecture(arch.num_nodes, tuple(ops)))


def encode_point(point: SearchPoint) -> str:
    """Canonical text form, e.g. `tasks=0,3,4|P=2|ops=rnn,ffn,attention`."""
    tasks = ",".join(str(t) for t in point.combination.members)
    ops = ",".join(op.value for op in point.architecture.ops)
    return f"tasks={tasks}|P={point.architecture.num_nodes}|ops={ops}"


def decode_point(text: str, config: SearchSpaceConfig) -> SearchPoint:
    """Inverse of encode_point; rejects anything that is not canonical."""
    parts = text.split("|")
    if len(parts) != 3:
        raise PointDecodeError(f"expected 3 '|'-separated fields, got {len(parts)}: {text!r}")
    tasks_part, nodes_part, ops_part = parts
    if not tasks_part.startswith("tasks="):
        raise PointDecodeError(f"missing 'tasks=' prefix in {text!r}")
    if not nodes_part.startswith("P="):
        raise PointDecodeError(f"missing 'P=' prefix in {text!r}")
    if not ops_part.startswith("ops="):
        raise PointDecodeError(f"missing 'ops=' prefix in {text!r}")
    try:
        tasks = tuple(int(t) for t in tasks_part[len("tasks="):].split(","))
    except ValueError as exc:
        raise PointDecodeError(f"bad task list in {text!r}") from exc
    if any(a >= b for a, b in zip(tasks, tasks[1:])):
        raise PointDecodeError(f"task list not strictly ascending in {text!r}")
    if not tasks or any(t < 0 or t >= config.num_tasks for t in tasks):
        raise PointDecodeError(f"task out of range [0, {config.num_tasks}) in {text!r}")
    try:
        nodes = int(nodes_part[len("P="):])
    except ValueError as exc:
        raise PointDecodeError(f"bad node count in {text!r}") from exc
    if nodes != config.num_nodes:
        raise PointDecodeError(f"node count {nodes} != configured {config.num_nodes}")
    labels = ops_part[len("ops="):].split(",")
    if len(labels) != num_edges(nodes):
        raise PointDecodeError(
            f"expected {num_edges(nodes)} edge ops, got {len(labels)} in {text!r}"
        )
    ops = []
    allowed = set(config.operations)
    for label in labels:
        op = _OP_BY_LABEL.get(label)
        if op is None or op not in allowed:
            raise PointDecodeError(f"unknown operation label {label!r} in {text!r}")
        ops.append(op)
    return SearchPoint(TaskCombination(tasks), Architecture(nodes, tuple(ops)))
