"""Shared-encoder multi-task network assembled from a searched DAG.

Node 0 is the input sequence; node p sums one transformed copy of every
earlier node, where each edge applies its own operation (identity, zero,
feed-forward, LSTM or single-head self-attention). All node features keep the
input shape [batch, L, d_e]. One linear classifier per task reads the last
time step of the final node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

OP_LABELS = ("identity", "zero", "ffn", "rnn", "attention")


@dataclass(frozen=True)
class ArchitectureSpec:
    """DAG description as it arrives on the wire: nodes + one op per edge."""

    num_nodes: int
    edge_ops: dict[tuple[int, int], str]

    def __post_init__(self):
        expected = {(i, p) for p in range(1, self.num_nodes + 1) for i in range(p)}
        if set(self.edge_ops) != expected:
            raise ValueError(
                f"edge set mismatch: got {sorted(self.edge_ops)}, expected {sorted(expected)}"
            )
        for edge, op in self.edge_ops.items():
            if op not in OP_LABELS:
                raise ValueError(f"unknown operation {op!r} on edge {edge}")

    @classmethod
    def from_wire(cls, payload: dict) -> "ArchitectureSpec":
        edges = {(e["src"], e["dst"]): e["op"] for e in payload["edges"]}
        return cls(int(payload["nodes"]), edges)


class Identity(nn.Module):
    def forward(self, x):
        return x


class Zero(nn.Module):
    def forward(self, x):
        return torch.zeros_like(x)


class FeedForward(nn.Module):
    def __init__(self, dim: int, expansion: int = 4):
        super().__init__()
        self.lift = nn.Linear(dim, expansion * dim)
        self.drop = nn.Linear(expansion * dim, dim)

    def forward(self, x):
        return self.drop(torch.relu(self.lift(x)))


class Recurrent(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.lstm = nn.LSTM(dim, dim, batch_first=True)

    def forward(self, x):
        out, _ = self.lstm(x)
        return out


class SelfAttention(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.scale = 1.0 / math.sqrt(dim)

    def forward(self, x):
        scores = torch.softmax(self.q(x) @ self.k(x).transpose(1, 2) * self.scale, dim=-1)
        return self.out(scores @ self.v(x))


def build_operation(label: str, dim: int) -> nn.Module:
    if label == "identity":
        return Identity()
    if label == "zero":
        return Zero()
    if label == "ffn":
        return FeedForward(dim)
    if label == "rnn":
        return Recurrent(dim)
    if label == "attention":
        return SelfAttention(dim)
    raise ValueError(f"unknown operation {label!r}")


class InstantiatedModel(nn.Module):
    """Eq.-style DAG encoder with hard parameter sharing and per-task heads."""

    def __init__(self, arch: ArchitectureSpec, tasks: list[int], feature_dim: int):
        super().__init__()
        self.arch = arch
        self.tasks = list(tasks)
        self.feature_dim = feature_dim
        self.edges = nn.ModuleDict(
            {
                f"{src}->{dst}": build_operation(op, feature_dim)
                for (src, dst), op in sorted(arch.edge_ops.items())
            }
        )
        self.heads = nn.ModuleDict(
            {str(t): nn.Linear(feature_dim, 1) for t in self.tasks}
        )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        nodes = [x]
        for p in range(1, self.arch.num_nodes + 1):
            total = None
            for i in range(p):
                out = self.edges[f"{i}->{p}"](nodes[i])
                total = out if total is None else total + out
            nodes.append(total)
        return nodes[-1]

    def forward(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        final = self.encode(x)[:, -1, :]
        return {t: self.heads[str(t)](final).squeeze(-1) for t in self.tasks}


def reinit_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic re-initialization with an explicit generator, so results
    do not depend on global RNG state or module construction order."""
    gen = torch.Generator().manual_seed(seed)
    for name, param in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        if param.dim() >= 2:
            fan_in = param.shape[1] if param.dim() == 2 else param.numel() // param.shape[0]
            bound = 1.0 / math.sqrt(fan_in)
        else:
            bound = 0.05
        with torch.no_grad():
            param.uniform_(-bound, bound, generator=gen)


def instantiate(arch: ArchitectureSpec, tasks: list[int], feature_dim: int,
                seed: int = 0) -> InstantiatedModel:
    model = InstantiatedModel(arch, tasks, feature_dim)
    reinit_parameters(model, seed)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
