"""Acceptance checks for the reference evaluator.

Two gates: protocol conformance under a scripted mock engine, and the
grouping-gain sanity property on correlated synthetic tasks (joint training of
two strongly correlated tasks is no worse than single-task training, within
tolerance), plus the node-shape law over random architectures.
"""

import json
import subprocess
import sys

import numpy as np
import pytest
import torch

from mtleval.data import DatasetConfig, generate_dataset
from mtleval.model import OP_LABELS, ArchitectureSpec, instantiate
from mtleval.training import TrainSettings, evaluate_architecture

JOINT_PAIR = ArchitectureSpec(1, {(0, 1): "rnn"})


def test_protocol_conformance_mock_engine():
    proc = subprocess.Popen(
        [sys.executable, "-m", "mtleval.cli", "serve",
         "--num-tasks", "2", "--seed", "3", "--samples", "400",
         "--seq-len", "8", "--feature-dim", "8", "--epochs", "1"],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1,
    )
    try:
        hello = json.loads(proc.stdout.readline())
        assert hello == {"type": "hello", "protocol": 1, "num_tasks": 2, "metric": "avp"}

        def send(obj):
            proc.stdin.write(json.dumps(obj) + "\n")
            proc.stdin.flush()

        request = {
            "id": "r-000001",
            "tasks": [0, 1],
            "architecture": {"nodes": 1, "edges": [{"src": 0, "dst": 1, "op": "identity"}]},
            "seed": 1,
        }
        send(request)
        send("not even close")
        send({**request, "id": "r-000002", "tasks": [5]})
        replies = {}
        for _ in range(3):
            reply = json.loads(proc.stdout.readline())
            replies[reply["id"]] = reply
        assert "metrics" in replies["r-000001"]
        assert sorted(replies["r-000001"]["metrics"]) == ["0", "1"]
        assert "error" in replies[None]
        assert "error" in replies["r-000002"]
        send({"type": "shutdown"})
        assert proc.wait(timeout=30) == 0
        print("[acceptance] protocol conformance: PASS")
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()


def test_grouping_gain_sanity_correlated_pair():
    deltas = []
    for seed in range(5):
        cfg = DatasetConfig(num_tasks=2, seed=seed, num_samples=1600, seq_len=24,
                            feature_dim=12, correlation=0.9)
        ds = generate_dataset(cfg)
        settings = TrainSettings(max_epochs=16)
        joint = evaluate_architecture(JOINT_PAIR, [0, 1], ds, seed=seed, settings=settings)
        solo0 = evaluate_architecture(JOINT_PAIR, [0], ds, seed=seed, settings=settings)
        solo1 = evaluate_architecture(JOINT_PAIR, [1], ds, seed=seed, settings=settings)
        deltas.append((joint[0] - solo0[0], joint[1] - solo1[1]))
    medians = np.median(np.array(deltas), axis=0)
    print(f"[acceptance] grouping-gain sanity: median deltas {medians.round(4).tolist()} "
          f"(tolerance -0.01): {'PASS' if np.all(medians >= -0.01) else 'FAIL'}")
    assert np.all(medians >= -0.01)


def test_node_shape_law_fifty_architectures():
    rng = np.random.default_rng(3)
    x = torch.randn(2, 8, 8)
    for _ in range(50):
        nodes = int(rng.integers(1, 4))
        edges = {}
        for p in range(1, nodes + 1):
            for i in range(p):
                edges[(i, p)] = OP_LABELS[rng.integers(0, len(OP_LABELS))]
        model = instantiate(ArchitectureSpec(nodes, edges), [0], feature_dim=8, seed=2)
        shapes = []
        handles = [
            op.register_forward_hook(lambda m, a, out: shapes.append(tuple(out.shape)))
            for op in model.edges.values()
        ]
        final = model.encode(x)
        for handle in handles:
            handle.remove()
        assert final.shape == x.shape
        assert all(s == tuple(x.shape) for s in shapes)
    print("[acceptance] node shape law over 50 random architectures: PASS")
