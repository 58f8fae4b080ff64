"""Gain-predicting surrogate: DAG encoder, task-set attention encoder, fusion head.

The model maps a (task combination, architecture) pair to one predicted gain
per selected task. Forward and backward passes are written directly against
numpy arrays; the backward pass is an exact reverse-mode derivation and is
checked against central finite differences in the test suite.

Architecture encoding walks the DAG in node order: each node state is the
nonlinearity of the mean of per-edge linear transforms of its predecessors
(one transition matrix per operation label). Combination encoding is one
scaled dot-product self-attention layer over task embeddings followed by
mean pooling. The head concatenates [arch encoding; set encoding; task
embedding] and applies affine -> relu -> affine per task.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .search_space import (
    DEFAULT_OPERATIONS,
    Architecture,
    OperationKind,
    SearchPoint,
    TaskCombination,
)


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


class GradientError(RuntimeError):
    """A gradient block became non-finite."""


@dataclass
class SurrogateConfig:
    hidden_dim: int
    num_tasks: int
    num_nodes: int
    operations: tuple[OperationKind, ...] = DEFAULT_OPERATIONS
    head_hidden_dim: Optional[int] = None
    dag_activation: str = "tanh"  # "linear" is an exactness-test mode

    def __post_init__(self):
        self.operations = tuple(self.operations)
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.head_hidden_dim is None:
            self.head_hidden_dim = self.hidden_dim
        if self.dag_activation not in ("tanh", "linear"):
            raise ValueError(f"unknown dag_activation {self.dag_activation!r}")


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 5
    epochs_per_update: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs_per_update < 0:
            raise ValueError("epochs_per_update must be >= 0")


@dataclass
class TrainingSample:
    """One supervised pair: a search point and its per-task ground-truth gains.

    `gains` is aligned with the combination's canonical (ascending) task order.
    """

    point: SearchPoint
    gains: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        if self.gains.shape != (len(self.point.combination),):
            raise ValueError(
                f"gains shape {self.gains.shape} does not match |C|="
                f"{len(self.point.combination)}"
            )
        if not np.all(np.isfinite(self.gains)):
            raise ValueError("gains must be finite")


@dataclass
class SurrogateParams:
    """All learnable parameters; shapes are fixed by the attached config."""

    config: SurrogateConfig
    input_node: np.ndarray  # [d]
    op_mats: np.ndarray     # [n_ops, d, d]
    task_emb: np.ndarray    # [N, d]
    wq: np.ndarray          # [d, d]
    wk: np.ndarray          # [d, d]
    wv: np.ndarray          # [d, d]
    head_w1: np.ndarray     # [m, 3d]
    head_b1: np.ndarray     # [m]
    head_w2: np.ndarray     # [m]
    head_b2: np.ndarray     # [1]

    def blocks(self) -> dict[str, np.ndarray]:
        return {
            "input_node": self.input_node,
            "op_mats": self.op_mats,
            "task_emb": self.task_emb,
            "wq": self.wq,
            "wk": self.wk,
            "wv": self.wv,
            "head_w1": self.head_w1,
            "head_b1": self.head_b1,
            "head_w2": self.head_w2,
            "head_b2": self.head_b2,
        }

    def copy(self) -> "SurrogateParams":
        return SurrogateParams(
            self.config, **{k: v.copy() for k, v in self.blocks().items()}
        )


def init_params(cfg: SurrogateConfig, rng: np.random.Generator) -> SurrogateParams:
    """Matrices and embeddings uniform in (-1/sqrt(d), 1/sqrt(d)); biases zero."""
    d = cfg.hidden_dim
    m = cfg.head_hidden_dim
    bound = 1.0 / math.sqrt(d)

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return SurrogateParams(
        config=cfg,
        input_node=u(d),
        op_mats=u(len(cfg.operations), d, d),
        task_emb=u(cfg.num_tasks, d),
        wq=u(d, d),
        wk=u(d, d),
        wv=u(d, d),
        head_w1=u(m, 3 * d),
        head_b1=np.zeros(m),
        head_w2=u(m),
        head_b2=np.zeros(1),
    )


def _dag_forward(params: SurrogateParams, arch: Architecture):
    """Node states h_0..h_P; returns (states, preactivations)."""
    cfg = params.config
    states = [params.input_node]
    pres = []
    for p in range(1, arch.num_nodes + 1):
        acc = np.zeros(cfg.hidden_dim)
        for i in range(p):
            w = params.op_mats[cfg.operations.index(arch.op(i, p))]
            acc = acc + w @ states[i]
        pre = acc / p
        pres.append(pre)
        states.append(np.tanh(pre) if cfg.dag_activation == "tanh" else pre)
    return states, pres


def encode_architecture(params: SurrogateParams, arch: Architecture) -> np.ndarray:
    return _dag_forward(params, arch)[0][-1]


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class _AttentionCache:
    tokens: np.ndarray  # [k, d]
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray    # [k, k] row-softmax
    out: np.ndarray     # [k, d]
    pooled: np.ndarray  # [d]


def _attention_forward(params: SurrogateParams, task_ids: Sequence[int]) -> _AttentionCache:
    d = params.config.hidden_dim
    tokens = params.task_emb[list(task_ids)]
    q = tokens @ params.wq.T
    k = tokens @ params.wk.T
    v = tokens @ params.wv.T
    attn = _softmax_rows(q @ k.T / math.sqrt(d))
    out = attn @ v
    return _AttentionCache(tokens, q, k, v, attn, out, out.mean(axis=0))


def encode_combination(params: SurrogateParams, comb: TaskCombination) -> np.ndarray:
    return _attention_forward(params, comb.members).pooled


def _head_forward(params: SurrogateParams, x: np.ndarray):
    """x: [k, 3d] -> (outputs [k], relu pre-activations [k, m])."""
    pre = x @ params.head_w1.T + params.head_b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ params.head_w2 + params.head_b2[0], pre


def _head_inputs(h_last: np.ndarray, pooled: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    k = tokens.shape[0]
    return np.concatenate(
        [np.broadcast_to(h_last, (k, h_last.shape[0])),
         np.broadcast_to(pooled, (k, pooled.shape[0])),
         tokens],
        axis=1,
    )


def predict_gains(params: SurrogateParams, point: SearchPoint) -> np.ndarray:
    """Predicted gain per task in the combination's canonical order."""
    h_last = encode_architecture(params, point.architecture)
    att = _attention_forward(params, point.combination.members)
    outputs, _ = _head_forward(params, _head_inputs(h_last, att.pooled, att.tokens))
    return outputs


def _dag_forward_batch(
    params: SurrogateParams, archs: Sequence[Architecture]
) -> tuple[list[np.ndarray], list[list[np.ndarray]]]:
    """Per-level node states for a batch of architectures.

    Returns (states, edge_codes): states[p] is [B, d]; edge_codes[p][i] is the
    per-architecture operation index array for edge (i, p).
    """
    cfg = params.config
    n = len(archs)
    num_nodes = archs[0].num_nodes
    op_idx = {op: i for i, op in enumerate(cfg.operations)}
    states = [np.broadcast_to(params.input_node, (n, cfg.hidden_dim))]
    edge_codes: list[list[np.ndarray]] = [[]]
    for p in range(1, num_nodes + 1):
        acc = np.zeros((n, cfg.hidden_dim))
        codes_for_p = []
        for i in range(p):
            codes = np.fromiter((op_idx[a.op(i, p)] for a in archs), dtype=int, count=n)
            codes_for_p.append(codes)
            for code in np.unique(codes):
                sel = codes == code
                acc[sel] += states[i][sel] @ params.op_mats[code].T
        edge_codes.append(codes_for_p)
        pre = acc / p
        states.append(np.tanh(pre) if cfg.dag_activation == "tanh" else pre)
    return states, edge_codes


def encode_architectures(
    params: SurrogateParams, archs: Sequence[Architecture]
) -> np.ndarray:
    """Batched DAG encoding; row q is encode_architecture of archs[q]."""
    if len(archs) == 0:
        return np.zeros((0, params.config.hidden_dim))
    return _dag_forward_batch(params, archs)[0][-1]


def predict_anchor_gains(
    params: SurrogateParams,
    comb: TaskCombination,
    anchor: int,
    archs: Sequence[Architecture],
) -> np.ndarray:
    """Predicted gain of `anchor` under `comb`, for each architecture."""
    if anchor not in comb:
        raise ValueError(f"anchor task {anchor} not in combination {comb.members}")
    pooled = encode_combination(params, comb)
    h = encode_architectures(params, archs)
    n = h.shape[0]
    x = np.concatenate(
        [h,
         np.broadcast_to(pooled, (n, pooled.shape[0])),
         np.broadcast_to(params.task_emb[anchor], (n, pooled.shape[0]))],
        axis=1,
    )
    outputs, _ = _head_forward(params, x)
    return outputs


def loss(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute error over components."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape or predicted.ndim != 1 or predicted.size < 1:
        raise ValueError(
            f"length mismatch: predicted {predicted.shape} vs truth {truth.shape}"
        )
    return float(np.mean(np.abs(predicted - truth)))


def _zero_grads(params: SurrogateParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.blocks().items()}


def _loss_and_gradients(
    params: SurrogateParams, batch: Sequence[TrainingSample]
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its exact gradient.

    The DAG encoder and the head run batched over the whole mini-batch; the
    attention encoder runs per sample (combination sizes differ)."""
    if not batch:
        raise ValueError("batch must be nonempty")
    cfg = params.config
    d = cfg.hidden_dim
    b = len(batch)
    grads = _zero_grads(params)

    archs = [s.point.architecture for s in batch]
    states, edge_codes = _dag_forward_batch(params, archs)
    atts = [_attention_forward(params, s.point.combination.members) for s in batch]
    sizes = np.array([len(s.point.combination) for s in batch])

    h_rows = np.repeat(states[-1], sizes, axis=0)
    z_rows = np.repeat(np.stack([a.pooled for a in atts]), sizes, axis=0)
    token_rows = np.concatenate([a.tokens for a in atts], axis=0)
    x = np.concatenate([h_rows, z_rows, token_rows], axis=1)
    outputs, pre1 = _head_forward(params, x)

    targets = np.concatenate([s.gains for s in batch])
    resid = outputs - targets
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    total = 0.0
    # d(batch loss)/dy, with the per-sample 1/k and the batch 1/b folded in;
    # sign(0) = 0 is the chosen subgradient of |.| at zero
    dy = np.sign(resid)
    for s in range(b):
        lo, hi = bounds[s], bounds[s + 1]
        total += float(np.mean(np.abs(resid[lo:hi])))
        dy[lo:hi] /= sizes[s] * b
    total /= b

    hidden = np.maximum(pre1, 0.0)
    grads["head_b2"][0] = dy.sum()
    grads["head_w2"][:] = hidden.T @ dy
    dpre1 = np.outer(dy, params.head_w2) * (pre1 > 0)
    grads["head_w1"][:] = dpre1.T @ x
    grads["head_b1"][:] = dpre1.sum(axis=0)
    dx = dpre1 @ params.head_w1

    dh_rows = dx[:, :d]
    dz_rows = dx[:, d : 2 * d]
    dtoken_rows = dx[:, 2 * d :]

    # attention backward, per sample
    scale = math.sqrt(d)
    for s, att in enumerate(atts):
        lo, hi = bounds[s], bounds[s + 1]
        k = int(sizes[s])
        dpooled = dz_rows[lo:hi].sum(axis=0)
        dout = np.broadcast_to(dpooled / k, (k, d))
        dattn = dout @ att.v.T
        dv = att.attn.T @ dout
        ds = att.attn * (dattn - (dattn * att.attn).sum(axis=1, keepdims=True)) / scale
        dq = ds @ att.k
        dk = ds.T @ att.q
        grads["wq"] += dq.T @ att.tokens
        grads["wk"] += dk.T @ att.tokens
        grads["wv"] += dv.T @ att.tokens
        dtokens = dtoken_rows[lo:hi] + dq @ params.wq + dk @ params.wk + dv @ params.wv
        for j, t in enumerate(batch[s].point.combination.members):
            grads["task_emb"][t] += dtokens[j]

    # DAG backward, batched over architectures
    num_nodes = archs[0].num_nodes
    dstates = [np.zeros((b, d)) for _ in range(num_nodes + 1)]
    np.add.at(dstates[-1], np.repeat(np.arange(b), sizes), dh_rows)
    for p in range(num_nodes, 0, -1):
        if cfg.dag_activation == "tanh":
            dpre = dstates[p] * (1.0 - states[p] ** 2)
        else:
            dpre = dstates[p]
        dpre = dpre / p
        for i in range(p):
            codes = edge_codes[p][i]
            for code in np.unique(codes):
                sel = codes == code
                grads["op_mats"][code] += dpre[sel].T @ states[i][sel]
                dstates[i][sel] += dpre[sel] @ params.op_mats[code]
    grads["input_node"][:] = dstates[0].sum(axis=0)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient in block {name!r}")
    return total, grads


def gradients(
    params: SurrogateParams, batch: Sequence[TrainingSample]
) -> dict[str, np.ndarray]:
    """Exact gradient of the mean batch loss w.r.t. every parameter block."""
    return _loss_and_gradients(params, batch)[1]


def dataset_mae(params: SurrogateParams, dataset: Sequence[TrainingSample]) -> float:
    """Mean over samples of the per-sample MAE."""
    return float(
        np.mean([loss(predict_gains(params, s.point), s.gains) for s in dataset])
    )


def train(
    params: SurrogateParams,
    dataset: Sequence[TrainingSample],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> SurrogateParams:
    """Shuffled mini-batch Adam on the MAE loss, continuing from `params`."""
    if not dataset:
        raise ValueError("dataset must be nonempty")
    params = params.copy()
    if cfg.epochs_per_update == 0:
        return params
    theta = flatten_params(params)
    m_state = np.zeros_like(theta)
    v_state = np.zeros_like(theta)
    step = 0
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(len(dataset))
        for start in range(0, len(dataset), cfg.batch_size):
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            batch_loss, grads = _loss_and_gradients(params, batch)
            if not math.isfinite(batch_loss):
                raise DivergenceError(
                    f"training loss became non-finite at step {step} "
                    f"(lr={cfg.learning_rate}, batch_size={cfg.batch_size})"
                )
            step += 1
            g = flatten_grads(params, grads)
            m_state = cfg.beta1 * m_state + (1 - cfg.beta1) * g
            v_state = cfg.beta2 * v_state + (1 - cfg.beta2) * g * g
            mhat = m_state / (1.0 - cfg.beta1**step)
            vhat = v_state / (1.0 - cfg.beta2**step)
            theta -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
            assign_flat(params, theta)
    return params


def flatten_params(params: SurrogateParams) -> np.ndarray:
    return np.concatenate([arr.ravel() for arr in params.blocks().values()])


def assign_flat(params: SurrogateParams, vec: np.ndarray) -> None:
    offset = 0
    for arr in params.blocks().values():
        arr.flat[:] = vec[offset : offset + arr.size]
        offset += arr.size
    if offset != vec.size:
        raise ValueError(f"flat vector has {vec.size} entries, params need {offset}")


def flatten_grads(params: SurrogateParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[name].ravel() for name in params.blocks()])


def save_params(params: SurrogateParams, manifest_path: Path, payload_path: Path) -> None:
    """Checkpoint: JSON manifest (names, shapes, byte offsets) + flat LE float64 payload."""
    cfg = params.config
    blocks = []
    chunks = []
    offset = 0
    for name, arr in params.blocks().items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        blocks.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "hidden_dim": cfg.hidden_dim,
        "num_tasks": cfg.num_tasks,
        "num_nodes": cfg.num_nodes,
        "operations": [op.value for op in cfg.operations],
        "head_hidden_dim": cfg.head_hidden_dim,
        "dag_activation": cfg.dag_activation,
        "blocks": blocks,
        "total_bytes": offset,
    }
    Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    Path(payload_path).write_bytes(b"".join(chunks))


def load_params(
    manifest_path: Path, payload_path: Path, cfg: SurrogateConfig
) -> SurrogateParams:
    manifest = json.loads(Path(manifest_path).read_text())
    labels = [op.value for op in cfg.operations]
    for key, want in [
        ("hidden_dim", cfg.hidden_dim),
        ("num_tasks", cfg.num_tasks),
        ("num_nodes", cfg.num_nodes),
        ("operations", labels),
        ("head_hidden_dim", cfg.head_hidden_dim),
        ("dag_activation", cfg.dag_activation),
    ]:
        if manifest[key] != want:
            raise ValueError(f"checkpoint {key}={manifest[key]!r} does not match config {want!r}")
    payload = Path(payload_path).read_bytes()
    if len(payload) != manifest["total_bytes"]:
        raise ValueError(
            f"payload has {len(payload)} bytes, manifest expects {manifest['total_bytes']}"
        )
    reference = init_params(cfg, np.random.Generator(np.random.PCG64(0)))
    arrays = {}
    for entry in manifest["blocks"]:
        shape = tuple(entry["shape"])
        want_shape = reference.blocks()[entry["name"]].shape
        if shape != want_shape:
            raise ValueError(
                f"block {entry['name']!r} has shape {shape}, config implies {want_shape}"
            )
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            payload, dtype="<f8", count=count, offset=entry["offset"]
        ).reshape(shape)
        arrays[entry["name"]] = arr.astype(float)
    missing = set(reference.blocks()) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint missing blocks: {sorted(missing)}")
    return SurrogateParams(config=cfg, **arrays)
