"""Run configuration: one JSON document driving search, derivation and evaluation.

A `defaults_profile` of task5/task10/task25 loads the standard hyperparameter
table for that scale; any explicitly given field overrides the profile. The
master seed derives all stage seeds by XOR with a hash of the stage tag, so
one integer pins the whole run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .derivation import DerivationConfig
from .evaluation import BaselineScores, SyntheticOracleConfig
from .sampler import AcquisitionVariant, SamplerConfig
from .search_space import DEFAULT_OPERATIONS, OperationKind, SearchSpaceConfig
from .surrogate import SurrogateConfig, TrainConfig


class ConfigError(ValueError):
    """The run configuration is malformed or internally inconsistent."""


def derive_seed(master: int, tag: str) -> int:
    """Stage seed = master XOR little-endian first 8 bytes of sha256(tag)."""
    digest = hashlib.sha256(tag.encode()).digest()
    return (int(master) ^ int.from_bytes(digest[:8], "little")) & (2**64 - 1)


PROFILES: dict[str, dict[str, Any]] = {
    "task5": dict(num_tasks=5, num_nodes=2, hidden_dim=64,
                  q0=10, q1=50, q2=10, lam=0.5, k1=20, iterations=1000, budget=3),
    "task10": dict(num_tasks=10, num_nodes=2, hidden_dim=64,
                   q0=10, q1=100, q2=20, lam=0.5, k1=30, iterations=1000, budget=5),
    "task25": dict(num_tasks=25, num_nodes=3, hidden_dim=64,
                   q0=20, q1=100, q2=20, lam=0.5, k1=25, iterations=1000, budget=10),
}


@dataclass
class EvaluatorSpec:
    kind: str  # "synthetic" | "external"
    oracle: Optional[SyntheticOracleConfig] = None
    command: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "external"):
            raise ConfigError(f"unknown evaluator kind {self.kind!r}")
        if self.kind == "synthetic" and self.oracle is None:
            raise ConfigError("synthetic evaluator needs an oracle config")
        if self.kind == "external" and not self.command:
            raise ConfigError("external evaluator needs a command line")


@dataclass
class RunConfig:
    space: SearchSpaceConfig
    surrogate: SurrogateConfig
    train: TrainConfig
    sampler: SamplerConfig
    derivation: DerivationConfig
    evaluator: EvaluatorSpec
    baselines: Optional[BaselineScores]
    master_seed: int

    def __post_init__(self):
        s = self.space
        if (self.surrogate.num_tasks, self.surrogate.num_nodes) != (s.num_tasks, s.num_nodes):
            raise ConfigError("surrogate config disagrees with the search space shape")
        if tuple(self.surrogate.operations) != tuple(s.operations):
            raise ConfigError("surrogate operations disagree with the search space")
        if self.baselines is not None:
            missing = [t for t in range(s.num_tasks) if t not in self.baselines.scores]
            if missing:
                raise ConfigError(f"baselines missing task(s) {missing}")

    @property
    def mtl_seed(self) -> int:
        return derive_seed(self.master_seed, "mtl") % (2**31)

    def evaluation_fingerprint(self) -> str:
        payload = {
            "num_tasks": self.space.num_tasks,
            "num_nodes": self.space.num_nodes,
            "operations": [op.value for op in self.space.operations],
            "evaluator": _evaluator_payload(self.evaluator),
        }
        if self.evaluator.kind == "external":
            payload["mtl_seed"] = self.mtl_seed
        return _fingerprint(payload)

    def baselines_fingerprint(self) -> str:
        baselines = self.resolved_baselines()
        return _fingerprint(
            {"metric": baselines.metric,
             "scores": {str(t): s for t, s in sorted(baselines.scores.items())}}
        )

    def resolved_baselines(self) -> BaselineScores:
        if self.baselines is not None:
            return self.baselines
        if self.evaluator.kind == "synthetic":
            return self.evaluator.oracle.baselines or BaselineScores.uniform(self.space.num_tasks)
        raise ConfigError("external evaluator requires a baselines file")


def _fingerprint(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _evaluator_payload(spec: EvaluatorSpec) -> dict:
    if spec.kind == "synthetic":
        o = spec.oracle
        return {
            "kind": "synthetic",
            "seed": o.seed,
            "pair_affinity_scale": o.pair_affinity_scale,
            "op_affinity_scale": o.op_affinity_scale,
            "crowding_coeff": o.crowding_coeff,
            "crowding_knee": o.crowding_knee,
            "noise_std": o.noise_std,
        }
    return {"kind": "external", "command": spec.command}


def _parse_operations(labels) -> tuple[OperationKind, ...]:
    if labels is None:
        return DEFAULT_OPERATIONS
    by_label = {op.value: op for op in OperationKind}
    ops = []
    for label in labels:
        if label not in by_label:
            raise ConfigError(f"unknown operation label {label!r}")
        ops.append(by_label[label])
    return tuple(ops)


def _take(data: dict, key: str, default):
    return data[key] if key in data else default


def build_run_config(document: dict, base_dir: Path = Path(".")) -> RunConfig:
    """Assemble a RunConfig from a parsed JSON document."""
    if not isinstance(document, dict):
        raise ConfigError("config document must be a JSON object")
    profile_name = document.get("defaults_profile")
    profile: dict[str, Any] = {}
    if profile_name is not None:
        if profile_name not in PROFILES:
            raise ConfigError(
                f"unknown defaults_profile {profile_name!r}; choose from {sorted(PROFILES)}"
            )
        profile = PROFILES[profile_name]

    def setting(key: str, fallback=None):
        if key in document:
            return document[key]
        return profile.get(key, fallback)

    master_seed = int(document.get("master_seed", 0))
    num_tasks = setting("num_tasks")
    num_nodes = setting("num_nodes")
    if num_tasks is None or num_nodes is None:
        raise ConfigError("num_tasks and num_nodes are required (directly or via a profile)")
    operations = _parse_operations(document.get("operations"))
    try:
        space = SearchSpaceConfig(int(num_tasks), int(num_nodes), operations)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sur = dict(document.get("surrogate", {}))
    train = dict(document.get("train", {}))
    samp = dict(document.get("sampler", {}))
    deriv = dict(document.get("derivation", {}))

    baselines = None
    baselines_path = document.get("baselines")
    if baselines_path is not None:
        path = Path(baselines_path)
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"baselines file not found: {path}")
        baselines = BaselineScores.load(path)

    ev = document.get("evaluator", {"synthetic": {}})
    if not isinstance(ev, dict) or len(ev) != 1:
        raise ConfigError('evaluator must be {"synthetic": {...}} or {"external": {...}}')
    kind = next(iter(ev))
    try:
        if kind == "synthetic":
            body = dict(ev[kind])
            body.setdefault("seed", derive_seed(master_seed, "oracle") % (2**31))
            if baselines is not None:
                body["baselines"] = baselines
            oracle = SyntheticOracleConfig(**body)
            spec = EvaluatorSpec("synthetic", oracle=oracle)
        elif kind == "external":
            body = ev[kind]
            command = body if isinstance(body, str) else body.get("command")
            spec = EvaluatorSpec("external", command=command)
        else:
            raise ConfigError(f"unknown evaluator kind {kind!r}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad evaluator config: {exc}") from exc

    try:
        surrogate_cfg = SurrogateConfig(
            hidden_dim=int(_take(sur, "hidden_dim", setting("hidden_dim", 64))),
            num_tasks=space.num_tasks,
            num_nodes=space.num_nodes,
            operations=space.operations,
            head_hidden_dim=sur.get("head_hidden_dim"),
            dag_activation=_take(sur, "dag_activation", "tanh"),
        )
        train_cfg = TrainConfig(
            learning_rate=float(_take(train, "learning_rate", 5e-5)),
            batch_size=int(_take(train, "batch_size", 5)),
            epochs_per_update=int(_take(train, "epochs_per_update", 100)),
            beta1=float(_take(train, "beta1", 0.9)),
            beta2=float(_take(train, "beta2", 0.999)),
            eps=float(_take(train, "eps", 1e-8)),
            seed=derive_seed(master_seed, "train"),
        )
        sampler_cfg = SamplerConfig(
            q0=int(_take(samp, "q0", setting("q0", 10))),
            q1=int(_take(samp, "q1", setting("q1", 50))),
            q2=int(_take(samp, "q2", setting("q2", 10))),
            lam=float(_take(samp, "lambda", setting("lam", 0.5))),
            k1=int(_take(samp, "k1", setting("k1", 20))),
            variant=AcquisitionVariant(_take(samp, "variant", "mu+sigma")),
            candidate_cap=int(_take(samp, "candidate_cap", 512)),
            seed=derive_seed(master_seed, "sampler"),
            sigma_mode=_take(samp, "sigma_mode", "std"),
            retrain_from_scratch=bool(_take(samp, "retrain_from_scratch", False)),
        )
        derivation_cfg = DerivationConfig(
            budget=int(_take(deriv, "budget", setting("budget", 3))),
            iterations=int(_take(deriv, "iterations", setting("iterations", 1000))),
            restarts=int(_take(deriv, "restarts", 8)),
            seed=derive_seed(master_seed, "derivation"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration value: {exc}") from exc

    try:
        return RunConfig(
            space=space,
            surrogate=surrogate_cfg,
            train=train_cfg,
            sampler=sampler_cfg,
            derivation=derivation_cfg,
            evaluator=spec,
            baselines=baselines,
            master_seed=master_seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_run_config(path: Path, overrides: Optional[dict] = None) -> RunConfig:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if overrides:
        document = {**document, **{k: v for k, v in overrides.items() if v is not None}}
    return build_run_config(document, base_dir=path.parent)


def run_config_document(cfg: RunConfig) -> dict:
    """Canonical JSON document for a RunConfig (used to persist run dirs)."""
    doc: dict[str, Any] = {
        "num_tasks": cfg.space.num_tasks,
        "num_nodes": cfg.space.num_nodes,
        "operations": [op.value for op in cfg.space.operations],
        "master_seed": cfg.master_seed,
        "surrogate": {
            "hidden_dim": cfg.surrogate.hidden_dim,
            "head_hidden_dim": cfg.surrogate.head_hidden_dim,
            "dag_activation": cfg.surrogate.dag_activation,
        },
        "train": {
            "learning_rate": cfg.train.learning_rate,
            "batch_size": cfg.train.batch_size,
            "epochs_per_update": cfg.train.epochs_per_update,
            "beta1": cfg.train.beta1,
            "beta2": cfg.train.beta2,
            "eps": cfg.train.eps,
        },
        "sampler": {
            "q0": cfg.sampler.q0,
            "q1": cfg.sampler.q1,
            "q2": cfg.sampler.q2,
            "lambda": cfg.sampler.lam,
            "k1": cfg.sampler.k1,
            "variant": cfg.sampler.variant.value,
            "candidate_cap": cfg.sampler.candidate_cap,
            "sigma_mode": cfg.sampler.sigma_mode,
            "retrain_from_scratch": cfg.sampler.retrain_from_scratch,
        },
        "derivation": {
            "budget": cfg.derivation.budget,
            "iterations": cfg.derivation.iterations,
            "restarts": cfg.derivation.restarts,
        },
    }
    if cfg.evaluator.kind == "synthetic":
        body = _evaluator_payload(cfg.evaluator)
        body.pop("kind")
        doc["evaluator"] = {"synthetic": body}
    else:
        doc["evaluator"] = {"external": {"command": cfg.evaluator.command}}
    return doc
