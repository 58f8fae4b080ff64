"""Ground-truth evaluation: gain arithmetic, synthetic oracle, external workers, cache.

A ground-truth evaluation trains (or simulates training) one shared model on a
task combination and reports one metric per task; gains are the relative
improvement of those metrics over per-task single-model baselines. Because
real evaluations are expensive, every record is cached in an append-only log
keyed by the canonical point encoding.
"""

from __future__ import annotations

import hashlib
import json
import logging
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .search_space import (
    SearchPoint,
    SearchSpaceConfig,
    decode_point,
    edge_list,
    encode_point,
)

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """A baseline or configuration precondition is violated."""


class CoverageError(ValueError):
    """A set of records does not cover every task."""


class TransportError(RuntimeError):
    """The external evaluator process failed at the transport level."""


class CacheMismatchError(RuntimeError):
    """An on-disk cache log belongs to a different configuration."""


@dataclass(frozen=True)
class BaselineScores:
    """Per-task single-model scores s_i for one metric; all in (0, 1]."""

    metric: str
    scores: dict[int, float]

    def __post_init__(self):
        object.__setattr__(
            self, "scores", {int(t): float(s) for t, s in self.scores.items()}
        )
        for t, s in self.scores.items():
            if not 0.0 < s <= 1.0:
                raise ConfigurationError(f"baseline for task {t} must be in (0, 1], got {s}")

    @classmethod
    def uniform(cls, num_tasks: int, value: float = 0.5, metric: str = "avp"):
        return cls(metric, {t: value for t in range(num_tasks)})

    @classmethod
    def load(cls, path: Path) -> "BaselineScores":
        data = json.loads(Path(path).read_text())
        return cls(data["metric"], {int(t): s for t, s in data["scores"].items()})

    def save(self, path: Path) -> None:
        payload = {"metric": self.metric, "scores": {str(t): s for t, s in sorted(self.scores.items())}}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@dataclass
class EvaluationRecord:
    """Outcome of one ground-truth evaluation.

    `seq` is a logical timestamp: the record's position in the cache log,
    assigned on store (wall-clock stamps would break byte-reproducible logs).
    """

    point: SearchPoint
    metrics: dict[int, float]
    gains: dict[int, float]
    source: str  # "synthetic" | "external"
    seq: int = -1

    def __post_init__(self):
        members = set(self.point.combination.members)
        if set(self.metrics) != members or set(self.gains) != members:
            raise ValueError("metrics and gains must be keyed exactly by the combination")


def compute_gains(
    metrics: Mapping[int, float], baselines: BaselineScores
) -> dict[int, float]:
    """Relative gain per task: (metric - baseline) / baseline."""
    gains = {}
    for t in sorted(metrics):
        s = baselines.scores.get(int(t))
        if s is None:
            raise ConfigurationError(f"no baseline score for task {t}")
        if s <= 0:
            raise ConfigurationError(f"baseline for task {t} must be > 0, got {s}")
        gains[int(t)] = (metrics[t] - s) / s
    return gains


def overall_gain(records: Sequence[EvaluationRecord], num_tasks: int) -> float:
    """Mean over tasks of each task's best gain across the records."""
    best: dict[int, float] = {}
    for rec in records:
        for t, g in rec.gains.items():
            if t not in best or g > best[t]:
                best[t] = g
    missing = [t for t in range(num_tasks) if t not in best]
    if missing:
        raise CoverageError(f"no record covers task(s) {missing}")
    return float(np.mean([best[t] for t in range(num_tasks)]))


@dataclass
class SyntheticOracleConfig:
    seed: int
    pair_affinity_scale: float = 0.05
    op_affinity_scale: float = 0.03
    crowding_coeff: float = 0.01
    crowding_knee: int = 3
    noise_std: float = 0.0
    baselines: Optional[BaselineScores] = None

    def __post_init__(self):
        if self.pair_affinity_scale < 0 or self.op_affinity_scale < 0:
            raise ValueError("affinity scales must be >= 0")
        if self.crowding_coeff < 0:
            raise ValueError("crowding_coeff must be >= 0")
        if self.crowding_knee < 1:
            raise ValueError("crowding_knee must be >= 1")


class SyntheticOracle:
    """Deterministic stand-in for the expensive ground-truth evaluation.

    Per-task gain = mean pairwise affinity with the other selected tasks
    + mean per-edge operation affinity - a crowding penalty on large
    combinations (+ optional per-point gaussian noise). The affinity tables
    are drawn once from a PCG64 generator seeded with `cfg.seed`, so records
    are reproducible across processes and platforms.
    """

    source = "synthetic"

    def __init__(self, cfg: SyntheticOracleConfig, space: SearchSpaceConfig):
        self.cfg = cfg
        self.space = space
        self.baselines = cfg.baselines or BaselineScores.uniform(space.num_tasks)
        if sorted(self.baselines.scores) != list(range(space.num_tasks)):
            raise ConfigurationError("baselines must cover tasks 0..N-1 exactly")
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        n = space.num_tasks
        draw = rng.uniform(-cfg.pair_affinity_scale, cfg.pair_affinity_scale, size=(n, n))
        self.pair_affinity = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                self.pair_affinity[i, j] = self.pair_affinity[j, i] = draw[i, j]
        self.op_affinity = rng.uniform(
            -cfg.op_affinity_scale, cfg.op_affinity_scale,
            size=(len(space.operations), n),
        )

    def _noise(self, point: SearchPoint, k: int) -> np.ndarray:
        if self.cfg.noise_std == 0:
            return np.zeros(k)
        digest = hashlib.sha256(
            f"{self.cfg.seed}|noise|{encode_point(point)}".encode()
        ).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
        return rng.normal(0.0, self.cfg.noise_std, size=k)

    def evaluate(self, point: SearchPoint) -> EvaluationRecord:
        cfg = self.cfg
        members = point.combination.members
        edge_codes = [
            self.space.op_index(point.architecture.op(i, p))
            for i, p in edge_list(point.architecture.num_nodes)
        ]
        crowd = cfg.crowding_coeff * max(0, len(members) - cfg.crowding_knee) ** 2
        noise = self._noise(point, len(members))
        gains = {}
        metrics = {}
        for j, t in enumerate(members):
            partners = [u for u in members if u != t]
            pair = float(np.mean([self.pair_affinity[t, u] for u in partners])) if partners else 0.0
            arch = float(np.mean([self.op_affinity[c, t] for c in edge_codes]))
            g = pair + arch - crowd + float(noise[j])
            gains[t] = g
            metrics[t] = self.baselines.scores[t] * (1.0 + g)
        return EvaluationRecord(point, metrics, gains, source=self.source)


def synthetic_evaluate(
    cfg: SyntheticOracleConfig, point: SearchPoint, space: SearchSpaceConfig
) -> EvaluationRecord:
    """One-shot form of SyntheticOracle.evaluate (same tables for the same seed)."""
    return SyntheticOracle(cfg, space).evaluate(point)


def _architecture_payload(point: SearchPoint) -> dict:
    arch = point.architecture
    return {
        "nodes": arch.num_nodes,
        "edges": [
            {"src": src, "dst": dst, "op": arch.op(src, dst).value}
            for src, dst in edge_list(arch.num_nodes)
        ],
    }


_EOF = object()


class EvaluatorHandle:
    """Owns a line-delimited JSON evaluator subprocess (requests on stdin,
    responses on stdout, handshake first). A reader thread feeds a queue so
    reads can time out without fighting stdio buffering."""

    def __init__(
        self,
        command: str | Sequence[str],
        num_tasks: int,
        metric: str = "avp",
        timeout: float = 600.0,
    ):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()

        def pump(stream, sink: queue.Queue):
            for line in stream:
                sink.put(line)
            sink.put(_EOF)

        self._reader = threading.Thread(
            target=pump, args=(self.proc.stdout, self._lines), daemon=True
        )
        self._reader.start()
        self._next_id = 0
        hello = self._read_json()
        if (
            hello.get("type") != "hello"
            or hello.get("protocol") != 1
            or hello.get("num_tasks") != num_tasks
            or hello.get("metric") != metric
        ):
            self.close()
            raise TransportError(
                f"bad handshake: {hello!r} (wanted protocol 1, num_tasks {num_tasks}, "
                f"metric {metric!r})"
            )

    def _read_line(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(f"evaluator timed out after {self.timeout}s") from None
        if line is _EOF:
            raise TransportError(
                f"evaluator exited (code {self.proc.poll()}) with requests pending"
            )
        return line

    def _read_json(self) -> dict:
        line = self._read_line()
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise TransportError(f"malformed evaluator response line: {line!r}") from exc

    def _write(self, obj: dict) -> None:
        try:
            self.proc.stdin.write(json.dumps(obj, sort_keys=True) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise TransportError("evaluator stdin closed") from exc

    def fresh_id(self) -> str:
        self._next_id += 1
        return f"r-{self._next_id:06d}"

    def send_request(self, point: SearchPoint, seed: int) -> str:
        rid = self.fresh_id()
        self._write(
            {
                "id": rid,
                "tasks": list(point.combination.members),
                "architecture": _architecture_payload(point),
                "seed": seed,
            }
        )
        return rid

    def read_response(self) -> dict:
        resp = self._read_json()
        if "id" not in resp:
            raise TransportError(f"response without id: {resp!r}")
        return resp

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self._write({"type": "shutdown"})
            except TransportError:
                pass
            try:
                self.proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_evaluate(
    handle: EvaluatorHandle,
    requests: Sequence[SearchPoint],
    baselines: BaselineScores,
    seed: int = 0,
    retries: int = 2,
) -> list[Optional[EvaluationRecord]]:
    """Evaluate points through an external process; results in request order.

    Per-point error responses are retried up to `retries` times, then the point
    is reported as None. Transport failures raise and are retryable by the
    caller.
    """
    results: list[Optional[EvaluationRecord]] = [None] * len(requests)
    attempts = {i: 0 for i in range(len(requests))}
    pending: dict[str, int] = {}
    for i, point in enumerate(requests):
        pending[handle.send_request(point, seed)] = i
    while pending:
        resp = handle.read_response()
        rid = resp["id"]
        if rid not in pending:
            raise TransportError(f"response for unknown id {rid!r}: {resp!r}")
        i = pending.pop(rid)
        point = requests[i]
        if "error" in resp:
            attempts[i] += 1
            if attempts[i] <= retries:
                pending[handle.send_request(point, seed)] = i
            else:
                log.warning(
                    "dropping %s after %d failed attempts: %s",
                    encode_point(point), attempts[i], resp["error"],
                )
            continue
        try:
            metrics = {int(t): float(m) for t, m in resp["metrics"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed metrics in response: {resp!r}") from exc
        if set(metrics) != set(point.combination.members):
            raise TransportError(
                f"response metrics keyed by {sorted(metrics)}, expected "
                f"{list(point.combination.members)}"
            )
        results[i] = EvaluationRecord(
            point, metrics, compute_gains(metrics, baselines), source="external"
        )
    return results


class SyntheticEvaluator:
    """Evaluator facade over a SyntheticOracle (never fails)."""

    def __init__(self, oracle: SyntheticOracle):
        self.oracle = oracle

    def evaluate(self, points: Sequence[SearchPoint]) -> list[Optional[EvaluationRecord]]:
        return [self.oracle.evaluate(p) for p in points]


class ExternalEvaluator:
    def __init__(
        self,
        handle: EvaluatorHandle,
        baselines: BaselineScores,
        seed: int = 0,
        retries: int = 2,
    ):
        self.handle = handle
        self.baselines = baselines
        self.seed = seed
        self.retries = retries

    def evaluate(self, points: Sequence[SearchPoint]) -> list[Optional[EvaluationRecord]]:
        return external_evaluate(
            self.handle, points, self.baselines, seed=self.seed, retries=self.retries
        )


class EvaluationCache:
    """In-memory record map backed by an append-only JSONL log.

    The first log line is a header carrying fingerprints of the evaluation
    configuration and the baselines; reopening with different fingerprints is
    an explicit error. Corrupt record lines are skipped with a warning.
    """

    def __init__(
        self,
        space: SearchSpaceConfig,
        path: Optional[Path] = None,
        config_fingerprint: str = "",
        baselines_fingerprint: str = "",
    ):
        self.space = space
        self.path = Path(path) if path is not None else None
        self.config_fingerprint = config_fingerprint
        self.baselines_fingerprint = baselines_fingerprint
        self._records: dict[str, EvaluationRecord] = {}
        self._next_seq = 0
        self._lock = threading.Lock()
        self._fh = None
        if self.path is not None and self.path.exists():
            self._load()
        if self.path is not None:
            fresh = not self.path.exists()
            self._fh = self.path.open("a")
            if fresh:
                self._fh.write(json.dumps(self._header(), sort_keys=True) + "\n")
                self._fh.flush()

    def _header(self) -> dict:
        return {
            "type": "header",
            "version": 1,
            "config_fingerprint": self.config_fingerprint,
            "baselines_fingerprint": self.baselines_fingerprint,
        }

    def _load(self) -> None:
        lines = self.path.read_text().splitlines()
        if not lines:
            return
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise CacheMismatchError(f"unreadable cache header in {self.path}") from exc
        if header.get("type") != "header":
            raise CacheMismatchError(f"cache log {self.path} has no header line")
        for key, want in [
            ("config_fingerprint", self.config_fingerprint),
            ("baselines_fingerprint", self.baselines_fingerprint),
        ]:
            if header.get(key) != want:
                raise CacheMismatchError(
                    f"cache log {self.path} was written under a different "
                    f"configuration ({key} mismatch)"
                )
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                point = decode_point(data["point"], self.space)
                record = EvaluationRecord(
                    point=point,
                    metrics={int(t): float(m) for t, m in data["metrics"].items()},
                    gains={int(t): float(g) for t, g in data["gains"].items()},
                    source=data["source"],
                    seq=int(data["seq"]),
                )
            except Exception as exc:  # corrupt line: skip, never fatal
                log.warning("skipping corrupt cache line %d in %s: %s", lineno, self.path, exc)
                continue
            self._records[data["point"]] = record
            self._next_seq = max(self._next_seq, record.seq + 1)

    def lookup(self, point: SearchPoint) -> Optional[EvaluationRecord]:
        return self._records.get(encode_point(point))

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[EvaluationRecord]:
        return sorted(self._records.values(), key=lambda r: r.seq)

    def store(self, record: EvaluationRecord) -> EvaluationRecord:
        with self._lock:
            key = encode_point(record.point)
            if record.seq < 0:
                record.seq = self._next_seq
            self._next_seq = max(self._next_seq, record.seq + 1)
            self._records[key] = record
            if self._fh is not None:
                line = {
                    "seq": record.seq,
                    "point": key,
                    "source": record.source,
                    "metrics": {str(t): m for t, m in sorted(record.metrics.items())},
                    "gains": {str(t): g for t, g in sorted(record.gains.items())},
                }
                self._fh.write(json.dumps(line, sort_keys=True) + "\n")
                self._fh.flush()
        return record

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def cache_lookup(cache: EvaluationCache, point: SearchPoint) -> Optional[EvaluationRecord]:
    return cache.lookup(point)


def cache_store(cache: EvaluationCache, record: EvaluationRecord) -> EvaluationRecord:
    return cache.store(record)


class CachedEvaluator:
    """Cache-aware evaluator wrapper; never re-evaluates a cached point."""

    def __init__(self, base, cache: EvaluationCache):
        self.base = base
        self.cache = cache
        self.evaluations_performed = 0
        self.cache_hits = 0

    def lookup(self, point: SearchPoint) -> Optional[EvaluationRecord]:
        return self.cache.lookup(point)

    def evaluate(self, points: Sequence[SearchPoint]) -> list[Optional[EvaluationRecord]]:
        results: list[Optional[EvaluationRecord]] = [None] * len(points)
        misses = []
        for i, point in enumerate(points):
            hit = self.cache.lookup(point)
            if hit is not None:
                results[i] = hit
                self.cache_hits += 1
            else:
                misses.append(i)
        if misses:
            fresh = self.base.evaluate([points[i] for i in misses])
            for i, record in zip(misses, fresh):
                if record is not None:
                    self.cache.store(record)
                    self.evaluations_performed += 1
                results[i] = record
        return results
