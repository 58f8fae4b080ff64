"""Line-delimited JSON serving loop: hello, then answer requests until shutdown.

Requests carry (id, tasks, architecture, seed); responses carry (id, metrics)
or (id, error). Malformed input becomes an error response, never a crash.
With several workers, responses may leave out of request order; the id is the
correlation key.
"""

from __future__ import annotations

import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

from .data import SyntheticMTLDataset
from .model import ArchitectureSpec
from .training import TrainSettings, evaluate_architecture


def _handle_request(request: dict, dataset: SyntheticMTLDataset,
                    settings: TrainSettings) -> dict:
    rid = request.get("id")
    try:
        tasks = [int(t) for t in request["tasks"]]
        if not tasks:
            raise ValueError("empty task list")
        bad = [t for t in tasks if not 0 <= t < dataset.config.num_tasks]
        if bad:
            raise ValueError(f"tasks out of range: {bad}")
        arch = ArchitectureSpec.from_wire(request["architecture"])
        seed = int(request.get("seed", 0))
        metrics = evaluate_architecture(arch, tasks, dataset, seed, settings)
        return {"id": rid, "metrics": {str(t): metrics[t] for t in tasks}}
    except Exception as exc:  # per-request failures must stay in-band
        return {"id": rid, "error": f"{type(exc).__name__}: {exc}"}


def serve(dataset: SyntheticMTLDataset, settings: TrainSettings,
          workers: int = 1, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    write_lock = threading.Lock()

    def emit(obj: dict) -> None:
        with write_lock:
            stdout.write(json.dumps(obj, sort_keys=True) + "\n")
            stdout.flush()

    emit({
        "type": "hello",
        "protocol": 1,
        "num_tasks": dataset.config.num_tasks,
        "metric": "avp",
    })

    pool = ThreadPoolExecutor(max_workers=max(1, workers)) if workers > 1 else None
    try:
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except json.JSONDecodeError as exc:
                emit({"id": None, "error": f"malformed request line: {exc}"})
                continue
            if request.get("type") == "shutdown":
                break
            if pool is not None:
                pool.submit(lambda req=request: emit(_handle_request(req, dataset, settings)))
            else:
                emit(_handle_request(request, dataset, settings))
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    return 0
