"""Run-directory ownership: a pid lock file guards against concurrent writers."""

from __future__ import annotations

import os
from contextlib import contextmanager
from pathlib import Path


class RunDirLocked(RuntimeError):
    """Another live process owns the run directory."""


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


@contextmanager
def run_lock(out_dir: Path):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / ".lock"
    if lock_path.exists():
        try:
            owner = int(lock_path.read_text().strip())
        except ValueError:
            owner = -1
        if owner > 0 and owner != os.getpid() and _pid_alive(owner):
            raise RunDirLocked(f"{out_dir} is locked by live process {owner}")
        lock_path.unlink()  # stale lock from a dead process
    lock_path.write_text(str(os.getpid()))
    try:
        yield
    finally:
        lock_path.unlink(missing_ok=True)
