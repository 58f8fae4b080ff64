"""Command line: search, derive, evaluate, report, bruteforce.

Every command owns one run directory at a time (lock file), refuses to
overwrite existing artifacts unless --force is given, and exits with 0 on
success, 2 on configuration errors, 3 on evaluator transport errors and 4 on
brute-force guard refusals.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    load_run_config,
    run_config_document,
)
from .derivation import (
    BruteForceResult,
    DerivationConfig,
    GuardRefusal,
    Population,
    brute_force_best,
    greedy_search,
    predicted_overall_gain,
    surrogate_scorer,
)
from .evaluation import (
    CacheMismatchError,
    CachedEvaluator,
    EvaluationCache,
    EvaluatorHandle,
    ExternalEvaluator,
    SyntheticEvaluator,
    SyntheticOracle,
    TransportError,
    overall_gain,
)
from .sampler import run_sampler
from .search_space import PointDecodeError, decode_point, encode_point
from .surrogate import load_params, predict_gains
from .run_dir import run_lock

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_GUARD = 4


def _fail_if_exists(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists; pass --force to overwrite")


def _load_config(args) -> RunConfig:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        overrides["sampler"] = {"variant": args.variant}
    if getattr(args, "evaluator", None) is not None:
        if args.evaluator == "synthetic":
            overrides["evaluator"] = {"synthetic": {}}
        elif args.evaluator.startswith("external:"):
            overrides["evaluator"] = {"external": {"command": args.evaluator.split(":", 1)[1]}}
        else:
            raise ConfigError(
                f"--evaluator must be 'synthetic' or 'external:<command>', got {args.evaluator!r}"
            )
    if args.config is None:
        raise ConfigError("--config is required")
    document = json.loads(Path(args.config).read_text())
    if "sampler" in overrides:
        document["sampler"] = {**document.get("sampler", {}), **overrides.pop("sampler")}
    document.update(overrides)
    from .config import build_run_config

    return build_run_config(document, base_dir=Path(args.config).parent)


@contextmanager
def _open_evaluator(cfg: RunConfig, cache: EvaluationCache):
    if cfg.evaluator.kind == "synthetic":
        oracle_cfg = cfg.evaluator.oracle
        yield CachedEvaluator(SyntheticEvaluator(SyntheticOracle(oracle_cfg, cfg.space)), cache)
        return
    baselines = cfg.resolved_baselines()
    handle = EvaluatorHandle(cfg.evaluator.command, cfg.space.num_tasks, metric=baselines.metric)
    try:
        yield CachedEvaluator(
            ExternalEvaluator(handle, baselines, seed=cfg.mtl_seed), cache
        )
    finally:
        handle.close()


def _open_cache(cfg: RunConfig, out_dir: Path) -> EvaluationCache:
    return EvaluationCache(
        cfg.space,
        path=out_dir / "cache.log",
        config_fingerprint=cfg.evaluation_fingerprint(),
        baselines_fingerprint=cfg.baselines_fingerprint(),
    )


def cmd_search(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = out_dir / "config.json"
    if not args.resume:
        _fail_if_exists(config_path, args.force)
        if args.force:
            for name in ("cache.log", "state.json", "history.jsonl",
                         "surrogate.manifest.json", "surrogate.params.bin"):
                (out_dir / name).unlink(missing_ok=True)
    with run_lock(out_dir):
        stored = run_config_document(cfg)
        if args.resume and config_path.exists():
            previous = json.loads(config_path.read_text())
            if previous != stored:
                raise ConfigError("--resume config does not match the stored run config")
        config_path.write_text(json.dumps(stored, indent=2, sort_keys=True) + "\n")
        cache = _open_cache(cfg, out_dir)
        try:
            with _open_evaluator(cfg, cache) as evaluator:
                def progress(info: dict) -> None:
                    print(
                        f"round {info['round']:3d}: |D|={info['dataset_size']:4d} "
                        f"evaluations={info['evaluations']:4d} "
                        f"train_mae={info['train_mae']:.6f}"
                    )

                state = run_sampler(
                    cfg.sampler,
                    cfg.space,
                    cfg.surrogate,
                    cfg.train,
                    evaluator,
                    out_dir=out_dir,
                    resume=args.resume,
                    stop_after_round=args.stop_after_round,
                    progress=progress,
                )
        finally:
            cache.close()
    print(f"search complete: {state.evaluations} evaluations, |D|={len(state.dataset)}")
    print(f"checkpoint: {out_dir}")
    return EXIT_OK


def _build_report(cfg: RunConfig, params, population: Population) -> dict:
    scorer = surrogate_scorer(params)
    members = []
    per_member_gains = []
    for point in population.members:
        gains = scorer(point)
        per_member_gains.append(gains)
        members.append(
            {
                "point": encode_point(point),
                "predicted_gains": {str(t): g for t, g in sorted(gains.items())},
            }
        )
    per_task = {}
    for idx, gains in enumerate(per_member_gains):
        for t, g in gains.items():
            if str(t) not in per_task or g > per_task[str(t)]["predicted_gain"]:
                per_task[str(t)] = {
                    "member": members[idx]["point"],
                    "predicted_gain": g,
                }
    return {
        "budget": cfg.derivation.budget,
        "members": members,
        "per_task": per_task,
        "predicted_overall_gain": predicted_overall_gain(
            params, population, cfg.space.num_tasks
        ),
    }


def cmd_derive(args) -> int:
    out_dir = Path(args.out)
    config_path = out_dir / "config.json"
    if not config_path.exists():
        raise ConfigError(f"no run config at {config_path}; run `search` first")
    document = json.loads(config_path.read_text())
    deriv = dict(document.get("derivation", {}))
    for key, value in (("budget", args.budget), ("iterations", args.iterations),
                       ("restarts", args.restarts)):
        if value is not None:
            deriv[key] = value
    document["derivation"] = deriv
    if args.seed is not None:
        document["master_seed"] = args.seed
    from .config import build_run_config

    cfg = build_run_config(document, base_dir=out_dir)
    report_path = out_dir / "derivation_report.json"
    _fail_if_exists(report_path, args.force)
    manifest = out_dir / "surrogate.manifest.json"
    if not manifest.exists():
        raise ConfigError(f"no surrogate checkpoint in {out_dir}")
    params = load_params(manifest, out_dir / "surrogate.params.bin", cfg.surrogate)
    rng = np.random.Generator(np.random.PCG64(cfg.derivation.seed))
    population = greedy_search(params, cfg.derivation, cfg.space, rng)
    report = _build_report(cfg, params, population)
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"derived {len(population.members)} group(s); "
          f"predicted overall gain {report['predicted_overall_gain']:.6f}")
    print(f"report: {report_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out)
    report_path = out_dir / "derivation_report.json"
    if not report_path.exists():
        raise ConfigError(f"no derivation report at {report_path}; run `derive` first")
    document = json.loads((out_dir / "config.json").read_text())
    from .config import build_run_config

    cfg = build_run_config(document, base_dir=out_dir)
    final_path = out_dir / "final_eval.json"
    _fail_if_exists(final_path, args.force)
    report = json.loads(report_path.read_text())
    points = [decode_point(m["point"], cfg.space) for m in report["members"]]
    cache = _open_cache(cfg, out_dir)
    try:
        with _open_evaluator(cfg, cache) as evaluator:
            if args.fresh:
                records = evaluator.base.evaluate(points)
            else:
                records = evaluator.evaluate(points)
    finally:
        cache.close()
    failed = [encode_point(points[i]) for i, r in enumerate(records) if r is None]
    if failed:
        raise TransportError(f"evaluation failed for: {failed}")
    baselines = cfg.resolved_baselines()
    realized = overall_gain(records, cfg.space.num_tasks)
    best: dict[int, tuple[float, float, str]] = {}
    for record in records:
        for t, g in record.gains.items():
            if t not in best or g > best[t][0]:
                best[t] = (g, record.metrics[t], encode_point(record.point))
    rows = [
        {
            "task": t,
            "baseline": baselines.scores[t],
            "metric": best[t][1],
            "gain": best[t][0],
            "member": best[t][2],
        }
        for t in range(cfg.space.num_tasks)
    ]
    payload = {
        "realized_overall_gain": realized,
        "per_task": rows,
        "members": [encode_point(p) for p in points],
    }
    final_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"{'task':>4} {'baseline':>9} {'metric':>9} {'gain':>9}")
    for row in rows:
        print(f"{row['task']:>4} {row['baseline']:>9.4f} {row['metric']:>9.4f} "
              f"{row['gain']:>9.4f}")
    print(f"realized overall gain: {realized:.6f}")
    return EXIT_OK


def cmd_bruteforce(args) -> int:
    cfg = _load_config(args)
    if cfg.evaluator.kind != "synthetic":
        raise ConfigError("bruteforce runs against the synthetic oracle only")
    oracle = SyntheticOracle(cfg.evaluator.oracle, cfg.space)
    result = brute_force_best(
        lambda p: oracle.evaluate(p).gains, cfg.space, cfg.derivation.budget
    )
    payload = {
        "budget": cfg.derivation.budget,
        "optimum_overall_gain": result.score,
        "members": [encode_point(p) for p in result.population.members],
        "per_task": {
            str(t): {"point": encode_point(p), "gain": g}
            for t, (p, g) in sorted(result.per_task.items())
        },
    }
    if args.out is not None:
        out_path = Path(args.out)
        _fail_if_exists(out_path, args.force)
        out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"optimum report: {out_path}")
    print(f"true optimum overall gain: {result.score:.6f}")
    for t in sorted(result.per_task):
        point, gain = result.per_task[t]
        print(f"task {t}: gain {gain:.6f} via {encode_point(point)}")
    return EXIT_OK


def _write_csv(path: Path, header: list[str], rows: list[list], force: bool) -> None:
    _fail_if_exists(path, force)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_report(args) -> int:
    run_dirs = [Path(d) for d in args.runs]
    out_dir = Path(args.out) if args.out else run_dirs[0] / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    notes: list[str] = []

    primary = run_dirs[0]
    history_path = primary / "history.jsonl"
    if history_path.exists():
        rows = []
        for line in history_path.read_text().splitlines():
            info = json.loads(line)
            rows.append([info["round"], info["dataset_size"], info["evaluations"],
                         info["train_mae"]])
        _write_csv(out_dir / "evaluations_over_rounds.csv",
                   ["round", "dataset_size", "evaluations", "train_mae"], rows, args.force)
    else:
        notes.append(f"missing {history_path}; skipped evaluations_over_rounds.csv")

    final_path = primary / "final_eval.json"
    if final_path.exists():
        final = json.loads(final_path.read_text())
        rows = [[r["task"], r["baseline"], r["metric"], r["gain"]]
                for r in final["per_task"]]
        _write_csv(out_dir / "per_task_gains.csv",
                   ["task", "baseline", "metric", "gain"], rows, args.force)
    else:
        notes.append(f"missing {final_path}; skipped per_task_gains.csv")

    if len(run_dirs) > 1:
        rows = []
        for run in run_dirs:
            try:
                document = json.loads((run / "config.json").read_text())
                variant = document.get("sampler", {}).get("variant", "mu+sigma")
                final = json.loads((run / "final_eval.json").read_text())
                state = json.loads((run / "state.json").read_text())
                rows.append([run.name, variant, final["realized_overall_gain"],
                             state["evaluations"]])
            except (OSError, json.JSONDecodeError, KeyError) as exc:
                notes.append(f"skipping {run}: {exc}")
        if rows:
            _write_csv(out_dir / "variant_comparison.csv",
                       ["run", "variant", "realized_overall_gain", "evaluations"],
                       rows, args.force)

    for note in notes:
        print(f"note: {note}")
    print(f"reports written to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupnas",
        description="Joint task-grouping and shared-encoder architecture search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="run config JSON")
            p.add_argument("--seed", type=int, default=None, help="override master seed")
            p.add_argument("--evaluator", default=None,
                           help='"synthetic" or \'external:<command>\'')
        p.add_argument("--force", action="store_true",
                       help="overwrite existing artifacts")

    p = sub.add_parser("search", help="run warm start + progressive sampling")
    common(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", action="store_true", help="continue from checkpoint")
    p.add_argument("--variant", choices=["mu+sigma", "mu", "sigma"], default=None)
    p.add_argument("--stop-after-round", type=int, default=None,
                   help="checkpoint and stop after this round")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("derive", help="greedy-search the final groups")
    p.add_argument("--out", required=True, help="run directory with a checkpoint")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    common(p, needs_config=False)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("evaluate", help="ground-truth the derived groups")
    p.add_argument("--out", required=True, help="run directory with a report")
    p.add_argument("--fresh", action="store_true",
                   help="re-run ground truth even for cached points")
    common(p, needs_config=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bruteforce", help="exact optimum on desk-scale spaces")
    common(p)
    p.add_argument("--out", default=None, help="optional report path")
    p.set_defaults(func=cmd_bruteforce)

    p = sub.add_parser("report", help="emit CSV summaries for run directories")
    p.add_argument("runs", nargs="+", help="one or more run directories")
    p.add_argument("--out", default=None, help="output directory (default <run>/reports)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CacheMismatchError, PointDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as exc:
        print(f"evaluator transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except GuardRefusal as exc:
        print(f"guard refusal: {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
