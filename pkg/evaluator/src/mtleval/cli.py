"""Command line: `mtleval serve` answers evaluation requests on stdin/stdout;
`mtleval baselines` writes the single-task backbone scores file."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .baselines import make_baselines
from .data import DatasetConfig, generate_dataset
from .protocol import serve
from .training import TrainSettings


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--num-tasks", type=int, required=True)
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--correlation", type=float, default=0.8)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seq-len", type=int, default=32)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--test-split", action="store_true",
                   help="score on the test split instead of validation")


def _dataset(args):
    return generate_dataset(DatasetConfig(
        num_tasks=args.num_tasks,
        seed=args.seed,
        num_samples=args.samples,
        seq_len=args.seq_len,
        feature_dim=args.feature_dim,
        correlation=args.correlation,
    ))


def _settings(args) -> TrainSettings:
    return TrainSettings(max_epochs=args.epochs, use_test_split=args.test_split)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mtleval")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="answer evaluation requests over stdio")
    _add_data_flags(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(command="serve")

    p = sub.add_parser("baselines", help="write single-task backbone scores")
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(command="baselines")

    args = parser.parse_args(argv)
    dataset = _dataset(args)
    if args.command == "serve":
        return serve(dataset, _settings(args), workers=args.workers)
    scores = make_baselines(dataset, Path(args.out), seed=args.seed, settings=_settings(args))
    for task in sorted(scores):
        print(f"task {task}: avp {scores[task]:.4f}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
