"""Command-line entry point: ``retemp {stats,synth,train,eval,ensemble}``.

Results go to stdout as JSON. The resolved configuration and per-epoch events
go to stderr as JSON lines (and to a log file for ``train``). Errors are a
single ``error: ...`` line on stderr with exit code 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from retemp.checkpoint import check_dataset, load_checkpoint, save_checkpoint
from retemp.config import (ABLATIONS, ATTENTION_MODES, COMPOSITIONS, DECODERS, PRECISIONS,
                           TrainConfig)
from retemp.data import PATTERNS, SPLITS, compute_statistics, generate_synthetic, load_dataset, \
    write_dataset
from retemp.errors import ConfigError, RetempError
from retemp.model import ReTemp
from retemp.train import POOLINGS, TemporalGraph, evaluate, evaluate_many, fit

_CHOICES = {"decoder": DECODERS, "composition": COMPOSITIONS, "precision": PRECISIONS,
            "attention": ATTENTION_MODES}
_POSITIVE = {"dim", "history_length", "epochs", "patience", "channels", "kernel_size"}
_METRICS = ("mrr", "hits1", "hits3", "hits10")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"usage error: {self.prog}: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _emit(event: str, log=None, **payload) -> None:
    line = json.dumps({"event": event, **payload}, sort_keys=True)
    print(line, file=sys.stderr)
    if log is not None:
        log.write(line + "\n")
        log.flush()


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig key (kebab-case); unset flags leave file/default values."""
    p.add_argument("--config", type=Path, help="JSON file with TrainConfig keys")
    p.add_argument("--seed", type=int, action="append", help="repeatable; one run per seed")
    p.add_argument("--ablate", action="append", choices=ABLATIONS, default=argparse.SUPPRESS)
    for f in fields(TrainConfig):
        if f.name in ("seed", "ablate"):
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = type(f.default)
        if kind is bool:
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        elif f.name in _POSITIVE:
            p.add_argument(flag, type=_positive_int, default=argparse.SUPPRESS)
        else:
            p.add_argument(flag, type=kind, choices=_CHOICES.get(f.name),
                           default=argparse.SUPPRESS)


def resolve_config(args: argparse.Namespace) -> tuple[TrainConfig, list[int]]:
    """Defaults, then the config file, then explicit flags."""
    values: dict = {}
    if args.config is not None:
        try:
            values = json.loads(args.config.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc.msg})") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        TrainConfig.from_dict(values)  # rejects unknown keys early
    keys = {f.name for f in fields(TrainConfig)} - {"seed"}
    values.update({k: v for k, v in vars(args).items() if k in keys})
    seeds = args.seed or [values.get("seed", TrainConfig.seed)]
    values["seed"] = seeds[0]
    return TrainConfig.from_dict(values), seeds


# ---------------------------------------------------------------- commands


def cmd_stats(args) -> int:
    stats = compute_statistics(load_dataset(args.data))
    text = stats.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_synth(args) -> int:
    ds = generate_synthetic(args.seed, args.entities, args.relations, args.timestamps,
                            args.pattern, args.facts_per_snapshot)
    write_dataset(ds, args.out)
    _print_json({"out": str(args.out), "name": ds.name,
                 "facts": {s: len(ds.split(s)) for s in SPLITS}})
    return 0


def cmd_train(args) -> int:
    config, seeds = resolve_config(args)
    dataset = load_dataset(args.data)
    graph = TemporalGraph.from_dataset(dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in seeds:
        cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
        with open(out / f"seed-{seed}.log.jsonl", "w") as log:
            _emit("config", log, config=cfg.to_dict(), config_digest=cfg.digest(),
                  data=str(args.data), seeds=seeds)
            model = ReTemp(dataset.num_entities, dataset.num_relations, dataset.num_snapshots, cfg)
            counts = model.parameter_counts()
            _emit("parameters", log, **{k: v for k, v in counts.items() if k != "notes"})
            ckpt = fit(model, graph, log=lambda e: _emit(e.pop("event"), log, seed=seed, **e))
            path = out / f"seed-{seed}.ckpt"
            save_checkpoint(ckpt, path)
            run = {"seed": seed, "checkpoint": str(path), "best_epoch": ckpt.epoch,
                   "valid_mrr": max(ckpt.val_history)}
            if len(dataset.test):
                run["test"] = evaluate(ckpt.to_model(), graph, "test").to_dict()
            _emit("run", log, **run)
        runs.append(run)
    summary = {"config": config.to_dict(), "seeds": seeds, "runs": runs}
    tested = [r["test"] for r in runs if "test" in r]
    if tested:
        summary["mean_test"] = {m: float(np.mean([t[m] for t in tested])) for m in _METRICS}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _print_json(summary)
    return 0


def _load_for(path, dataset):
    ckpt = load_checkpoint(path)
    check_dataset(ckpt, dataset.num_entities, dataset.num_relations, dataset.num_snapshots)
    return ckpt


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    ckpt = _load_for(args.checkpoint, dataset)
    _emit("config", config=ckpt.config.to_dict(), config_digest=ckpt.config.digest(),
          checkpoint=str(args.checkpoint), split=args.split)
    report = evaluate(ckpt.to_model(), TemporalGraph.from_dataset(dataset), args.split)
    _print_json({**report.to_dict(), "checkpoint": str(args.checkpoint)})
    return 0


def cmd_ensemble(args) -> int:
    dataset = load_dataset(args.data)
    ckpts = [_load_for(p, dataset) for p in args.checkpoints]
    models = [c.to_model() for c in ckpts]
    provenance = [{"checkpoint": str(p), "config_digest": c.config.digest(),
                   "history_length": c.config.history_length, "seed": c.config.seed}
                  for p, c in zip(args.checkpoints, ckpts)]
    _emit("config", pooling=args.pooling, split=args.split, normalized=not args.raw_scores,
          models=provenance)
    report = evaluate_many(models, TemporalGraph.from_dataset(dataset), args.split,
                           pooling=args.pooling, normalize=not args.raw_scores)
    _print_json({**report.to_dict(), "pooling": args.pooling, "normalized": not args.raw_scores,
                 "models": provenance})
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="retemp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="dataset statistics as JSON")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="write a synthetic dataset in the text format")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--pattern", choices=PATTERNS, default="cyclic-deterministic")
    p.add_argument("--entities", type=_positive_int, default=20)
    p.add_argument("--relations", type=_positive_int, default=4)
    p.add_argument("--timestamps", type=_positive_int, default=30)
    p.add_argument("--facts-per-snapshot", type=_positive_int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model per seed")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="filtered evaluation of a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="pooled evaluation of several checkpoints")
    p.add_argument("checkpoints", type=Path, nargs="+")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--pooling", choices=POOLINGS, default="max")
    p.add_argument("--raw-scores", action="store_true", help="pool raw scores, skip softmax")
    p.set_defaults(func=cmd_ensemble)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RetempError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
