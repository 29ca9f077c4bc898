"""Command-line front door: ``ifedrec generate | train | sweep | eval``.

Every subcommand reads an experiment file (``--config``); command-line flags
override file values. Outputs go to ``--out``, else ``$IFEDREC_OUTPUT_DIR``,
else the file's ``[output] dir``, else ``./ifedrec-out``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .config import TrainConfig
from .data import generate_planted, write_attributes, write_interactions, write_split
from .exceptions import (
    AggregationError,
    ConfigError,
    DataError,
    DomainError,
    DimensionError,
    EvaluationError,
    TrainingError,
)
from .experiment import ExperimentConfig, parse_train_field
from .federation import evaluate, load_system, run_experiment_grid, run_training, save_system

OUTPUT_ENV = "IFEDREC_OUTPUT_DIR"
DEFAULT_OUTPUT = "ifedrec-out"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4

log = logging.getLogger("ifedrec")

# flag -> TrainConfig field
_FLAGS = {
    "variant": "variant", "lambda": "lam", "rounds": "rounds", "ablation": "ablation",
    "dim": "dim", "client_ratio": "client_ratio", "ldp_scale": "ldp_scale", "seed": "seed",
    "workers": "workers", "eval_every": "eval_every",
}


def _exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (TrainingError, AggregationError, EvaluationError, DomainError, DimensionError)):
        return EXIT_TRAINING
    return 1


def output_dir(args, cfg: ExperimentConfig | None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    if cfg is not None and cfg.output_dir:
        return Path(cfg.base_dir) / cfg.output_dir
    return Path(DEFAULT_OUTPUT)


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    changes = {}
    for flag, name in _FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            changes[name] = parse_train_field(name, str(value))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        changes[key.strip()] = parse_train_field(key.strip(), value)
    return cfg.with_train(**changes) if changes else cfg


def variant_label(config: TrainConfig) -> str:
    name = {"ncf": "IFedNCF", "pfedrec": "IPFedRec"}[config.variant]
    return name + (" w/o IRAM" if config.ablation == "no-iram" else "")


def metric_records(report, round_, split, config: TrainConfig):
    for row in report.as_rows():
        yield dict(round=round_, split=split, **row, config_hash=config.digest(), seed=config.seed)


def summary_table(report, title) -> str:
    """Metrics in units of 1e-2, one row per cut-off."""
    lines = [title, f"{'k':>5} {'Recall':>8} {'Precision':>10} {'NDCG':>8}"]
    for row in report.as_rows():
        lines.append(f"{row['k']:>5} {100 * row['recall']:>8.2f} {100 * row['precision']:>10.2f} "
                     f"{100 * row['ndcg']:>8.2f}")
    lines.append(f"(x1e-2, {report.num_users} users)")
    return "\n".join(lines)


def _write_jsonl(fh, records):
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
    fh.flush()


# --- subcommands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(args)
    if cfg.dataset.synthetic is None:
        raise ConfigError("generate needs synthetic generator parameters in [dataset]")
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    dataset, planted = generate_planted(cfg.dataset.synthetic, cfg.dataset.seed)
    write_interactions(out / "interactions.tsv", dataset)
    write_attributes(out / "attributes.txt", dataset.attributes)
    write_split(out / "split.txt", dataset)
    manifest = {
        "seed": cfg.dataset.seed,
        "planted_hash": planted.digest(),
        "num_users": dataset.num_users,
        "num_items": dataset.num_items,
        "files": {"interactions": "interactions.tsv", "attributes": "attributes.txt", "split": "split.txt"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote dataset to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    dataset = cfg.load_dataset()
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    train = cfg.train
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        system = run_training(dataset, train, callback=lambda s, rec: _write_jsonl(
            fh, metric_records(rec.report, rec.round, rec.split, train)))
        report = evaluate(system, dataset, "test")
        _write_jsonl(fh, metric_records(report, system.best_round, "test", train))
    save_system(out / "checkpoint.npz", system)
    table = summary_table(report, f"{variant_label(train)}  test cold items, best round {system.best_round}")
    (out / "summary.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args)
    dataset = cfg.load_dataset()
    system = load_system(args.checkpoint, dataset)
    report = evaluate(system, dataset, args.split)
    records = list(metric_records(report, system.best_round, args.split, system.config))
    _write_jsonl(sys.stdout, records)
    print(summary_table(report, f"{variant_label(system.config)}  {args.split} cold items"), file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    if not cfg.sweep:
        raise ConfigError("sweep needs a non-empty [sweep] section")
    dataset = cfg.load_dataset()
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    rows = run_experiment_grid(dataset, cfg.train, cfg.sweep, paired_seeds=cfg.paired_seeds,
                               workers=args.sweep_workers, on_error="record")
    columns = list(cfg.sweep) + ["seed", "config_hash", "status", "best_round"]
    for k in cfg.train.ks:
        columns += [f"recall@{k}", f"precision@{k}", f"ndcg@{k}"]
    path = out / "sweep.tsv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, columns, delimiter="\t", restval="", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"wrote {len(rows)} rows to {path} ({failed} failed)")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifedrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, train_flags=True):
        p.add_argument("-c", "--config", required=True, help="experiment file")
        p.add_argument("-o", "--out", help=f"output directory (overrides ${OUTPUT_ENV})")
        if train_flags:
            p.add_argument("--variant", choices=["ncf", "pfedrec", "ifedncf", "ipfedrec"])
            p.add_argument("--lambda", type=float, dest="lambda", help="alignment weight")
            p.add_argument("--rounds", type=int)
            p.add_argument("--ablation", choices=["none", "no-iram"])
            p.add_argument("--dim", type=int)
            p.add_argument("--client-ratio", type=float, dest="client_ratio")
            p.add_argument("--ldp-scale", type=float, dest="ldp_scale")
            p.add_argument("--eval-every", type=int, dest="eval_every")
            p.add_argument("--seed", type=int)
            p.add_argument("--workers", type=int, help="client threads per round")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override any [train] field")

    p = sub.add_parser("generate", help="write a synthetic dataset with a planted model")
    common(p, train_flags=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train, evaluate on test cold items, checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train every cell of the [sweep] grid")
    common(p)
    p.add_argument("--sweep-workers", type=int, default=1, dest="sweep_workers")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="re-evaluate a checkpoint")
    common(p, train_flags=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["val", "test"], default="test")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code == 1:
            raise
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if isinstance(exc, TrainingError):
            record["context"] = {k: str(v) for k, v in exc.context.items()}
        print(json.dumps(record), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
