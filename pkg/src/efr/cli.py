"""Command-line entry point: ``efr <subcommand> ...``.

Exit codes: 0 success, 1 invalid input (bad file, record, config or
checkpoint), 2 any other runtime failure. Training settings come from the
JSON ``--config`` file; explicit flags override it.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from efr import taxonomy
from efr.agreement import krippendorff_alpha
from efr.corpus import CorpusError, parse_corpus, read_meld_csv, write_dialogues, write_instances
from efr.evaluation import (ABLATION_ROWS, ablation_report, classwise_report, directionality_report, evaluate,
                            gold_sets, train_support)
from efr.instances import build_instances, corpus_stats
from efr.model import MASK_MODES, ConfigError, instance_report
from efr.training import CheckpointError, load_checkpoint, load_config, save_checkpoint, split_config, train


def _emit(obj, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(obj.to_dict() if hasattr(obj, "to_dict") else obj, sort_keys=True))
    else:
        print(obj.to_table())


def _config(args) -> tuple:
    flat = load_config(args.config) if getattr(args, "config", None) else {}
    overrides = {
        "label_setup": getattr(args, "label_setup", None),
        "mask_mode": getattr(args, "mask_mode", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "enabled_modules": getattr(args, "modules", None),
    }
    flat.update({k: v for k, v in overrides.items() if v is not None})
    return split_config(flat)


# ---------------------------------------------------------------------------
# subcommands


def cmd_import_meld(args) -> None:
    write_dialogues(read_meld_csv(args.csv, args.split), args.out)


def cmd_build_instances(args) -> None:
    dialogues = parse_corpus(args.dialogues, "dialogues")
    gold = parse_corpus(args.gold, "annotations") if args.gold else None
    try:
        instances = build_instances(dialogues, gold)
    except CorpusError as exc:
        raise CorpusError(exc.message, args.gold or args.dialogues, None, exc.field) from None
    write_instances(instances, args.out)


def cmd_stats(args) -> None:
    _emit(corpus_stats(parse_corpus(args.instances, "instances")), args.format)


def cmd_agreement(args) -> None:
    files = [parse_corpus(p, "annotations") for p in args.annotations]
    instances = parse_corpus(args.instances, "instances") if args.instances else None
    _emit(krippendorff_alpha(files, args.layer, instances), "json")


def cmd_train(args) -> None:
    config, tconf = _config(args)
    train_set = parse_corpus(args.train, "instances")
    dev_set = parse_corpus(args.dev, "instances") if args.dev else []
    log_file = open(args.log, "w", encoding="utf-8") if args.log else None

    def on_epoch(rec):
        line = json.dumps(rec, sort_keys=True)
        print(line, file=log_file or sys.stdout, flush=True)

    try:
        result = train(train_set, dev_set, config, tconf, seed=args.seed, on_epoch=on_epoch)
    finally:
        if log_file:
            log_file.close()
    save_checkpoint(result.model, args.out)


def _scope(value: str) -> str:
    return {"all": "all_utterances", "triggers": "triggers_only"}[value]


def cmd_eval(args) -> None:
    model = load_checkpoint(args.ckpt, args.label_setup)
    test = parse_corpus(args.test, "instances")
    preds = model.predict(test)
    scope = _scope(args.scope)
    out = {"metrics": evaluate(model, test, scope, preds)}
    if args.directionality:
        out["directionality"] = directionality_report(test, [p.predicted for p in preds], model.label_space, scope)
    if args.classwise:
        if not args.train:
            raise ConfigError("--classwise needs --train for the support ranking")
        support = train_support(parse_corpus(args.train, "instances"), model.label_space)
        out["classwise"] = classwise_report(out["metrics"], support, args.top_k, args.bottom_k)
    if args.format == "json":
        print(json.dumps({k: v.to_dict() for k, v in out.items()}, sort_keys=True))
    else:
        print("\n\n".join(f"[{k}]\n{v.to_table()}" for k, v in out.items()))


def cmd_predict(args) -> None:
    model = load_checkpoint(args.ckpt)
    instances = parse_corpus(args.instances, "instances")
    preds = model.predict(instances)
    with open(args.out, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(p.to_record(model.label_space), sort_keys=True) + "\n")
    if args.report:
        print("\n\n".join(instance_report(i, p, model.label_space) for i, p in zip(instances, preds)))


def cmd_ablate(args) -> None:
    config, tconf = _config(args)
    table = ablation_report(parse_corpus(args.train, "instances"), parse_corpus(args.dev, "instances"), config,
                            tconf, seed=args.seed, setups=args.setups or taxonomy.SETUPS, jobs=args.jobs)
    _emit(table, args.format)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="efr", description="Emotion flip reasoning with instigators.")
    sub = p.add_subparsers(dest="command", required=True)

    def fmt(sp, default="table"):
        sp.add_argument("--format", choices=("json", "table"), default=default)

    def training_flags(sp):
        sp.add_argument("--config", help="JSON config; keys mirror TgifConfig and TrainConfig fields")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--label-setup", choices=taxonomy.SETUPS)
        sp.add_argument("--mask-mode", choices=MASK_MODES)

    sp = sub.add_parser("import-meld", help="convert a MELD CSV into dialogue JSON-lines")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split")
    sp.set_defaults(func=cmd_import_meld)

    sp = sub.add_parser("build-instances", help="one instance per emotion flip")
    sp.add_argument("--dialogues", required=True)
    sp.add_argument("--gold", help="annotation JSON-lines keyed by instance id")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_build_instances)

    sp = sub.add_parser("stats", help="flip matrix, label distributions and polarity totals")
    sp.add_argument("--instances", required=True)
    fmt(sp)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("agreement", help="pairwise and mean Krippendorff's alpha")
    sp.add_argument("--annotations", nargs="+", required=True)
    sp.add_argument("--layer", choices=("trigger", "instigator"), default="trigger")
    sp.add_argument("--instances", help="instances file giving utterance counts")
    sp.set_defaults(func=cmd_agreement)

    sp = sub.add_parser("train", help="train TGIF and write a checkpoint")
    sp.add_argument("--train", required=True)
    sp.add_argument("--dev")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="write the per-epoch JSON log here instead of stdout")
    sp.add_argument("--modules", nargs="+", choices=("GUS", "GES", "SSES", "GSS"))
    training_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a checkpoint on labelled instances")
    sp.add_argument("--test", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--scope", choices=("all", "triggers"), default="all")
    sp.add_argument("--directionality", action="store_true")
    sp.add_argument("--classwise", action="store_true")
    sp.add_argument("--train", help="training instances for the class-wise support ranking")
    sp.add_argument("--top-k", type=int, default=3)
    sp.add_argument("--bottom-k", type=int, default=3)
    sp.add_argument("--label-setup", choices=taxonomy.SETUPS, help="fail unless the checkpoint uses this setup")
    fmt(sp, "json")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="write per-utterance probabilities and label sets")
    sp.add_argument("--instances", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report", action="store_true", help="also print gold vs predicted tables")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("ablate", help="dev weighted F1 per module set and label setup")
    sp.add_argument("--train", required=True)
    sp.add_argument("--dev", required=True)
    sp.add_argument("--setups", nargs="+", choices=taxonomy.SETUPS)
    sp.add_argument("--jobs", type=int, default=1)
    training_flags(sp)
    fmt(sp)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CorpusError, ConfigError, CheckpointError) as exc:
        print(f"efr {args.command}: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"efr {args.command}: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"efr {args.command}: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"efr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
