"""Command-line interface: ``rulespace {train,evaluate,classify,mine,verify,ground}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, RunConfig, load_config
from .data import (
    Dataset,
    ParseError,
    RuleError,
    Triple,
    Vocabulary,
    VocabularyMismatch,
    build_hierarchy,
    grounded_positives,
    load_rules,
)
from .evaluation import link_prediction, triple_classification, tune_sigma
from .model import ModelKind, SizingError, geometry
from .persistence import ModelFileError, SavedModel, load_model, save_model
from .semantics import format_report, mine
from .training import TrainConfig, train

logger = logging.getLogger(__name__)

POSITIVE = {"1", "+1", "+", "true", "pos", "positive", "yes"}
NEGATIVE = {"0", "-1", "-", "false", "neg", "negative", "no"}

# flag name -> TrainConfig field
TRAIN_FLAGS = {"seed": "seed", "mode": "grounding", "model": "model", "dim": "d", "lr": "eta", "margin": "gamma",
               "decay": "alpha", "epochs": "max_epochs", "batches": "batches_per_epoch"}


class CliError(Exception):
    pass


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- train


def _run_config(args) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for key in ("train", "valid", "test", "rules"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    if args.out is not None:
        values["model_out"] = args.out
    for flag, key in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return RunConfig.from_dict(values)


def _load_rules(run: RunConfig, relations: Vocabulary, no_rules: bool, kind: ModelKind):
    path = run.paths["rules"]
    if no_rules:
        return []
    if path is None:
        if kind is ModelKind.ISO:
            raise CliError("no rules file given for the rule-isomorphic model; "
                           "pass --rules FILE, or --no-rules to train without rules")
        return []
    if not Path(path).exists():
        raise CliError(f"rules file not found: {path}; pass --no-rules to train without rules")
    return load_rules(path, relations)


def cmd_train(args) -> int:
    run = _run_config(args)
    if run.paths["train"] is None:
        raise CliError("no training file given (--train or 'train' in the config)")
    if run.paths["model_out"] is None:
        raise CliError("no output path given (--out or 'model_out' in the config)")
    dataset = Dataset.from_files(run.paths["train"], run.paths["valid"], run.paths["test"])
    rules = _load_rules(run, dataset.relations, args.no_rules, run.train.model)
    hierarchy = build_hierarchy(rules, dataset.n_relations, dataset.relations)
    points = run.grid_points()
    if len(points) > 1 and not dataset.valid:
        raise CliError("grid search needs a validation split to select by median rank")

    results = []
    for cfg in points:
        result = train(dataset, hierarchy, cfg)
        results.append((cfg, result))
        med = "na" if result.best_val_med is None else f"{result.best_val_med:g}"
        print(f"config eta={cfg.eta:g} gamma={cfg.gamma:g} d={cfg.d} alpha={cfg.alpha:g}: "
              f"epochs={len(result.history)} val_med={med}")
    chosen = min(range(len(results)), key=lambda i: (results[i][1].best_val_med is None,
                                                     results[i][1].best_val_med or 0.0, i))
    if len(results) > 1:
        print("grid summary:")
        for i, (cfg, result) in enumerate(results):
            mark = "*" if i == chosen else " "
            print(f" {mark} eta={cfg.eta:g} gamma={cfg.gamma:g} d={cfg.d} alpha={cfg.alpha:g} "
                  f"val_med={result.best_val_med if result.best_val_med is not None else 'na'}")
    cfg, result = results[chosen]
    print("chosen configuration: " + " ".join(f"{k}={v}" for k, v in _config_dict(cfg).items()))
    saved = SavedModel(result.params, dataset.entities, dataset.relations, list(rules), _config_dict(cfg))
    save_model(saved, run.paths["model_out"])
    print(f"model written to {run.paths['model_out']}")
    return 0


def _config_dict(cfg: TrainConfig) -> dict:
    out = {}
    for name in TrainConfig.field_names():
        value = getattr(cfg, name)
        if isinstance(value, ModelKind):
            value = value.value
        elif isinstance(value, tuple):
            value = list(value)
        out[name] = value
    return out


# ---------------------------------------------------------------- evaluate / classify / mine


def _dataset_for(saved: SavedModel, train=None, valid=None, test=None) -> Dataset:
    return Dataset.from_files(train, valid, test, entities=Vocabulary(saved.entities.names),
                              relations=Vocabulary(saved.relations.names))


def cmd_evaluate(args) -> int:
    saved = load_model(args.model)
    dataset = _dataset_for(saved, args.train, args.valid, args.test)
    if not dataset.test:
        raise CliError("the test file holds no triples")
    hierarchy = saved.hierarchy()
    report = link_prediction(geometry(saved.params, hierarchy), saved.params, dataset)
    print(f"link prediction on {report.n_triples} triples")
    print(report.format_table(args.table))
    if args.report:
        _write_json(args.report, report.to_dict())
    return 0


def load_labeled(path, saved: SavedModel) -> list[tuple[Triple, bool]]:
    """``head<TAB>relation<TAB>tail<TAB>label`` lines; label is 1/0, +1/-1 or true/false."""
    out, unknown = [], set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(path, lineno, f"expected 4 tab-separated fields (head, relation, tail, label), "
                                               f"got {len(fields)}")
            h, r, t, label = fields
            label = label.strip().lower()
            if label not in POSITIVE | NEGATIVE:
                raise ParseError(path, lineno, f"unrecognized label {fields[3]!r}")
            missing = [n for n in (h, t) if n not in saved.entities] + ([r] if r not in saved.relations else [])
            if missing:
                unknown.update(missing)
                continue
            triple = Triple(saved.entities.id(h), saved.relations.id(r), saved.entities.id(t))
            out.append((triple, label in POSITIVE))
    if unknown:
        raise VocabularyMismatch("entity or relation", sorted(unknown))
    return out


def cmd_classify(args) -> int:
    saved = load_model(args.model)
    hierarchy = saved.hierarchy()
    geo = geometry(saved.params, hierarchy)
    labeled = load_labeled(args.labeled, saved)
    if not labeled:
        raise CliError("the labeled file holds no triples")
    if args.sigma is not None:
        sigma = args.sigma
    else:
        if args.valid_labeled is None:
            raise CliError("no --sigma given and no --valid-labeled file to tune it on")
        sigma = tune_sigma(geo, saved.params, load_labeled(args.valid_labeled, saved), args.per_relation)
        if isinstance(sigma, dict):
            print("tuned sigma: " + ", ".join(f"{saved.relations.name(r)}={s:.6g}" for r, s in sorted(sigma.items())))
        else:
            print(f"tuned sigma: {sigma:.6g}")
    report = triple_classification(geo, saved.params, labeled, sigma, hierarchy.ruled_relations)
    print(f"{report.summary()}  (influenced/ uninfluenced)")
    for rel, prec in sorted(report.precision.items()):
        print(f"  {saved.relations.name(rel)}: {prec:.3f}")
    if args.report:
        _write_json(args.report, report.to_dict(saved.relations))
    return 0


def cmd_mine(args) -> int:
    saved = load_model(args.model)
    if saved.params.kind is ModelKind.TRANSE:
        raise CliError("mining needs relation subspaces; TransE models have none")
    dataset = _dataset_for(saved, args.train)
    hierarchy = saved.hierarchy()
    analyses = mine(geometry(saved.params, hierarchy), saved.params, dataset,
                    angle_threshold=args.angle_threshold, imb_threshold=args.imb_threshold)
    print(format_report(analyses, saved.relations))
    if args.report:
        _write_json(args.report, [p.to_dict(saved.relations) for p in analyses])
    return 0


# ---------------------------------------------------------------- verify / ground


def cmd_verify(args) -> int:
    report = harness.run_all(seed=args.seed, d_values=args.dims, trials=args.trials, forests=args.forests,
                             samples=args.samples, inject=args.inject_fault)
    print(report.text())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0 if report.passed else 1


def cmd_ground(args) -> int:
    dataset = Dataset.from_files(args.train, args.valid, args.test)
    rules = load_rules(args.rules, dataset.relations)
    hierarchy = build_hierarchy(rules, dataset.n_relations, dataset.relations)
    lines = ["\t".join(dataset.named(t)) for t in grounded_positives(dataset.train, hierarchy)]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"{len(lines)} grounded triples written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rulespace", description="Rule-constrained subspace embeddings of knowledge graphs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model (optionally grid-searching by validation median rank)")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--test")
    p.add_argument("--rules", help="rule file")
    p.add_argument("--no-rules", action="store_true", help="train without any rules")
    p.add_argument("--out", help="model file to write")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("G", "NG"), type=str.upper)
    p.add_argument("--model", choices=[k.value for k in ModelKind])
    p.add_argument("--dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="link prediction report")
    p.add_argument("model")
    p.add_argument("--test", required=True)
    p.add_argument("--train", help="known triples for the filtered setting")
    p.add_argument("--valid", help="known triples for the filtered setting")
    p.add_argument("--table", choices=("fb122", "nell"), default="fb122")
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify", help="triple classification MAP")
    p.add_argument("model")
    p.add_argument("--labeled", required=True, help="head, relation, tail, label per line")
    p.add_argument("--valid-labeled", help="labeled validation triples for tuning sigma")
    p.add_argument("--sigma", type=float)
    p.add_argument("--per-relation", action="store_true", help="tune one sigma per relation")
    p.add_argument("--report")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("mine", help="angles and imbalance between relation spaces")
    p.add_argument("model")
    p.add_argument("--train", required=True, help="triples whose difference vectors are measured")
    p.add_argument("--angle-threshold", type=float, default=60.0)
    p.add_argument("--imb-threshold", type=float, default=2.0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("verify", help="randomized checks of the geometry; exit 0 iff all pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=int, nargs="+", default=[2, 4, 8, 16])
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--forests", type=int, default=50)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--inject-fault", action="store_true", help="corrupt the geometry to self-test the checks")
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ground", help="dump positives entailed by inverse rules")
    p.add_argument("--train", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--valid", help="extra split whose names join the vocabulary")
    p.add_argument("--test", help="extra split whose names join the vocabulary")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ground)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, ParseError, RuleError, VocabularyMismatch, ModelFileError, SizingError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
