"""Command line front end.

Exit codes: 0 success, 1 configuration or usage problem, 2 broken input
data. Subcommands cover the whole workflow: generate a graph and a
question set, train the three models, then answer single questions or
evaluate a split.
"""

import argparse
import json
import sys
from typing import Dict, List, Optional

from . import numkit
from .construct import ClassifierTrainConfig, load_classifier, save_classifier, train_classifier
from .datagen import (
    DataError,
    DataGenConfig,
    KgGenConfig,
    classifier_pairs,
    generate_dataset,
    generate_kg,
    labeler_examples,
    load_dataset,
    save_dataset,
    split_dataset,
    surface_relations,
)
from .evaluate import EvaluateError, Models, OracleFlags, answer_item, evaluate
from .kg import KgError, corrupt_kg, load_kg, save_kg
from .locate import (
    LabelerTrainConfig,
    RelationMatcher,
    build_default_table,
    load_labeler,
    save_embedding_table,
    save_labeler,
    train_labeler,
)
from .reason import ScorerTrainConfig, load_scorer, save_scorer, train_scorer


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration errors, not data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self.prog + ": error: " + message)


def _parse_mix(text: str):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3 or any(p <= 0 for p in parts):
        raise ValueError(f"mix must be three positive numbers, got {text!r}")
    return tuple(parts)


def _parse_oracle(text: Optional[str]) -> OracleFlags:
    flags = OracleFlags()
    if not text:
        return flags
    known = {"tree", "locate", "intra", "inter"}
    for name in text.split(","):
        name = name.strip()
        if name == "all":
            return OracleFlags(tree=True, locate=True, intra=True, inter=True)
        if name not in known:
            raise ValueError(f"unknown oracle switch {name!r}; pick from {sorted(known)} or 'all'")
        setattr(flags, name, True)
    return flags


def _load_models(args) -> Models:
    models = Models()
    if getattr(args, "classifier", None):
        models.classifier = load_classifier(args.classifier)
        _, _, meta = numkit.load_checkpoint(args.classifier, "node-classifier")
        if meta.get("range"):
            models.classifier_range = meta["range"]
    # an explicit flag beats whatever the checkpoint recorded
    if getattr(args, "range", None):
        models.classifier_range = args.range
    if getattr(args, "labeler", None):
        models.labeler = load_labeler(args.labeler)
    if getattr(args, "embeddings", None):
        models.matcher = RelationMatcher.from_file(args.embeddings)
    if getattr(args, "scorer", None):
        models.scorer = load_scorer(args.scorer)
    return models


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--classifier", help="node classifier checkpoint")
    p.add_argument("--labeler", help="sequence labeler checkpoint")
    p.add_argument("--embeddings", help="relation embedding table (tsv)")
    p.add_argument("--scorer", help="fact scorer checkpoint")
    p.add_argument("--range", help="classifier context range override")
    p.add_argument("--oracle", help="comma list of gold-stage switches: tree,locate,intra,inter or all")
    p.add_argument("--lambda", dest="lambda_", type=float, default=1.5,
                   help="score amplification factor for connected entities")


def cmd_gen_kg(args) -> int:
    cfg = KgGenConfig(
        n_entities=args.entities, n_binary_rel=args.binary_rels, n_nary_rel=args.nary_rels,
        n_facts=args.facts, max_attrs=args.max_attrs, seed=args.seed,
    )
    kg = generate_kg(cfg)
    save_kg(kg, args.out)
    nb, nn = kg.relation_counts()
    print(f"wrote {args.out}: {kg.n_facts} facts, {kg.n_entities} entities, "
          f"{nb} binary + {nn} attributed relations")
    return 0


def cmd_gen_data(args) -> int:
    kg = load_kg(args.kg)
    cfg = DataGenConfig(n_items=args.items, seed=args.seed, mix=_parse_mix(args.mix))
    items = generate_dataset(kg, cfg)
    splits = split_dataset(items, seed=args.seed)
    save_dataset(args.out_dir, items, splits)
    counts = {name: len(ids) for name, ids in splits.items()}
    print(f"wrote {args.out_dir}: {len(items)} items, splits {counts}")
    return 0


def cmd_corrupt_kg(args) -> int:
    kg = load_kg(args.kg)
    out = corrupt_kg(kg, args.fraction, args.seed)
    save_kg(out, args.out)
    print(f"wrote {args.out}: kept {out.n_facts} of {kg.n_facts} facts")
    return 0


def cmd_gen_table(args) -> int:
    kg = load_kg(args.kg)
    table = build_default_table(kg, surface_relations(), dim=args.dim, seed=args.seed)
    save_embedding_table(args.out, table)
    print(f"wrote {args.out}: {len(table)} vectors of dimension {args.dim}")
    return 0


def cmd_train(args) -> int:
    if args.model == "classifier":
        data = load_dataset(args.data)
        cfg = ClassifierTrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed,
                                    range_=args.range, log_every=args.log_every)
        clf, stats = train_classifier(classifier_pairs(data["train"]),
                                      classifier_pairs(data["valid"]), cfg)
        save_classifier(clf, args.out, {"range": cfg.range_})
    elif args.model == "labeler":
        data = load_dataset(args.data)
        cfg = LabelerTrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed,
                                 log_every=args.log_every)
        clf, stats = train_labeler(labeler_examples(data["train"]),
                                   labeler_examples(data["valid"]), cfg)
        save_labeler(clf, args.out)
    else:
        kg = load_kg(args.kg)
        cfg = ScorerTrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed,
                                neg_ratio=args.neg_ratio, log_every=args.log_every,
                                val_fraction=args.val_fraction)
        scorer, stats = train_scorer(kg, cfg)
        save_scorer(scorer, args.out)
    scalars = {k: v for k, v in stats.items() if isinstance(v, (int, float))}
    line = ", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                     for k, v in sorted(scalars.items()))
    print(f"wrote {args.out}: {line}")
    return 0


def _find_item(data: Dict[str, List], item_id: str):
    for part in data.values():
        for it in part:
            if it.id == item_id:
                return it
    raise DataError(f"no item with id {item_id!r} in the dataset")


def cmd_answer(args) -> int:
    kg = load_kg(args.kg)
    data = load_dataset(args.data)
    item = _find_item(data, args.id)
    models = _load_models(args)
    flags = _parse_oracle(args.oracle)
    outcome = answer_item(item, kg, models, flags, lam=args.lambda_)
    print(json.dumps({
        "id": item.id,
        "question": item.question,
        "predicted": outcome.predicted,
        "gold": item.answer,
        "correct": outcome.correct,
        "divergence": outcome.divergence,
        "error": outcome.error,
    }, indent=2))
    return 0


def cmd_eval(args) -> int:
    kg = load_kg(args.kg)
    data = load_dataset(args.data)
    if args.split not in data:
        raise EvaluateError(f"unknown split {args.split!r}")
    models = _load_models(args)
    flags = _parse_oracle(args.oracle)
    report = evaluate(data[args.split], kg, models, flags, lam=args.lambda_)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report == "-":
        print(text)
    else:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.report}: hits@1={report['hits_at_1']:.4f} over {report['n_items']} items")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="facttree", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-kg", help="generate a synthetic knowledge graph")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=600)
    p.add_argument("--binary-rels", type=int, default=35)
    p.add_argument("--nary-rels", type=int, default=12)
    p.add_argument("--facts", type=int, default=2000)
    p.add_argument("--max-attrs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_kg)

    p = sub.add_parser("gen-data", help="generate questions against a graph")
    p.add_argument("--kg", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--items", type=int, default=1000)
    p.add_argument("--mix", default="0.527,0.333,0.140",
                   help="fraction of one-, two- and three-fact questions")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("corrupt-kg", help="drop a fraction of the stored facts")
    p.add_argument("--kg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corrupt_kg)

    p = sub.add_parser("gen-table", help="build the relation embedding table")
    p.add_argument("--kg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_table)

    p = sub.add_parser("train", help="train one of the three models")
    p.add_argument("model", choices=["classifier", "labeler", "scorer"])
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset directory (classifier and labeler)")
    p.add_argument("--kg", help="graph file (scorer)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--range", default="O+F+C", help="classifier context range")
    p.add_argument("--neg-ratio", type=int, default=5)
    p.add_argument("--val-fraction", type=float, default=0.0,
                   help="facts held out for scorer early stopping; 0 trains "
                        "on everything to the last epoch")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("answer", help="answer one dataset question")
    p.add_argument("--kg", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id", required=True)
    _add_model_args(p)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("eval", help="evaluate a dataset split")
    p.add_argument("--kg", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--report", default="-", help="report path, - for stdout")
    _add_model_args(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return int(exc.code or 0)
    try:
        if args.command == "train":
            if args.model in ("classifier", "labeler") and not args.data:
                raise EvaluateError(f"train {args.model} needs --data")
            if args.model == "scorer" and not args.kg:
                raise EvaluateError("train scorer needs --kg")
            if args.lr is None:
                # the rates the reference recipe trains with; the library
                # defaults are deliberately conservative and undertrain here
                args.lr = {"classifier": 1e-3, "labeler": 1e-3, "scorer": 3e-3}[args.model]
        return args.func(args)
    except (DataError, KgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EvaluateError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
