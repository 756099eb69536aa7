"""End-to-end answering and hits@1 evaluation.

Each pipeline stage can be swapped for its stored gold output, which
pins down where a wrong answer first went off the rails and gives the
oracle ceilings their meaning: with every switch on, accuracy is 1.0 by
construction.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .construct import DEFAULT_RANGE, GcnClassifier, NLFactTree, align_tree_leaves, construct_fact_tree
from .datagen import QaItem
from .kg import KnowledgeGraph
from .locate import CrfLabeler, KgFactTree, RelationMatcher, locate_tree
from .reason import FactScorer, reason
from .syntax import leaf_items, parse_bracketed, preprocess


class EvaluateError(ValueError):
    pass


@dataclass
class OracleFlags:
    """Which stages read their stored gold output instead of a model.

    tree: skip the node-elimination walk, use the stored fact tree.
    locate: skip tagging and matching, use the stored graph fact tree.
    intra: within-fact completion prefers a locally valid entity.
    inter: bottom-up transfer snaps resolved placeholders to a full
    consistent assignment when one exists.
    """

    tree: bool = False
    locate: bool = False
    intra: bool = False
    inter: bool = False


@dataclass
class Models:
    classifier: Optional[GcnClassifier] = None
    labeler: Optional[CrfLabeler] = None
    matcher: Optional[RelationMatcher] = None
    scorer: Optional[FactScorer] = None
    classifier_range: str = DEFAULT_RANGE


@dataclass
class Outcome:
    item_id: str
    n_facts: int
    predicted: Optional[str]
    correct: bool
    # first stage whose output differs from gold: construct, locate,
    # reason, or error:<stage> when that stage raised
    divergence: Optional[str] = None
    error: Optional[str] = None


def check_models(models: Models, flags: OracleFlags) -> None:
    if not flags.tree and not flags.locate and models.classifier is None:
        raise EvaluateError("no classifier given and the gold tree switch is off")
    if not flags.locate and (models.labeler is None or models.matcher is None):
        raise EvaluateError("grounding needs a labeler and an embedding table, or the gold switch")


def answer_item(
    item: QaItem,
    kg: KnowledgeGraph,
    models: Models,
    flags: OracleFlags,
    lam: float = 1.5,
) -> Outcome:
    """Run the pipeline on one item. Never raises for a bad item; the
    failing stage lands in the outcome instead."""
    out = Outcome(item_id=item.id, n_facts=item.n_facts, predicted=None, correct=False)
    stage = "construct"
    try:
        gold_kt = KgFactTree.from_json(item.gold_kg_tree, kg)
        nl_diverged = kt_diverged = False
        if flags.locate:
            kt = gold_kt
        else:
            raw = parse_bracketed(item.tree)
            if flags.tree:
                nl = NLFactTree.from_json(item.gold_nl_tree)
                align_tree_leaves(nl, leaf_items(preprocess(raw)))
            else:
                nl = construct_fact_tree(raw, models.classifier, models.classifier_range)
                nl_diverged = nl.signature() != NLFactTree.from_json(item.gold_nl_tree).signature()
            stage = "locate"
            kt = locate_tree(nl, kg, models.labeler, models.matcher, links=item.links)
            kt_diverged = kt.signature(kg) != gold_kt.signature(kg)

        stage = "reason"
        res = reason(kt, kg, models.scorer, lam=lam, oracle_intra=flags.intra, oracle_inter=flags.inter)
        out.predicted = res.answer_name
        out.correct = res.answer_name == item.answer
        if nl_diverged:
            out.divergence = "construct"
        elif kt_diverged:
            out.divergence = "locate"
        elif not out.correct:
            out.divergence = "reason"
    except Exception as exc:  # a bad item must not sink the run
        out.error = f"{type(exc).__name__}: {exc}"
        out.divergence = f"error:{stage}"
    return out


def evaluate(
    items: Sequence[QaItem],
    kg: KnowledgeGraph,
    models: Models,
    flags: OracleFlags,
    lam: float = 1.5,
) -> Dict:
    """hits@1 over the items, overall and per fact count, with failure
    attribution to the first diverging stage."""
    check_models(models, flags)
    outcomes = [answer_item(it, kg, models, flags, lam) for it in items]
    return build_report(outcomes, flags, lam, models)


def build_report(
    outcomes: Sequence[Outcome], flags: OracleFlags, lam: float, models: Optional[Models] = None
) -> Dict:
    by_bucket: Dict[int, List[Outcome]] = {}
    for o in outcomes:
        by_bucket.setdefault(o.n_facts, []).append(o)

    def hits(group: Sequence[Outcome]) -> float:
        return sum(1 for o in group if o.correct) / len(group) if group else 0.0

    failures: Dict[str, int] = {}
    errors = []
    for o in outcomes:
        if o.divergence:
            failures[o.divergence] = failures.get(o.divergence, 0) + 1
        if o.error and len(errors) < 20:
            errors.append({"id": o.item_id, "stage": o.divergence, "message": o.error})

    report = {
        "n_items": len(outcomes),
        "hits_at_1": hits(outcomes),
        "by_n_facts": {
            str(b): {"n_items": len(g), "hits_at_1": hits(g)}
            for b, g in sorted(by_bucket.items())
        },
        "failures": dict(sorted(failures.items())),
        "config": {
            "oracle": {
                "tree": flags.tree,
                "locate": flags.locate,
                "intra": flags.intra,
                "inter": flags.inter,
            },
            "lambda": lam,
        },
    }
    if errors:
        report["errors"] = errors
    if models is not None:
        report["config"]["classifier_range"] = models.classifier_range
        report["config"]["scorer"] = models.scorer is not None
    return report
