import numpy as np
import pytest

from facttree.construct import (
    ClassifierTrainConfig,
    ConstructError,
    GcnClassifier,
    NLFactTree,
    Placeholder,
    node_decision_accuracy,
    classify_eliminate,
    construct_fact_tree,
    context_labels,
    derive_gold_decisions,
    extract_context,
    load_classifier,
    save_classifier,
    train_classifier,
    tree_to_facts,
    visit_order,
)
from facttree.syntax import parse_bracketed, preprocess

from conftest import GOLD_NL_JSON, RAW_QUESTION


WALK_VISIT_LABELS = ["VP", "SBAR", "NP", "PP", "PP", "NP", "VP", "SQ", "SBARQ"]
WALK_GOLD_DROPS = [True, False, True, True, True, False, True, True, True]


def test_visit_order_walkthrough(raw_tree):
    order = visit_order(preprocess(raw_tree))
    assert [n.label for n in order] == WALK_VISIT_LABELS


def test_visit_order_skips_preterminals():
    tree = preprocess(parse_bracketed("(ROOT (SQ (WP Who) (VBD won)) (. ?))"))
    # preterminals have direct leaf children and are never visited
    assert [n.label for n in visit_order(tree)] == ["SQ"]


def test_derive_gold_decisions_walkthrough(raw_tree, gold_nl):
    decisions = derive_gold_decisions(raw_tree, gold_nl)
    assert decisions == WALK_GOLD_DROPS


def test_derive_gold_decisions_rejects_foreign_tree(gold_nl):
    other = parse_bracketed("(ROOT (SBARQ (WHNP (WP Who)) (SQ (VBD won) (NP (DT the) (NN prize)))) (. ?))")
    assert derive_gold_decisions(other, gold_nl) is None


def test_tree_to_facts_shape(raw_tree, gold_nl):
    tree = preprocess(raw_tree)
    for node, drop in zip(visit_order(tree), WALK_GOLD_DROPS):
        if drop:
            from facttree.construct import eliminate_node

            eliminate_node(node)
    built = tree_to_facts(tree)
    assert built.signature() == gold_nl.signature()
    assert built.n_facts == 3
    assert built.answer_count() == 1
    root = built.root
    assert isinstance(root.items[0], Placeholder)
    assert root.items[0].kind == "answer"
    bridges = [it for it in root.items if isinstance(it, Placeholder) and it.kind == "bridge"]
    assert [b.child for b in bridges] == [0, 1]


def test_untrained_classifier_retains_everything(raw_tree, gold_nl):
    clf = GcnClassifier(["NP", "VP", "SQ"])
    tree = preprocess(raw_tree)
    for v in visit_order(tree):
        assert clf.prob_node(v) == 0.5
        assert classify_eliminate(clf, v) is False
    built = construct_fact_tree(raw_tree, clf)
    # nothing eliminated: every retained node splits off a child fact
    assert built.n_facts == 8
    assert built.signature() != gold_nl.signature()


def test_trained_classifier_reproduces_walkthrough(raw_tree, gold_nl):
    pair = [(raw_tree, gold_nl)]
    clf, hist = train_classifier(pair, pair, ClassifierTrainConfig(epochs=300, lr=1e-2, seed=0))
    assert hist["best_val_acc"] == 1.0
    built = construct_fact_tree(raw_tree, clf)
    assert built.signature() == gold_nl.signature()


def test_construct_trace_records_decisions(raw_tree, gold_nl):
    pair = [(raw_tree, gold_nl)]
    clf, _ = train_classifier(pair, pair, ClassifierTrainConfig(epochs=300, lr=1e-2, seed=0))
    trace = []
    construct_fact_tree(raw_tree, clf, trace=trace)
    assert [lab for lab, _, _ in trace] == WALK_VISIT_LABELS
    assert [drop for _, _, drop in trace] == WALK_GOLD_DROPS
    assert all(0.0 <= p <= 1.0 for _, p, _ in trace)


def test_classifier_save_load_round_trip(tmp_path, raw_tree, gold_nl):
    pair = [(raw_tree, gold_nl)]
    clf, _ = train_classifier(pair, pair, ClassifierTrainConfig(epochs=100, lr=1e-2, seed=0))
    path = str(tmp_path / "clf.npz")
    save_classifier(clf, path, {"range": "O+F+C"})
    back = load_classifier(path)
    v = visit_order(preprocess(raw_tree))[0]
    assert back.prob_node(v) == pytest.approx(clf.prob_node(v), abs=1e-12)


def test_extract_context_ranges(raw_tree):
    tree = preprocess(raw_tree)
    # the SQ node: parent SBARQ, children VP
    sq = tree.children[0].children[1]
    assert sq.label == "SQ"
    for range_, expect in [("O", 1), ("O+F", 2), ("O+C", 2), ("O+F+C", 3)]:
        nodes, adj = extract_context(sq, range_)
        assert len(nodes) == expect
        assert nodes[0] is sq
        assert adj.shape == (expect, expect)
        assert np.array_equal(adj, adj.T)
    # S adds the WHNP sibling
    nodes, _ = extract_context(sq, "O+F+C+S")
    assert len(nodes) == 4
    labels = context_labels(nodes)
    assert labels[0] == "SQ"
    assert "WHNP" in labels


def test_extract_context_rejects_unknown_range(raw_tree):
    v = visit_order(preprocess(raw_tree))[0]
    with pytest.raises(ConstructError):
        extract_context(v, "O+X")


def test_node_decision_accuracy(raw_tree, gold_nl):
    clf = GcnClassifier(["NP"])  # untrained: retains everything
    acc = node_decision_accuracy(clf, [(raw_tree, gold_nl)])
    # untrained model gets exactly the keep decisions right
    want = WALK_GOLD_DROPS.count(False) / len(WALK_GOLD_DROPS)
    assert acc == pytest.approx(want)


def test_nl_tree_json_round_trip(gold_nl):
    again = NLFactTree.from_json(gold_nl.to_json())
    assert again.signature() == gold_nl.signature()
    assert again.to_json() == GOLD_NL_JSON
