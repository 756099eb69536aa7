"""Shared fixtures.

Two tiers: a hand-checked two-hop question over an eight-fact graph
(cheap, used by most unit tests) and a desk-scale corpus with trained
models (expensive, session-scoped, shared by the acceptance tests).
"""

import pytest

from facttree.construct import ClassifierTrainConfig, train_classifier

# one line per acceptance check, printed after the run so the verdicts
# and the measured numbers survive into the captured output
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
from facttree.datagen import (
    DataGenConfig,
    KgGenConfig,
    classifier_pairs,
    generate_dataset,
    generate_kg,
    labeler_examples,
    split_dataset,
    surface_relations,
)
from facttree.evaluate import Models
from facttree.kg import KnowledgeGraph
from facttree.locate import (
    LabelerTrainConfig,
    NLFactTree,
    RelationMatcher,
    build_default_table,
    train_labeler,
)
from facttree.reason import ScorerTrainConfig, train_scorer
from facttree.syntax import parse_bracketed

# -- walkthrough question ------------------------------------------------

RAW_QUESTION = (
    "(ROOT (SBARQ (WHNP (WP Who)) (SQ (VP (VBD joined) (NP (NP (DT an) "
    "(NNP NBA) (NN team)) (PP (IN in) (NP (NNP Los) (NNP Angeles)))) "
    "(PP (IN in) (NP (NP (DT the) (NN year)) (SBAR (NP (DT the) "
    "(NNPS Warriors)) (VP (VBD won) (NP (DT the) (NNP NBA) "
    "(NN championship)))))))) (. ?)))"
)

GOLD_NL_JSON = {
    "items": [
        {"ph": "answer"},
        "joined",
        {"ph": 0},
        "in",
        "the year",
        {"ph": 1},
    ],
    "children": [
        {"items": ["an NBA team", "in", "Los Angeles"], "children": []},
        {"items": ["the Warriors", "won", "the NBA championship"], "children": []},
    ],
}

GOLD_KG_JSON = {
    "s": {"ph": "answer"},
    "p": "join",
    "o": {"ph": ["child", 0]},
    "attrs": [["time", {"ph": ["child", 1]}]],
    "children": [
        {"s": {"ph": "up"}, "p": "locate", "o": "Los Angeles",
         "attrs": [], "children": []},
        {"s": "the Warriors", "p": "win", "o": "the NBA championship",
         "attrs": [["time", {"ph": "up"}]], "children": []},
    ],
}

GOLD_TAGS = [
    ("s", "p", "o", "a", "a", "v"),
    ("s", "p", "o"),
    ("s", "p", "o"),
]

SYNONYMS = {
    "in": "locate",
    "in the year": "time",
    "joined": "join",
    "won": "win",
}

WALK_ANSWER = "LeBron James"


def build_walk_kg() -> KnowledgeGraph:
    kg = KnowledgeGraph()
    kg.add("LeBron James", "join", "the Lakers", (("time", "2015"),))
    kg.add("LeBron James", "join", "the Lakers", (("time", "2018"),))
    kg.add("Stephen Curry", "join", "the Warriors", (("time", "2009"),))
    kg.add("Kevin Durant", "join", "the Warriors", (("time", "2016"),))
    kg.add("the Lakers", "locate", "Los Angeles")
    kg.add("the Clippers", "locate", "Los Angeles")
    kg.add("the Warriors", "win", "the NBA championship", (("time", "2015"),))
    kg.add("the Warriors", "win", "the NBA championship", (("time", "2017"),))
    return kg


@pytest.fixture
def walk_kg() -> KnowledgeGraph:
    return build_walk_kg()


@pytest.fixture
def raw_tree():
    return parse_bracketed(RAW_QUESTION)


@pytest.fixture
def gold_nl() -> NLFactTree:
    return NLFactTree.from_json(GOLD_NL_JSON)


@pytest.fixture
def walk_matcher(walk_kg) -> RelationMatcher:
    return RelationMatcher(build_default_table(walk_kg, SYNONYMS))


# -- desk-scale corpus and models ----------------------------------------
#
# One seed, one graph, one dataset, one model set; the acceptance tests
# that compare configurations all read from here so they agree on what
# "the trained models" means. Training-set dedup matters: 800 items
# collapse to a few dozen distinct label structures, and full-batch
# training on the deduped sets converges in seconds.

DESK_LAMBDA = 1.5
DESK_CLASSIFIER_CFG = ClassifierTrainConfig(epochs=400, lr=1e-3, seed=0)
DESK_LABELER_CFG = LabelerTrainConfig(epochs=400, lr=1e-3, seed=0)
DESK_SCORER_CFG = ScorerTrainConfig(epochs=2500, lr=3e-3, neg_ratio=5,
                                    val_fraction=0.0, seed=0)


def dedupe_labeler_examples(items):
    return sorted(set(labeler_examples(items)))


def _skeleton(node) -> str:
    lab = node.label if node.label is not None else "@"
    kids = "".join(_skeleton(c) for c in node.children)
    return "(" + lab + kids + ")"


def dedupe_classifier_pairs(items):
    seen, out = set(), []
    for tree, nl in classifier_pairs(items):
        key = _skeleton(tree)
        if key not in seen:
            seen.add(key)
            out.append((tree, nl))
    return out


@pytest.fixture(scope="session")
def desk_kg() -> KnowledgeGraph:
    return generate_kg(KgGenConfig())


@pytest.fixture(scope="session")
def desk_items(desk_kg):
    return generate_dataset(desk_kg, DataGenConfig(n_items=1000, seed=0))


@pytest.fixture(scope="session")
def desk_splits(desk_items):
    return split_dataset(desk_items, seed=0)


@pytest.fixture(scope="session")
def desk_split_items(desk_items, desk_splits):
    by_id = {it.id: it for it in desk_items}
    return {name: [by_id[i] for i in ids] for name, ids in desk_splits.items()}


@pytest.fixture(scope="session")
def desk_train_time():
    """Mutable cell the model fixtures add their wall time into."""
    return {"seconds": 0.0}


@pytest.fixture(scope="session")
def desk_classifier(desk_split_items, desk_train_time):
    import time

    t0 = time.time()
    clf, _ = train_classifier(
        dedupe_classifier_pairs(desk_split_items["train"]),
        dedupe_classifier_pairs(desk_split_items["valid"]),
        DESK_CLASSIFIER_CFG,
    )
    desk_train_time["seconds"] += time.time() - t0
    return clf


@pytest.fixture(scope="session")
def desk_labeler(desk_split_items, desk_train_time):
    import time

    t0 = time.time()
    lab, _ = train_labeler(
        dedupe_labeler_examples(desk_split_items["train"]),
        dedupe_labeler_examples(desk_split_items["valid"]),
        DESK_LABELER_CFG,
    )
    desk_train_time["seconds"] += time.time() - t0
    return lab


@pytest.fixture(scope="session")
def desk_matcher(desk_kg):
    return RelationMatcher(build_default_table(desk_kg, surface_relations()))


@pytest.fixture(scope="session")
def desk_scorer(desk_kg, desk_train_time):
    import time

    t0 = time.time()
    scorer, _ = train_scorer(desk_kg, DESK_SCORER_CFG)
    desk_train_time["seconds"] += time.time() - t0
    return scorer


@pytest.fixture(scope="session")
def desk_models(desk_classifier, desk_labeler, desk_matcher, desk_scorer):
    return Models(
        classifier=desk_classifier,
        labeler=desk_labeler,
        matcher=desk_matcher,
        scorer=desk_scorer,
    )
