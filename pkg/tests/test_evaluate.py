"""Pipeline evaluation on a tiny generated corpus.

These tests run the real evaluate loop with oracles; the trained-model
end of the spectrum lives with the acceptance tests.
"""

import pytest

from facttree.datagen import DataGenConfig, KgGenConfig, generate_dataset, generate_kg, surface_relations
from facttree.evaluate import (
    EvaluateError,
    Models,
    OracleFlags,
    Outcome,
    answer_item,
    build_report,
    check_models,
    evaluate,
)
from facttree.locate import RelationMatcher, build_default_table


@pytest.fixture(scope="module")
def tiny_kg():
    return generate_kg(KgGenConfig())


@pytest.fixture(scope="module")
def tiny_items(tiny_kg):
    return generate_dataset(tiny_kg, DataGenConfig(n_items=40, seed=11))


@pytest.fixture(scope="module")
def tiny_matcher(tiny_kg):
    return RelationMatcher(build_default_table(tiny_kg, surface_relations()))


def test_check_models_rules(tiny_matcher):
    with pytest.raises(EvaluateError):
        check_models(Models(), OracleFlags())
    with pytest.raises(EvaluateError):
        check_models(Models(), OracleFlags(tree=True))
    # gold locate bypasses construction and grounding entirely
    check_models(Models(), OracleFlags(locate=True))


def test_all_oracles_reach_every_answer(tiny_kg, tiny_items):
    flags = OracleFlags(tree=True, locate=True, intra=True, inter=True)
    report = evaluate(tiny_items, tiny_kg, Models(), flags)
    assert report["n_items"] == 40
    assert report["hits_at_1"] == 1.0
    assert report["failures"] == {}


def test_oracle_locate_intra_inter(tiny_kg, tiny_items):
    flags = OracleFlags(locate=True, intra=True, inter=True)
    report = evaluate(tiny_items, tiny_kg, Models(), flags)
    assert report["hits_at_1"] == 1.0


def test_answer_item_never_raises(tiny_kg, tiny_items):
    broken = Models()  # reason stage will fail: no scorer, no oracle
    out = answer_item(tiny_items[0], tiny_kg, broken, OracleFlags(locate=True))
    assert isinstance(out, Outcome)
    assert not out.correct
    assert out.divergence == "error:reason"
    assert out.error and "ReasonError" in out.error


def test_outcome_divergence_on_wrong_answer(tiny_kg, tiny_items):
    # intra oracle alone takes lexicographic guesses: any miss must be
    # attributed to the reason stage since the tree is gold
    flags = OracleFlags(locate=True, intra=True)
    report = evaluate(tiny_items, tiny_kg, Models(), flags)
    misses = report["n_items"] - round(report["hits_at_1"] * report["n_items"])
    assert report["failures"].get("reason", 0) == misses


def test_build_report_shape():
    outcomes = [
        Outcome(item_id="a", n_facts=1, predicted="x", correct=True),
        Outcome(item_id="b", n_facts=2, predicted="y", correct=False, divergence="reason"),
        Outcome(item_id="c", n_facts=2, predicted=None, correct=False,
                divergence="error:locate", error="LocateError: no span"),
    ]
    report = build_report(outcomes, OracleFlags(), lam=1.5)
    assert report["n_items"] == 3
    assert report["hits_at_1"] == pytest.approx(1 / 3)
    assert report["by_n_facts"]["1"]["hits_at_1"] == 1.0
    assert report["by_n_facts"]["2"]["hits_at_1"] == 0.0
    assert report["failures"] == {"error:locate": 1, "reason": 1}
    assert report["errors"][0]["id"] == "c"
    assert report["config"]["lambda"] == 1.5


def test_report_includes_flags(tiny_kg, tiny_items):
    flags = OracleFlags(locate=True, intra=True, inter=True)
    report = evaluate(tiny_items[:5], tiny_kg, Models(), flags)
    assert report["config"]["oracle"] == {
        "tree": False, "locate": True, "intra": True, "inter": True}
    assert report["config"]["scorer"] is False
