import json

import pytest

from facttree.datagen import (
    DataError,
    DataGenConfig,
    KgGenConfig,
    _largest_remainder,
    classifier_pairs,
    generate_dataset,
    generate_kg,
    item_from_json,
    item_to_json,
    labeler_examples,
    load_dataset,
    load_templates,
    save_dataset,
    split_dataset,
    surface_relations,
    validate_templates,
)
from facttree.kg import save_kg
from facttree.locate import KgFactTree, TAGS
from facttree.reason import brute_force_answer
from facttree.syntax import parse_bracketed


@pytest.fixture(scope="module")
def small_kg():
    return generate_kg(KgGenConfig())


@pytest.fixture(scope="module")
def small_items(small_kg):
    return generate_dataset(small_kg, DataGenConfig(n_items=60, seed=7))


# -- template catalog ----------------------------------------------------


def test_catalog_has_34_templates():
    cat = load_templates()
    tpls = cat["templates"]
    assert len(tpls) == 34
    assert len({t["id"] for t in tpls}) == 34
    for t in tpls:
        assert t["n_facts"] in (1, 2, 3)
        assert len(t["facts"]) == t["n_facts"]
        assert len(t["labels"]) == t["n_facts"]
        for tags in t["labels"]:
            assert set(tags) <= set(TAGS)


def test_catalog_mix_spans_fact_counts():
    tpls = load_templates()["templates"]
    by_n = {n: sum(1 for t in tpls if t["n_facts"] == n) for n in (1, 2, 3)}
    assert all(by_n[n] > 0 for n in (1, 2, 3))


def test_surface_relations_shape():
    surf = surface_relations()
    assert surf and all(isinstance(k, str) and isinstance(v, str) for k, v in surf.items())


def test_validate_templates_green(small_kg):
    checked = validate_templates(small_kg)
    assert len(checked) == 34


# -- graph generation ----------------------------------------------------


def test_generate_kg_counts(small_kg):
    cfg = KgGenConfig()
    assert abs(small_kg.n_facts - cfg.n_facts) <= cfg.n_facts * 0.1
    assert small_kg.n_entities <= cfg.n_entities
    # attribute names intern alongside the binary and n-ary predicates
    assert len(small_kg.relations) <= cfg.n_binary_rel + cfg.n_nary_rel + 8
    assert small_kg.n_nary_relations >= 2


def test_generate_kg_deterministic():
    a = generate_kg(KgGenConfig(n_entities=200, n_facts=500))
    b = generate_kg(KgGenConfig(n_entities=200, n_facts=500))
    assert a.entities.names() == b.entities.names()
    assert [f.key() for f in a.facts] == [f.key() for f in b.facts]


# -- dataset generation --------------------------------------------------


def test_mix_counts_exact(small_items):
    targets = _largest_remainder(60, DataGenConfig().mix)
    got = [sum(1 for it in small_items if it.n_facts == n) for n in (1, 2, 3)]
    assert got == targets
    assert sum(got) == 60


def test_items_have_unique_ids(small_items):
    assert len({it.id for it in small_items}) == len(small_items)


def test_every_item_answerable(small_kg, small_items):
    for it in small_items[::7]:
        tree = KgFactTree.from_json(it.gold_kg_tree, small_kg)
        answers = brute_force_answer(small_kg, tree)
        assert {small_kg.entity_name(a) for a in answers} == {it.answer}


def test_answer_never_named_in_question(small_items):
    for it in small_items:
        assert it.answer not in it.question


def test_generation_deterministic(small_kg, small_items):
    again = generate_dataset(small_kg, DataGenConfig(n_items=60, seed=7))
    a = [json.dumps(item_to_json(it), sort_keys=True) for it in small_items]
    b = [json.dumps(item_to_json(it), sort_keys=True) for it in again]
    assert a == b


def test_different_seed_changes_dataset(small_kg, small_items):
    other = generate_dataset(small_kg, DataGenConfig(n_items=60, seed=8))
    a = [it.question for it in small_items]
    b = [it.question for it in other]
    assert a != b


def test_oversized_request_fails_loudly(small_kg):
    with pytest.raises(DataError):
        generate_dataset(small_kg, DataGenConfig(n_items=200_000, seed=0))


# -- splits --------------------------------------------------------------


def test_split_ratios(small_items):
    splits = split_dataset(small_items, seed=0)
    assert len(splits["train"]) == 48
    assert len(splits["valid"]) == 6
    assert len(splits["test"]) == 6
    all_ids = splits["train"] + splits["valid"] + splits["test"]
    assert sorted(all_ids) == sorted(it.id for it in small_items)


def test_split_stratified(small_items):
    splits = split_dataset(small_items, seed=0)
    by_id = {it.id: it for it in small_items}
    for n in (1, 2, 3):
        total = sum(1 for it in small_items if it.n_facts == n)
        in_test = sum(1 for i in splits["test"] if by_id[i].n_facts == n)
        assert abs(in_test - total * 0.1) <= 1


def test_split_deterministic(small_items):
    assert split_dataset(small_items, seed=3) == split_dataset(small_items, seed=3)
    assert split_dataset(small_items, seed=3) != split_dataset(small_items, seed=4)


def test_odd_total_stays_within_one(small_kg):
    items = generate_dataset(small_kg, DataGenConfig(n_items=13, seed=1))
    splits = split_dataset(items, seed=0)
    counts = [len(splits[n]) for n in ("train", "valid", "test")]
    assert sum(counts) == 13
    for got, want in zip(counts, (10.4, 1.3, 1.3)):
        assert abs(got - want) <= 1


# -- io ------------------------------------------------------------------


def test_save_load_round_trip(tmp_path, small_items):
    splits = split_dataset(small_items, seed=0)
    save_dataset(str(tmp_path), small_items, splits)
    back = load_dataset(str(tmp_path))
    assert [it.id for it in back["train"]] == splits["train"]
    orig = {it.id: item_to_json(it) for it in small_items}
    for name in ("train", "valid", "test"):
        for it in back[name]:
            assert item_to_json(it) == orig[it.id]


def test_item_json_rejects_missing_fields(small_items):
    blob = item_to_json(small_items[0])
    del blob["answer"]
    with pytest.raises(DataError):
        item_from_json(blob)


def test_load_rejects_garbage_line(tmp_path, small_items):
    splits = split_dataset(small_items, seed=0)
    save_dataset(str(tmp_path), small_items, splits)
    with open(tmp_path / "test.jsonl", "a", encoding="utf-8") as fh:
        fh.write("{not json\n")
    with pytest.raises(DataError):
        load_dataset(str(tmp_path))


# -- training data extraction --------------------------------------------


def test_classifier_pairs_shape(small_items):
    pairs = classifier_pairs(small_items[:5])
    assert len(pairs) == 5
    for tree, nl in pairs:
        assert tree.label == "ROOT"
        assert nl.n_facts >= 1


def test_labeler_examples_shape(small_items):
    examples = labeler_examples(small_items[:10])
    assert len(examples) == sum(it.n_facts for it in small_items[:10])
    for labels, tags in examples:
        assert len(labels) == len(tags)
        assert set(tags) <= set(TAGS)


def test_largest_remainder_properties():
    assert _largest_remainder(10, (0.8, 0.1, 0.1)) == [8, 1, 1]
    assert _largest_remainder(0, (0.5, 0.5)) == [0, 0]
    for total in (7, 99, 1000):
        parts = _largest_remainder(total, (0.527, 0.333, 0.140))
        assert sum(parts) == total
