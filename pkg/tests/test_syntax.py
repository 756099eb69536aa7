import pytest

from facttree.syntax import (
    SynNode,
    SyntaxError_,
    leaf_items,
    parse_bracketed,
    preprocess,
    question_text,
    serialize,
)

from conftest import RAW_QUESTION


def test_parse_serialize_round_trip():
    tree = parse_bracketed(RAW_QUESTION)
    assert serialize(tree) == RAW_QUESTION


def test_parse_simple_shapes():
    tree = parse_bracketed("(ROOT (NP (DT the) (NN dog)))")
    assert tree.label == "ROOT"
    np_ = tree.children[0]
    assert [c.token for c in np_.children[0].children] == ["the"]
    assert np_.children[1].children[0].syntax_label == "NN"


def test_parse_multiword_leaf():
    # consecutive bare tokens inside one bracket are one leaf
    tree = parse_bracketed("(NP the big dog)")
    assert len(tree.children) == 1
    assert tree.children[0].token == "the big dog"


def test_parse_errors():
    for bad in ["", "(NP", "(NP (DT the))(", "NP dog)", "(NP ())"]:
        with pytest.raises(SyntaxError_):
            parse_bracketed(bad)


def test_node_constructor_validation():
    with pytest.raises(SyntaxError_):
        SynNode()
    with pytest.raises(SyntaxError_):
        SynNode(label="NP", token="dog")


def test_question_text():
    tree = parse_bracketed("(ROOT (SQ (WP Who) (VBD won)) (. ?))")
    assert question_text(tree) == "Who won ?"


def test_preprocess_merges_plain_np():
    tree = parse_bracketed("(ROOT (SQ (NP (DT the) (NN dog)) (VBD ran)) (. ?))")
    out = preprocess(tree)
    np_ = out.children[0].children[0]
    assert np_.label == "NP"
    assert len(np_.children) == 1
    assert np_.children[0].token == "the dog"
    assert np_.children[0].syntax_label == "NP"


def test_preprocess_leaves_whnp_alone():
    tree = parse_bracketed("(ROOT (SBARQ (WHNP (WDT which) (NN party)) (SQ (VBD won))) (. ?))")
    out = preprocess(tree)
    whnp = out.children[0].children[0]
    assert whnp.label == "WHNP"
    assert [c.children[0].token for c in whnp.children] == ["which", "party"]


def test_preprocess_collapses_unary_chain():
    tree = parse_bracketed("(ROOT (SBARQ (WHNP (WP Who)) (SQ (VBD won))) (. ?))")
    out = preprocess(tree)
    whnp = out.children[0].children[0]
    assert whnp.label == "WHNP"
    assert len(whnp.children) == 1
    assert whnp.children[0].token == "Who"
    assert whnp.children[0].syntax_label == "WHNP"


def test_preprocess_returns_copy():
    tree = parse_bracketed(RAW_QUESTION)
    before = serialize(tree)
    preprocess(tree)
    assert serialize(tree) == before


def test_preprocess_walkthrough_leaf_items():
    # punctuation is dropped during preprocessing
    out = preprocess(parse_bracketed(RAW_QUESTION))
    items = leaf_items(out)
    assert items == [
        ("Who", "WHNP"),
        ("joined", "VBD"),
        ("an NBA team", "NP"),
        ("in", "IN"),
        ("Los Angeles", "NP"),
        ("in", "IN"),
        ("the year", "NP"),
        ("the Warriors", "NP"),
        ("won", "VBD"),
        ("the NBA championship", "NP"),
    ]
