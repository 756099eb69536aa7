"""In-process CLI workflow: every subcommand against a temp workspace."""

import json
import os

import pytest

from facttree.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    kg = str(ws / "kg.jsonl")
    data = str(ws / "data")
    assert main(["gen-kg", "--out", kg, "--seed", "0"]) == 0
    assert main(["gen-data", "--kg", kg, "--out-dir", data, "--items", "30", "--seed", "0"]) == 0
    return {"dir": ws, "kg": kg, "data": data}


def test_gen_kg_output_parses(workspace):
    with open(workspace["kg"], encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        assert "entities" in header and "relations" in header
        n = sum(1 for _ in fh)
    assert n > 1000


def test_gen_data_writes_splits(workspace):
    names = sorted(os.listdir(workspace["data"]))
    assert names == ["splits.json", "test.jsonl", "train.jsonl", "valid.jsonl"]
    manifest = json.load(open(os.path.join(workspace["data"], "splits.json")))
    assert manifest["counts"] == {"train": 24, "valid": 3, "test": 3}


def test_gen_table(workspace):
    table = str(workspace["dir"] / "table.tsv")
    assert main(["gen-table", "--kg", workspace["kg"], "--out", table]) == 0
    with open(table, encoding="utf-8") as fh:
        assert fh.readline() == "dim 50\n"
        name, _, rest = fh.readline().rstrip("\n").partition("\t")
        assert name and len(rest.split()) == 50


def test_corrupt_kg(workspace):
    out = str(workspace["dir"] / "kg_half.jsonl")
    assert main(["corrupt-kg", "--kg", workspace["kg"], "--out", out,
                 "--fraction", "0.5", "--seed", "1"]) == 0
    kept = sum(1 for _ in open(out, encoding="utf-8")) - 1
    total = sum(1 for _ in open(workspace["kg"], encoding="utf-8")) - 1
    assert kept == total - round(total * 0.5)


def test_train_all_three_models(workspace, capsys):
    ws = workspace["dir"]
    assert main(["train", "classifier", "--data", workspace["data"],
                 "--out", str(ws / "clf.npz"), "--epochs", "2", "--lr", "1e-3"]) == 0
    assert main(["train", "labeler", "--data", workspace["data"],
                 "--out", str(ws / "lab.npz"), "--epochs", "2", "--lr", "1e-3"]) == 0
    assert main(["train", "scorer", "--kg", workspace["kg"],
                 "--out", str(ws / "sc.npz"), "--epochs", "2", "--neg-ratio", "1",
                 "--val-fraction", "0.25"]) == 0
    out = capsys.readouterr().out
    assert out.count("wrote") == 3
    for name in ("clf.npz", "lab.npz", "sc.npz"):
        assert (ws / name).exists()


def test_answer_with_oracles(workspace, capsys):
    first_id = json.load(open(os.path.join(workspace["data"], "splits.json")))["ids"]["train"][0]
    code = main(["answer", "--kg", workspace["kg"], "--data", workspace["data"],
                 "--id", first_id, "--oracle", "all"])
    assert code == 0
    blob = json.loads(capsys.readouterr().out)
    assert blob["id"] == first_id
    assert blob["correct"] is True
    assert blob["predicted"] == blob["gold"]


def test_eval_oracle_all_to_file(workspace):
    report_path = str(workspace["dir"] / "report.json")
    code = main(["eval", "--kg", workspace["kg"], "--data", workspace["data"],
                 "--split", "test", "--oracle", "all", "--report", report_path])
    assert code == 0
    report = json.load(open(report_path))
    assert report["hits_at_1"] == 1.0
    assert report["n_items"] == 3
    assert report["config"]["oracle"]["locate"] is True


def test_eval_stdout(workspace, capsys):
    code = main(["eval", "--kg", workspace["kg"], "--data", workspace["data"],
                 "--split", "valid", "--oracle", "locate,intra,inter"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_items"] == 3


# -- failure modes -------------------------------------------------------


def test_usage_error_is_exit_1(capsys):
    assert main(["gen-kg"]) == 1  # --out is required
    assert "error" in capsys.readouterr().err


def test_unknown_oracle_is_exit_1(workspace, capsys):
    code = main(["eval", "--kg", workspace["kg"], "--data", workspace["data"],
                 "--oracle", "telepathy"])
    assert code == 1
    assert "telepathy" in capsys.readouterr().err


def test_missing_models_is_exit_1(workspace, capsys):
    code = main(["eval", "--kg", workspace["kg"], "--data", workspace["data"]])
    assert code == 1
    assert "classifier" in capsys.readouterr().err


def test_train_without_data_is_exit_1(capsys):
    assert main(["train", "classifier", "--out", "/tmp/x.npz"]) == 1
    assert "--data" in capsys.readouterr().err


def test_bad_fraction_is_exit_2(workspace, capsys):
    out = str(workspace["dir"] / "never.jsonl")
    code = main(["corrupt-kg", "--kg", workspace["kg"], "--out", out,
                 "--fraction", "1.5", "--seed", "0"])
    assert code == 2
    assert not os.path.exists(out)


def test_unknown_item_is_exit_2(workspace, capsys):
    code = main(["answer", "--kg", workspace["kg"], "--data", workspace["data"],
                 "--id", "q99999", "--oracle", "all"])
    assert code == 2


def test_garbage_kg_is_exit_2(workspace, capsys):
    bad = str(workspace["dir"] / "bad.jsonl")
    with open(bad, "w", encoding="utf-8") as fh:
        fh.write("this is not json\n")
    code = main(["eval", "--kg", bad, "--data", workspace["data"], "--oracle", "all"])
    assert code == 2
