import json
from pathlib import Path

import pytest

from liftbox import cli
from liftbox.formats import read_records

DATA = Path(__file__).parent / "data"


def test_generate_then_eval(small_dataset, tmp_path, capsys):
    out, stats, report = tmp_path / "boxes.jsonl", tmp_path / "stats.json", tmp_path / "report.json"
    code = cli.main(["generate", "--manifest", str(small_dataset), "--out", str(out),
                     "--stats", str(stats), "--workers", "2"])
    assert code == 0
    assert "boxes from" in capsys.readouterr().out
    assert len(read_records(out)) == json.loads(stats.read_text())["summary"]["emitted"]

    code = cli.main(["eval", "--pred", str(out), "--gt", str(small_dataset.parent / "gt.jsonl"),
                     "--report", str(report), "--partition", str(small_dataset.parent / "partition.json")])
    assert code == 0
    doc = json.loads(report.read_text())
    assert doc["precision"] == 1.0 and doc["recall"] == 1.0
    assert "precision" in capsys.readouterr().out


def test_invalid_input_exits_1(tmp_path, capsys):
    (tmp_path / "m.json").write_text('{"images": [{"image_id": "x"}]}')
    code = cli.main(["generate", "--manifest", str(tmp_path / "m.json"),
                     "--out", str(tmp_path / "o"), "--stats", str(tmp_path / "s")])
    assert code == 1
    assert "images[0]" in capsys.readouterr().err


def test_bad_config_exits_1(small_dataset, tmp_path):
    (tmp_path / "c.yaml").write_text("workers: -1\n")
    code = cli.main(["generate", "--manifest", str(small_dataset), "--config", str(tmp_path / "c.yaml"),
                     "--out", str(tmp_path / "o"), "--stats", str(tmp_path / "s")])
    assert code == 1


def test_missing_file_exits_2(tmp_path, capsys):
    code = cli.main(["eval", "--pred", str(tmp_path / "none.jsonl"), "--gt", str(tmp_path / "none.jsonl"),
                     "--report", str(tmp_path / "r.json")])
    assert code == 2
    assert "I/O error" in capsys.readouterr().err


def test_unwritable_output_exits_2(small_dataset, tmp_path):
    code = cli.main(["generate", "--manifest", str(small_dataset), "--out", str(tmp_path / "no" / "o"),
                     "--stats", str(tmp_path / "s")])
    assert code == 2


def test_losses_selftest(capsys):
    assert cli.main(["losses", "selftest", "--trials", "3", "--seed", "4"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["seed"] == 4
    assert all(c["trials"] == 3 for c in report["checks"])


def test_thresholds_build(tmp_path, capsys):
    args = ["thresholds", "build", "--ref-counts", str(DATA / "ref_counts.yaml"),
            "--embeddings", str(DATA / "embeddings.json"), "--classes", str(DATA / "classes.yaml")]
    assert cli.main(args + ["--out", str(tmp_path / "t.json")]) == 0
    table = {c["class_id"]: c for c in json.loads((tmp_path / "t.json").read_text())["classes"]}
    assert table[1]["threshold"] == 413
    assert table[3]["threshold"] == 1630
    assert table[5]["threshold"] == 188
    assert cli.main(args) == 0
    assert json.loads(capsys.readouterr().out)["classes"][0]["class_id"] == 1


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["losses"])
    assert exc.value.code == 2
