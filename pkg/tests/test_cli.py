import json

import pytest

from efr import cli, demo
from efr.corpus import Annotation, AnnotationFile, write_annotations, write_dialogues, write_instances
from tests._util import table1_dialogue, table1_gold, table1_instances

TINY = {"d_model": 8, "heads": 2, "d_ff": 16, "gru_hidden": 6, "fusion_hidden": [16, 8],
        "max_speakers_per_instance": 4, "batch_size": 4}


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def files(tmp_path):
    write_dialogues([table1_dialogue()], tmp_path / "dialogues.jsonl")
    write_annotations(AnnotationFile("gold", table1_gold()), tmp_path / "gold.jsonl")
    write_instances(demo.load("demo_train")[:8], tmp_path / "train.jsonl")
    write_instances(demo.load("demo_dev")[:4], tmp_path / "dev.jsonl")
    (tmp_path / "config.json").write_text(json.dumps(TINY))
    return tmp_path


def test_build_instances_and_stats_on_table1(files, capsys):
    code, _, _ = run(capsys, "build-instances", "--dialogues", files / "dialogues.jsonl", "--gold",
                     files / "gold.jsonl", "--out", files / "inst.jsonl")
    assert code == 0
    code, out, _ = run(capsys, "stats", "--instances", files / "inst.jsonl", "--format", "json")
    assert code == 0
    matrix = json.loads(out)["flip_matrix"]
    nonzero = {(s, t): v for s, row in matrix.items() for t, v in row.items() if v}
    assert nonzero == {("fear", "joy"): 1, ("joy", "anger"): 1}
    code, out, _ = run(capsys, "stats", "--instances", files / "inst.jsonl")
    assert code == 0 and "Joy" in out.splitlines()[0]


def test_train_epochs0_then_eval(files, capsys):
    code, out, _ = run(capsys, "train", "--train", files / "train.jsonl", "--dev", files / "dev.jsonl", "--config",
                       files / "config.json", "--seed", 1, "--epochs", 0, "--out", files / "m.ckpt")
    assert code == 0 and out == ""
    code, out, _ = run(capsys, "eval", "--test", files / "dev.jsonl", "--ckpt", files / "m.ckpt",
                       "--directionality", "--classwise", "--train", files / "train.jsonl")
    assert code == 0
    report = json.loads(out)
    assert set(report) == {"metrics", "directionality", "classwise"}
    assert 0.0 <= report["metrics"]["weighted_f1"] <= 1.0
    code, out, _ = run(capsys, "eval", "--test", files / "dev.jsonl", "--ckpt", files / "m.ckpt", "--scope",
                       "triggers", "--format", "table")
    assert code == 0 and out.startswith("[metrics]")


def test_same_command_twice_is_byte_identical(files, capsys):
    outputs = []
    for k in range(2):
        args = ["train", "--train", files / "train.jsonl", "--dev", files / "dev.jsonl", "--config",
                files / "config.json", "--seed", 3, "--epochs", 2, "--out", files / f"m{k}.ckpt"]
        code, log, _ = run(capsys, *args)
        assert code == 0
        code, _, _ = run(capsys, "predict", "--instances", files / "dev.jsonl", "--ckpt", files / f"m{k}.ckpt",
                         "--out", files / f"p{k}.jsonl")
        assert code == 0
        outputs.append((log, (files / f"m{k}.ckpt").read_bytes(), (files / f"p{k}.jsonl").read_bytes()))
    assert outputs[0] == outputs[1]
    assert len(outputs[0][0].splitlines()) == 2


def test_train_log_file_and_modules(files, capsys):
    code, out, _ = run(capsys, "train", "--train", files / "train.jsonl", "--config", files / "config.json",
                       "--epochs", 1, "--modules", "GUS", "GES", "--log", files / "log.jsonl", "--out",
                       files / "m.ckpt")
    assert code == 0 and out == ""
    assert json.loads((files / "log.jsonl").read_text())["epoch"] == 1


def test_predict_records_and_report(files, capsys):
    run(capsys, "train", "--train", files / "train.jsonl", "--config", files / "config.json", "--epochs", 0,
        "--out", files / "m.ckpt")
    write_instances(table1_instances(), files / "t1.jsonl")
    code, out, _ = run(capsys, "predict", "--instances", files / "t1.jsonl", "--ckpt", files / "m.ckpt", "--out",
                       files / "p.jsonl", "--report")
    assert code == 0 and "Ross" in out
    records = [json.loads(l) for l in (files / "p.jsonl").read_text().splitlines()]
    assert [r["instance_id"] for r in records] == ["t1#2", "t1#4"]
    assert len(records[1]["per_utterance"]) == 5


def test_agreement(files, capsys):
    a = AnnotationFile("a", {"x#3": Annotation("x#3", {0, 1}, {})})
    b = AnnotationFile("b", {"x#3": Annotation("x#3", {0}, {})})
    write_annotations(a, files / "a.jsonl")
    write_annotations(b, files / "b.jsonl")
    code, out, _ = run(capsys, "agreement", "--annotations", files / "a.jsonl", files / "b.jsonl")
    assert code == 0 and json.loads(out)["average"] == pytest.approx(8 / 15)


def test_ablate_epochs0(files, capsys):
    code, out, _ = run(capsys, "ablate", "--train", files / "train.jsonl", "--dev", files / "dev.jsonl",
                       "--config", files / "config.json", "--epochs", 0, "--setups", "fine27", "--format", "json")
    assert code == 0 and set(json.loads(out)) == {"GUS", "+GES", "+GSS", "+SSES"}


def test_validation_errors_exit_1(files, capsys):
    (files / "bad.jsonl").write_text('{"dialogue_id": "d", "utterances": [{"index": 0}]}\n')
    code, _, err = run(capsys, "stats", "--instances", files / "bad.jsonl")
    assert code == 1 and "bad.jsonl:1" in err
    code, _, err = run(capsys, "stats", "--instances", files / "missing.jsonl")
    assert code == 1 and "missing.jsonl" in err
    (files / "cfg.json").write_text('{"learning_rate": 1}')
    code, _, err = run(capsys, "train", "--train", files / "train.jsonl", "--config", files / "cfg.json", "--out",
                       files / "m.ckpt")
    assert code == 1 and "learning_rate" in err
    (files / "junk.ckpt").write_bytes(b"junk")
    code, _, _ = run(capsys, "eval", "--test", files / "dev.jsonl", "--ckpt", files / "junk.ckpt")
    assert code == 1


def test_runtime_error_exit_2(files, capsys, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "train", boom)
    code, _, err = run(capsys, "train", "--train", files / "train.jsonl", "--out", files / "m.ckpt")
    assert code == 2 and "disk on fire" in err
