import json
import subprocess
import sys

import pytest

from newsgraph import cli
from newsgraph.evaluate import confusion_and_metrics
from newsgraph.graph import read_corpus, validate


def gen_corpus(tmp_path, name="c.jsonl", seed="7", n="10"):
    out = tmp_path / name
    rc = cli.main(["corpusgen", "--preset", "pol_tiny", "--out", str(out),
                   "--seed", seed, "--n-graphs", n])
    assert rc == 0
    return out


def test_corpusgen_writes_valid_corpus(tmp_path):
    out = gen_corpus(tmp_path, n="12")
    corpus = read_corpus(out)
    assert len(corpus) == 12
    assert corpus.feature_dim == 32
    assert corpus.name == "pol_tiny"
    for g in corpus.graphs:
        assert validate(g) == []
    # resolved config is echoed into the file header
    header = json.loads(out.read_text().splitlines()[0])
    assert header["provenance"]["config"]["seed"] == 7


def test_corpusgen_seed_defaults_to_42(tmp_path):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    c = tmp_path / "c.jsonl"
    assert cli.main(["corpusgen", "--preset", "pol_tiny", "--out", str(a),
                     "--n-graphs", "5"]) == 0
    assert cli.main(["corpusgen", "--preset", "pol_tiny", "--out", str(b),
                     "--n-graphs", "5", "--seed", "42"]) == 0
    assert cli.main(["corpusgen", "--preset", "pol_tiny", "--out", str(c),
                     "--n-graphs", "5", "--seed", "43"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_identical_invocations_identical_artifacts(tmp_path):
    a = gen_corpus(tmp_path, "a.jsonl")
    b = gen_corpus(tmp_path, "b.jsonl")
    assert a.read_bytes() == b.read_bytes()
    ck1 = tmp_path / "ck1.json"
    ck2 = tmp_path / "ck2.json"
    argv = ["pretrain", "--objective", "node-mask", "--corpus", str(a),
            "--epochs", "1", "--batch-size", "8", "--hidden-dim", "8",
            "--n-layers", "1"]
    assert cli.main(argv + ["--out", str(ck1)]) == 0
    assert cli.main(argv + ["--out", str(ck2)]) == 0
    assert ck1.read_bytes() == ck2.read_bytes()


def test_pretrain_emits_checkpoint_and_runlog(tmp_path):
    corpus = gen_corpus(tmp_path)
    ck = tmp_path / "ck.json"
    rc = cli.main(["pretrain", "--objective", "retweet-count", "--corpus",
                   str(corpus), "--epochs", "2", "--batch-size", "8",
                   "--hidden-dim", "8", "--n-layers", "1", "--out", str(ck)])
    assert rc == 0
    assert ck.exists()
    log = json.loads((tmp_path / "ck.runlog.json").read_text())
    assert log["objective"] == "retweet_count"
    assert len(log["epoch_losses"]) == 2
    assert log["config"]["epochs"] == 2
    assert log["config"]["seed"] == 42


def test_finetune_predict_evaluate_chain(tmp_path, capsys):
    corpus = gen_corpus(tmp_path, n="12")
    ft = tmp_path / "ft.json"
    rc = cli.main(["finetune", "--corpus", str(corpus), "--epochs", "2",
                   "--batch-size", "8", "--hidden-dim", "8", "--n-layers", "1",
                   "--train-count", "8", "--out", str(ft)])
    assert rc == 0
    log = json.loads((tmp_path / "ft.runlog.json").read_text())
    assert len(log["train_ids"]) == 8

    preds_path = tmp_path / "p.json"
    assert cli.main(["predict", "--corpus", str(corpus), "--checkpoint",
                     str(ft), "--out", str(preds_path)]) == 0
    preds = json.loads(preds_path.read_text())
    assert len(preds["predictions"]) == 12
    for row in preds["predictions"]:
        assert 0.0 <= row["prob"] <= 1.0
        assert row["pred"] in (0, 1)
    assert preds["config"]["checkpoint"] == str(ft)

    metrics_path = tmp_path / "m.json"
    assert cli.main(["evaluate", "--corpus", str(corpus), "--checkpoint",
                     str(ft), "--out", str(metrics_path)]) == 0
    got = json.loads(metrics_path.read_text())["metrics"]
    truth = read_corpus(corpus).labels()
    pred = [row["pred"] for row in preds["predictions"]]
    want = confusion_and_metrics(truth, pred)
    assert got["accuracy"] == pytest.approx(want.accuracy)
    assert got["macro_f1"] == pytest.approx(want.macro_f1)


def test_config_file_precedence(tmp_path):
    corpus = gen_corpus(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 2, "hidden_dim": 8, "n_layers": 1,
                               "batch_size": 8}))
    ck = tmp_path / "ck.json"
    rc = cli.main(["pretrain", "--objective", "node-mask", "--corpus",
                   str(corpus), "--config", str(cfg), "--epochs", "1",
                   "--out", str(ck)])
    assert rc == 0
    log = json.loads((tmp_path / "ck.runlog.json").read_text())
    # the flag beats the file; the file beats the default
    assert log["config"]["epochs"] == 1
    assert log["config"]["hidden_dim"] == 8
    assert log["config"]["batch_size"] == 8


def test_config_file_unknown_field_rejected(tmp_path):
    corpus = gen_corpus(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epoch": 2}))
    rc = cli.main(["pretrain", "--objective", "node-mask", "--corpus",
                   str(corpus), "--config", str(cfg),
                   "--out", str(tmp_path / "ck.json")])
    assert rc == 1


def test_config_file_bad_json_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    rc = cli.main(["corpusgen", "--config", str(cfg),
                   "--out", str(tmp_path / "x.jsonl")])
    assert rc == 1


def test_usage_errors_exit_1(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["mystery"]) == 1
    assert cli.main(["corpusgen", "--mystery-flag", "1",
                     "--out", str(tmp_path / "x.jsonl")]) == 1
    assert cli.main(["corpusgen"]) == 1  # missing --out
    assert cli.main(["pretrain", "--objective", "mystery", "--corpus", "x",
                     "--out", "y"]) == 1
    err = capsys.readouterr().err
    assert "--out" in err or "out" in err


def test_data_errors_exit_2(tmp_path, capsys):
    missing = tmp_path / "missing.jsonl"
    rc = cli.main(["pretrain", "--objective", "node-mask", "--corpus",
                   str(missing), "--out", str(tmp_path / "ck.json")])
    assert rc == 2
    assert "missing.jsonl" in capsys.readouterr().err

    corrupt = tmp_path / "corrupt.jsonl"
    corrupt.write_text("this is not a corpus\n")
    rc = cli.main(["pretrain", "--objective", "node-mask", "--corpus",
                   str(corrupt), "--out", str(tmp_path / "ck.json")])
    assert rc == 2

    rc = cli.main(["corpusgen", "--out", str(tmp_path / "bad.jsonl"),
                   "--feature-dim", "1"])
    assert rc == 2


def test_help_lists_flags_with_defaults(capsys):
    assert cli.main(["--help"]) == 0
    top = capsys.readouterr().out
    for sub in ("corpusgen", "pretrain", "finetune", "predict", "evaluate",
                "experiment"):
        assert sub in top
        assert cli.main([sub, "--help"]) == 0
        text = capsys.readouterr().out
        assert "--seed" in text
        assert "default" in text
    assert cli.main(["experiment", "--help"]) == 0
    text = capsys.readouterr().out
    for flag in ("--jobs", "--low-resource", "--k", "--alpha", "--table"):
        assert flag in text


def test_experiment_subcommand(tmp_path, capsys):
    pre = gen_corpus(tmp_path, "pre.jsonl", seed="3", n="8")
    fin = gen_corpus(tmp_path, "fin.jsonl", seed="4", n="12")
    out = tmp_path / "rep.json"
    table = tmp_path / "rep.txt"
    rc = cli.main(["experiment", "--pretrain", str(pre), "--finetune", str(fin),
                   "--node-epochs", "1", "--graph-epochs", "1",
                   "--finetune-epochs", "1", "--hidden-dim", "8",
                   "--n-layers", "1", "--k", "3", "--low-resource", "4",
                   "--out", str(out), "--table", str(table)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert len(report["standard"]["setups"]) == 6
    assert report["low_resource"]["train_count"] == 4
    assert report["invocation"]["seed"] == 42
    text = table.read_text()
    assert "node-level" in text and "significant pairs" in text
    assert text in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "newsgraph.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "corpusgen" in proc.stdout
