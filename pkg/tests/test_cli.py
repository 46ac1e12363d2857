import csv

import pytest

from semistyle import synthetic
from semistyle.cli import run_cli

TINY = [
    "--classifier_epochs", "1",
    "--bootstrap_epochs", "2",
    "--rl_steps", "2",
    "--val_interval", "1",
    "--bootstrap_pair_count", "20",
    "--batch_size", "8",
    "--model.layers", "2", "--model.model_dim", "16", "--model.ff_dim", "32", "--model.heads", "2",
    "--classifier.layers", "2", "--classifier.model_dim", "16", "--classifier.ff_dim", "32", "--classifier.heads", "2",
    "--decode.beam_size", "2",
]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    synthetic.write_corpus(synthetic.polarity_corpus(0, n_train=120, n_valid=8, n_test=8), d)
    return d


def test_mine_pairs_lexical_writes_tsv(data, tmp_path):
    assert run_cli(["mine-pairs", "--data", str(data), "--out", str(tmp_path), "--method", "lexical", "--miner.n_max", "1"]) == 0
    rows = list(csv.reader(open(tmp_path / "pairs.tsv"), delimiter="\t"))
    assert rows[0] == ["source_style", "source_text", "target_text", "method", "similarity"]
    assert len(rows) > 1 and all(r[3] == "lexical" for r in rows[1:])
    cfg = (tmp_path / "config.txt").read_text()
    assert "miner.method = lexical" in cfg and "miner.n_max = 1" in cfg
    # refuses to overwrite without --force
    assert run_cli(["mine-pairs", "--data", str(data), "--out", str(tmp_path)]) != 0
    assert run_cli(["mine-pairs", "--data", str(data), "--out", str(tmp_path), "--force"]) == 0


def test_bad_config_key_is_named(data, tmp_path, capsys):
    assert run_cli(["mine-pairs", "--data", str(data), "--out", str(tmp_path), "--reward.nope", "1"]) != 0
    assert "reward.nope" in capsys.readouterr().err


def test_missing_input_reports_path(tmp_path, capsys):
    assert run_cli(["mine-pairs", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "o")]) != 0
    assert "absent" in capsys.readouterr().err


def test_unknown_command_rejected():
    assert run_cli(["frobnicate"]) != 0


def test_config_file_and_overrides(data, tmp_path):
    (tmp_path / "c.txt").write_text("miner.method = semantic\nseed = 3\n")
    out = tmp_path / "o"
    assert run_cli(["mine-pairs", "--data", str(data), "--out", str(out), "--config", str(tmp_path / "c.txt"), "--seed", "9"]) == 0
    cfg = (out / "config.txt").read_text()
    assert "seed = 9" in cfg and "miner.method = semantic" in cfg
    assert not (out / "markers.tsv").exists()


@pytest.fixture(scope="module")
def run_dir(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run_cli(["run-all", "--data", str(data), "--out", str(out), "--miner.n_max", "1", *TINY]) == 0
    return out


def test_run_all_outputs(run_dir):
    for name in ("config.txt", "metrics.csv", "rewards.csv", "best.ckpt", "generator.ckpt", "vocab.txt", "reward.clf", "eval.clf", "pairs.tsv", "test_report.csv"):
        assert (run_dir / name).exists(), name
    header = (run_dir / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,acc,self_bleu,g2,h2,distinct1"


def test_staged_commands_chain(data, run_dir, tmp_path):
    clf_dir, boot, rl = tmp_path / "clf", tmp_path / "boot", tmp_path / "rl"
    assert run_cli(["train-classifier", "--data", str(data), "--out", str(clf_dir), *TINY]) == 0
    assert run_cli(["bootstrap", "--data", str(data), "--pairs", str(run_dir / "pairs.tsv"), "--out", str(boot), *TINY]) == 0
    assert (boot / "bootstrap.ckpt").exists() and (boot / "generator.ckpt").exists()
    args = ["train-rl", "--data", str(data), "--init", str(boot / "generator.ckpt"), "--classifiers", str(clf_dir), "--out", str(rl), *TINY]
    assert run_cli(args + ["--reward.mode", "sequence"]) == 0
    assert (rl / "metrics.csv").exists()
    assert "reward.mode = sequence" in (rl / "config.txt").read_text()


def test_transfer_evaluate_and_salience(run_dir, tmp_path, capsys):
    src = tmp_path / "in.txt"
    src.write_text("the food was awful today\nthis place is rude here\n")
    outp = tmp_path / "out.txt"
    common = ["--vocab", str(run_dir / "vocab.txt")]
    assert run_cli(["transfer", "--model", str(run_dir / "generator.ckpt"), *common, "--style", "T", "--input", str(src), "--output", str(outp), "--decode.mode", "greedy"]) == 0
    assert len(outp.read_text().splitlines()) == 2
    capsys.readouterr()
    assert run_cli(["evaluate", "--outputs", str(outp), "--inputs", str(src), "--style", "T", "--classifier", str(run_dir / "eval.clf"), *common]) == 0
    assert capsys.readouterr().out.startswith("accuracy,self_bleu,g2,h2,n_sentences")
    one = tmp_path / "one.txt"
    one.write_text("the food was great today\n")
    assert run_cli(["evaluate", "--outputs", str(outp), "--references", str(one), "--style", "T", "--classifier", str(run_dir / "eval.clf"), *common]) != 0
    assert "misaligned" in capsys.readouterr().err
    sal = tmp_path / "sal.csv"
    assert run_cli(["dump-salience", "--classifier", str(run_dir / "reward.clf"), *common, "--input", str(src), "--output", str(sal)]) == 0
    rows = list(csv.DictReader(open(sal)))
    assert list(rows[0]) == ["sentence_id", "position", "token", "weight"]
    assert len(rows) == 10 and all(0 < float(r["weight"]) < 1 for r in rows)
