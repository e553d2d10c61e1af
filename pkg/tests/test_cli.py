import subprocess
import sys

import pytest

from emphasel.cli import run
from emphasel.corpus import serialize_corpus
from emphasel.embio import emb_to_bytes

from _synth import make_corpus, random_embeddings, separable_corpus


@pytest.fixture
def ws(tmp_path):
    """Workspace with train/dev corpora and embeddings on disk."""
    train_c, train_ef = separable_corpus(n_instances=8, dim=4, seed=31)
    dev_c, dev_ef = separable_corpus(n_instances=4, dim=4, seed=32)
    paths = {
        "train_tsv": tmp_path / "train.tsv",
        "train_emb": tmp_path / "train.emb",
        "dev_tsv": tmp_path / "dev.tsv",
        "dev_emb": tmp_path / "dev.emb",
        "ckpt": tmp_path / "model.ckp1",
        "root": tmp_path,
    }
    paths["train_tsv"].write_bytes(serialize_corpus(train_c))
    paths["train_emb"].write_bytes(emb_to_bytes(train_ef))
    paths["dev_tsv"].write_bytes(serialize_corpus(dev_c))
    paths["dev_emb"].write_bytes(emb_to_bytes(dev_ef))
    return paths


def train_args(ws, **extra):
    args = [
        "train",
        "--train-corpus", str(ws["train_tsv"]),
        "--train-emb", str(ws["train_emb"]),
        "--dev-corpus", str(ws["dev_tsv"]),
        "--dev-emb", str(ws["dev_emb"]),
        "--out", str(ws["ckpt"]),
        "--head", "dense",
        "--lr", "0.1",
        "--epochs", "2",
        "--batch-size", "4",
        "--seed", "7",
    ]
    for k, v in extra.items():
        args += [k, v]
    return args


def test_train_and_evaluate(ws, capsys):
    assert run(train_args(ws)) == 0
    out = capsys.readouterr().out
    assert out.startswith("best_epoch=")
    assert ws["ckpt"].is_file()

    assert run([
        "evaluate", "--corpus", str(ws["dev_tsv"]), "--emb", str(ws["dev_emb"]),
        "--ckpt", str(ws["ckpt"]),
    ]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0] == "M1\tM2\tM3\tM4\tAverage"
    assert len(table.splitlines()) == 2


def test_predict_line_format(ws, capsys):
    assert run(train_args(ws)) == 0
    capsys.readouterr()
    assert run([
        "predict", "--corpus", str(ws["dev_tsv"]), "--emb", str(ws["dev_emb"]),
        "--ckpt", str(ws["ckpt"]),
    ]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    first = lines[0].split("\t")
    assert len(first) == 4
    assert first[0] == "s0" and first[1] == "0"
    assert 0.0 <= float(first[3]) <= 1.0


def test_history_file(ws):
    history = ws["root"] / "train.history"
    assert run(train_args(ws, **{"--history": str(history)})) == 0
    lines = history.read_text().strip().split("\n")
    assert len(lines) == 2
    assert lines[0].startswith("epoch=1 loss=")


def test_train_runs_byte_identical(ws, capsys):
    assert run(train_args(ws)) == 0
    first = ws["ckpt"].read_bytes()
    first_stdout = capsys.readouterr().out
    assert run(train_args(ws)) == 0
    assert ws["ckpt"].read_bytes() == first
    assert capsys.readouterr().out == first_stdout


def test_analyze_baseline_formats(ws, capsys):
    argv = ["analyze", "baseline", "--corpus", str(ws["dev_tsv"]),
            "--trials", "10", "--seed", "3"]
    assert run(argv) == 0
    table = capsys.readouterr().out
    assert run(argv + ["--format", "kv"]) == 0
    kv = capsys.readouterr().out
    assert table.startswith("M1\t")
    assert kv.startswith("m1=")
    # byte-stable across invocations
    assert run(argv) == 0
    assert capsys.readouterr().out == table


def test_analyze_pos_human_and_model(ws, tmp_path, capsys):
    c = make_corpus([[9, 0], [5, 5]], total=9)
    tagged = make_corpus([[9, 0], [5, 5]], total=9)
    # rebuild with tags
    from _synth import make_instance
    from emphasel.corpus import Corpus

    insts = [
        make_instance([9, 0], pos_tags=["NOUN", "VERB"], inst_id="a"),
        make_instance([5, 5], pos_tags=["NOUN", "PUNCT"], inst_id="b"),
    ]
    tagged = Corpus(tuple(insts), "tagged")
    tsv = tmp_path / "tagged.tsv"
    tsv.write_bytes(serialize_corpus(tagged))
    assert run(["analyze", "pos", "--corpus", str(tsv)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "POS\tCount\tHumans"
    assert any(line.startswith("NOUN\t2\t") for line in out.splitlines())

    # model column requires both --emb and --ckpt
    assert run(["analyze", "pos", "--corpus", str(tsv), "--emb", "x.emb"]) == 1


def test_analyze_length(ws, capsys):
    assert run(train_args(ws)) == 0
    capsys.readouterr()
    assert run([
        "analyze", "length", "--corpus", str(ws["dev_tsv"]), "--emb", str(ws["dev_emb"]),
        "--ckpt", str(ws["ckpt"]),
    ]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "Bucket\tCount\tAverage"
    assert [line.split("\t")[0] for line in out.splitlines()[1:]] == ["short", "medium", "long"]


def test_analyze_shuffle(ws, capsys):
    argv = [
        "analyze", "shuffle",
        "--train-corpus", str(ws["train_tsv"]), "--train-emb", str(ws["train_emb"]),
        "--dev-corpus", str(ws["dev_tsv"]), "--dev-emb", str(ws["dev_emb"]),
        "--head", "dense", "--lr", "0.1", "--epochs", "1", "--batch-size", "4",
        "--seed", "5", "--runs", "2", "--trials", "3",
    ]
    assert run(argv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "Row\tM1\tM2\tM3\tM4\tAverage"
    assert [l.split("\t")[0] for l in lines[1:]] == ["run1", "run2", "shuffled-mean", "random"]


def test_ensemble_command(ws, tmp_path, capsys):
    assert run(train_args(ws)) == 0
    second = tmp_path / "second.ckp1"
    assert run(train_args({**ws, "ckpt": second}, **{"--seed": "8"})) == 0
    spec = tmp_path / "ens.spec"
    spec.write_text(
        f"mode=average\nmember={ws['ckpt'].name}\t{ws['dev_emb'].name}\n"
        f"member={second.name}\t{ws['dev_emb'].name}\n"
    )
    capsys.readouterr()
    preds_out = tmp_path / "ens_preds.tsv"
    assert run([
        "ensemble", "--spec", str(spec), "--corpus", str(ws["dev_tsv"]),
        "--predictions-out", str(preds_out),
    ]) == 0
    assert capsys.readouterr().out.startswith("M1\t")
    pred_lines = preds_out.read_text().strip().split("\n")
    assert all(len(line.split("\t")) == 4 for line in pred_lines)
    from emphasel.corpus import parse_corpus

    dev_c = parse_corpus(ws["dev_tsv"].read_bytes(), "dev")
    assert len(pred_lines) == sum(len(inst) for inst in dev_c)


def test_grid_command(ws, tmp_path, capsys):
    spec = tmp_path / "grid.spec"
    spec.write_text(
        "out_dir=gridruns\nlrs=0.1\nseeds=3\nepochs=1\nbatch_size=4\n"
        f"cell label=synth head=dense train_emb={ws['train_emb'].name} dev_emb={ws['dev_emb'].name}\n"
    )
    assert run([
        "grid", "--spec", str(spec), "--train-corpus", str(ws["train_tsv"]),
        "--dev-corpus", str(ws["dev_tsv"]),
    ]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("Label\tHead\tLR")
    assert (tmp_path / "gridruns" / "grid_results.tsv").read_text() == out


def test_gradcheck_both_heads(capsys):
    for head in ("bilstm", "dense"):
        assert run(["gradcheck", "--head", head, "--dim", "3", "--hidden", "2",
                    "--n", "3", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("max_rel_err=")
        assert float(out.split("=")[1]) < 1e-4


def test_emb_info(ws, capsys):
    assert run(["emb-info", "--emb", str(ws["dev_emb"]), "--corpus", str(ws["dev_tsv"])]) == 0
    out = capsys.readouterr().out
    assert "dim=4" in out
    assert "instances=4" in out
    assert "alignment=ok" in out

    # wrong corpus: data error
    assert run(["emb-info", "--emb", str(ws["dev_emb"]), "--corpus", str(ws["train_tsv"])]) == 2


def test_usage_errors(capsys):
    assert run(["not-a-command"]) == 1
    assert capsys.readouterr().err != ""
    assert run([]) == 1
    assert run(["train"]) == 1  # missing required flags


def test_missing_file_is_data_error(ws, capsys):
    assert run(["evaluate", "--corpus", "/nonexistent.tsv", "--emb", str(ws["dev_emb"]),
                "--ckpt", "/nonexistent.ckp1"]) == 2


def test_malformed_corpus_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("0\ta\t_\t5\t3\n")  # count above total
    assert run(["analyze", "baseline", "--corpus", str(bad), "--trials", "1", "--seed", "1"]) == 2
    assert "error" in capsys.readouterr().err


def test_config_file_overlay(ws, tmp_path, capsys):
    cfg = tmp_path / "defaults.cfg"
    cfg.write_text("trials=4\nseed=11\n")
    argv = ["analyze", "baseline", "--corpus", str(ws["dev_tsv"]), "--config", str(cfg),
            "--format", "kv"]
    assert run(argv) == 0
    from_config = capsys.readouterr().out

    assert run(["analyze", "baseline", "--corpus", str(ws["dev_tsv"]), "--trials", "4",
                "--seed", "11", "--format", "kv"]) == 0
    explicit = capsys.readouterr().out
    assert from_config == explicit

    # explicit flag wins over the config file
    assert run(argv + ["--seed", "12"]) == 0
    assert capsys.readouterr().out != from_config


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "emphasel.cli", "--version"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("emphasel ")
