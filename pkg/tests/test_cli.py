import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import make_blobs, write_corpus, write_embeddings
from oracles import vote_label
from scd01.attack import format_summary
from scd01.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main, write_features
from scd01.ensemble import Ensemble, load_ensemble, save_ensemble
from scd01.network import SignNetwork, predict_labels
from scd01.text import Document, EmbeddingTable

DATA = Path(__file__).parent / "data"


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir())}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def blob_features(tmp_path):
    X, y = make_blobs(60, d=4, seed=3)
    write_features(tmp_path / "feats", "averaged", X, y)
    return tmp_path / "feats", X, y


class TestTrain:
    def test_single_untrained_member(self, toy_files, capsys):
        out = toy_files["dir"] / "m"
        code = run("train", "--data", toy_files["corpus"], "--embeddings", toy_files["embeddings"],
                   "--votes", 1, "--epochs", 0, "--hidden-nodes", 3, "--out", out)
        assert code == EXIT_OK
        ens, manifest = load_ensemble(out)
        assert manifest["k"] == 1 and manifest["model_type"] == "scd01"
        assert manifest["seed"] == 0 and manifest["config"]["epochs"] == 0
        assert manifest["inputs"]["embeddings"] == toy_files["embeddings"]
        log = (out / "log_member_000.tsv").read_text().splitlines()
        assert len(log) == 2 and "init" in log[1]
        assert "train accuracy" in capsys.readouterr().out

    def test_repeat_run_is_byte_identical(self, toy_files):
        out = toy_files["dir"] / "m"
        args = ("train", "--data", toy_files["corpus"], "--embeddings", toy_files["embeddings"],
                "--votes", 3, "--epochs", 15, "--hidden-nodes", 4, "--seed", 7, "--out", out)
        assert run(*args) == EXIT_OK
        first = snapshot(out)
        assert run(*args, "--n-jobs", 2) == EXIT_OK
        assert snapshot(out) == first
        assert sorted(first) == [
            "config.txt", "log_member_000.tsv", "log_member_001.tsv", "log_member_002.tsv",
            "manifest.json", "member_000.json", "member_001.json", "member_002.json",
        ]

    def test_blob_smoke_run(self, tmp_path):
        X, y = make_blobs(200, d=10, seed=0)
        write_features(tmp_path / "f", "averaged", X, y)
        start = time.perf_counter()
        code = run("train", "--features", tmp_path / "f", "--votes", 8, "--epochs", 200,
                   "--out", tmp_path / "m")
        assert code == EXIT_OK and time.perf_counter() - start < 60
        ens, _ = load_ensemble(tmp_path / "m")
        assert np.mean(ens.predict(X) == y) >= 0.95

    @pytest.mark.parametrize("model_type", ["scd01-binary", "cnn01", "cnn01-fs"])
    def test_other_model_types(self, toy_files, model_type):
        out = toy_files["dir"] / model_type
        code = run("train", "--data", toy_files["corpus"], "--embeddings", toy_files["embeddings"],
                   "--model-type", model_type, "--votes", 2, "--epochs", 5, "--n-filters", 2,
                   "--max-len", 8, "--out", out)
        assert code == EXIT_OK
        _, manifest = load_ensemble(out)
        stacked = model_type.startswith("cnn")
        assert manifest["representation"] == ("stacked" if stacked else "averaged")
        assert manifest["max_len"] == (8 if stacked else None)

    def test_config_file_flags_win(self, toy_files):
        cfg = toy_files["dir"] / "run.cfg"
        cfg.write_text("# experiment\nepochs = 3\nhidden_nodes = 2\nvotes = 1\n")
        out = toy_files["dir"] / "m"
        code = run("train", "--config", cfg, "--data", toy_files["corpus"],
                   "--embeddings", toy_files["embeddings"], "--epochs", 0, "--out", out)
        assert code == EXIT_OK
        _, manifest = load_ensemble(out)
        assert manifest["config"]["epochs"] == 0 and manifest["config"]["hidden_nodes"] == 2
        assert "epochs = 0" in (out / "config.txt").read_text()


def test_featurize_then_train(toy_files):
    feats = toy_files["dir"] / "feats"
    code = run("featurize", "--data", toy_files["corpus"], "--embeddings", toy_files["embeddings"],
               "--out", feats)
    assert code == EXIT_OK
    header = json.loads((feats / "features.json").read_text())
    assert header["representation"] == "averaged" and header["n_docs"] == len(toy_files["docs"])
    assert (feats / "stats.tsv").read_text().startswith("stat\tvalue\ndocs\t120\n")
    assert run("train", "--features", feats, "--votes", 1, "--epochs", 2, "--out", toy_files["dir"] / "m") == 0


def _handmade_model(directory, members, embeddings):
    save_ensemble(Ensemble(members), directory, "scd01", representation="averaged",
                  inputs={"embeddings": str(embeddings)}, max_len=None, seed=0)


def _net(W, b, w, c):
    return SignNetwork(np.array(W, float), np.array(b, float), np.array(w, float), float(c))


class TestEval:
    def test_perfect_and_constant_models(self, tmp_path, capsys):
        # 1-D embeddings: the sign of the averaged vector is the label
        table = EmbeddingTable(["pos", "neg"], [[1.0], [-1.0]])
        emb = write_embeddings(table, tmp_path / "e.txt")
        docs = [Document(["pos"], 1)] * 5 + [Document(["neg"], -1)] * 5
        data = write_corpus(docs, tmp_path / "d.tsv")
        _handmade_model(tmp_path / "perfect", [_net([[1.0]], [0.0], [1.0], 0.0)], emb)
        _handmade_model(tmp_path / "constant", [_net([[1.0]], [0.0], [0.0], 0.0)], emb)
        assert run("eval", "--model", tmp_path / "perfect", "--data", data, "--out", tmp_path / "e1") == 0
        assert (tmp_path / "e1" / "eval.tsv").read_text() == (
            "class\tn\tcorrect\taccuracy\n-1\t5\t5\t100.0\n+1\t5\t5\t100.0\nall\t10\t10\t100.0\n"
        )
        assert run("eval", "--model", tmp_path / "constant", "--data", data) == 0
        assert capsys.readouterr().out.endswith("-1\t5\t0\t0.0\n+1\t5\t5\t100.0\nall\t10\t5\t50.0\n")

    def test_matches_member_vote(self, tmp_path, blob_features, capsys):
        feats, X, y = blob_features
        assert run("train", "--features", feats, "--votes", 3, "--epochs", 10, "--hidden-nodes", 3,
                   "--out", tmp_path / "m") == 0
        capsys.readouterr()
        assert run("eval", "--model", tmp_path / "m", "--features", feats) == 0
        ens, _ = load_ensemble(tmp_path / "m")
        votes = sum((predict_labels(m, X) == 1).astype(int) for m in ens.members)
        pred = np.array([vote_label(v, 3) for v in votes])
        correct = int(np.sum(pred == y))
        assert capsys.readouterr().out.splitlines()[-1] == f"all\t{len(y)}\t{correct}\t{100 * correct / len(y):.1f}"

    def test_representation_mismatch(self, toy_files):
        d = toy_files["dir"]
        assert run("train", "--data", toy_files["corpus"], "--embeddings", toy_files["embeddings"],
                   "--model-type", "cnn01", "--votes", 1, "--epochs", 1, "--n-filters", 1,
                   "--max-len", 6, "--out", d / "cnn") == 0
        assert run("featurize", "--data", toy_files["corpus"], "--embeddings", toy_files["embeddings"],
                   "--out", d / "avg") == 0
        assert run("eval", "--model", d / "cnn", "--features", d / "avg") == EXIT_DATA
        assert run("train", "--features", d / "avg", "--model-type", "cnn01", "--out", d / "x") == EXIT_DATA


@pytest.fixture
def traced_attack(tmp_path):
    # good=(1,0), fine=(0.6,0.8): cosine 0.6. The single hidden unit reads -x1,
    # so "good" and the empty document (zero vector, sign(0)=+1) are positive
    # and "fine" is negative.
    table = EmbeddingTable(["good", "fine"], [[1.0, 0.0], [0.6, 0.8]])
    emb = write_embeddings(table, tmp_path / "e.txt")
    docs = [Document(["good"], 1), Document(["fine"], -1), Document(["fine"], 1), Document(["good"], -1)]
    data = write_corpus(docs, tmp_path / "d.tsv")
    _handmade_model(tmp_path / "m", [_net([[0.0], [-1.0]], [0.0], [1.0], 0.0)], emb)
    return tmp_path, data


class TestAttack:
    def test_hand_traced_rows(self, traced_attack):
        d, data = traced_attack
        code = run("attack", "--model", d / "m", "--data", data, "--dataset", "toy",
                   "--adversarial", "--out", d / "a")
        assert code == EXIT_OK
        # correct docs: clean + intact + deletion + one candidate that flips
        assert (d / "a" / "attack_report.tsv").read_text() == (
            "doc_id\tclean_correct\tattacked_correct\tn_substitutions\tqueries\n"
            "0\t1\t0\t1\t4\n"
            "1\t1\t0\t1\t4\n"
            "2\t0\t0\t0\t1\n"
            "3\t0\t0\t0\t1\n"
        )
        assert (d / "a" / "summary.tsv").read_text() == "dataset\tmodel\tCl\tAdv\tQue\ntoy\tSCD01\t50.0\t0.0\t2\n"
        assert (d / "a" / "adversarial.txt").read_text().splitlines()[0] == "0\t1\t[[good->fine]]"

    def test_empty_index_keeps_clean_accuracy(self, traced_attack):
        d, data = traced_attack
        assert run("attack", "--model", d / "m", "--data", data, "--min-similarity", 0.9,
                   "--out", d / "a") == 0
        _, _, cl, adv, _ = (d / "a" / "summary.tsv").read_text().splitlines()[1].split("\t")
        assert cl == adv == "50.0"

    def test_repeat_run_identical_bytes(self, toy_files):
        d = toy_files["dir"]
        assert run("train", "--data", toy_files["corpus"], "--embeddings", toy_files["embeddings"],
                   "--votes", 3, "--epochs", 20, "--hidden-nodes", 4, "--out", d / "m") == 0
        args = ("attack", "--model", d / "m", "--data", toy_files["corpus"], "--limit", 40,
                "--seed", 5, "--min-similarity", 0.2, "--adversarial", "--out", d / "a")
        assert run(*args) == 0
        first = snapshot(d / "a")
        assert run(*args, "--n-jobs", 2) == 0
        assert snapshot(d / "a") == first
        rows = first["attack_report.tsv"].decode().splitlines()
        assert len(rows) == 41


def _summary(path, rows):
    text = "".join(format_summary(*row).split("\n", 1)[1] for row in rows)
    path.write_text("dataset\tmodel\tCl\tAdv\tQue\n" + text)
    return path


class TestReport:
    def test_single_row(self, tmp_path, capsys):
        s = _summary(tmp_path / "s.tsv", [("MR", "SCD01", 0.74, 0.2, 80.0)])
        assert run("report", s) == 0
        assert capsys.readouterr().out == "dataset\tmodel\tCl\tAdv\tQue\tbest\nMR\tSCD01\t74.0\t20.0\t80\t*\n"

    def test_higher_adv_marked(self, tmp_path, capsys):
        a = _summary(tmp_path / "a.tsv", [("MR", "CNN01", 0.712, 0.131, 104.6)])
        b = _summary(tmp_path / "b.tsv", [("MR", "CNN01-FS", 0.704, 0.409, 131.2)])
        assert run("report", a, b) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[1].endswith("\t") and lines[2].endswith("\t*")

    def test_golden_table(self, tmp_path):
        values = {
            "MR": ((0.712, 0.131, 105), (0.704, 0.409, 131)),
            "IMDB": ((0.850, 0.102, 410), (0.841, 0.355, 470)),
            "Yelp": ((0.883, 0.204, 300), (0.879, 0.180, 280)),
            "AG": ((0.901, 0.300, 200), (0.895, 0.452, 260)),
        }
        plain = _summary(tmp_path / "cnn.tsv", [(ds, "CNN01", *v[0]) for ds, v in values.items()])
        fs = _summary(tmp_path / "fs.tsv", [(ds, "CNN01-FS", *v[1]) for ds, v in values.items()])
        assert run("report", plain, fs, "--out", tmp_path / "table.tsv") == 0
        assert (tmp_path / "table.tsv").read_bytes() == (DATA / "report_golden.tsv").read_bytes()

    def test_malformed_summary(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("nonsense\n")
        assert run("report", bad) == EXIT_DATA
        bad.write_text("dataset\tmodel\tCl\tAdv\tQue\nMR\tX\tnot-a-number\t1\t2\n")
        assert run("report", bad) == EXIT_DATA


class TestExitCodes:
    @pytest.mark.parametrize("argv", [
        [],
        ["frobnicate"],
        ["train", "--no-such-flag"],
        ["train", "--epochs", "many"],
        ["report"],
    ])
    def test_usage_errors(self, argv, capsys):
        assert main(argv) == EXIT_USAGE

    def test_invalid_values_name_the_field(self, toy_files, capsys):
        code = run("train", "--data", toy_files["corpus"], "--embeddings", toy_files["embeddings"],
                   "--batch-fraction", 1.5, "--out", toy_files["dir"] / "m")
        assert code == EXIT_USAGE and "batch_fraction" in capsys.readouterr().err
        assert run("train", "--votes", 0, "--out", toy_files["dir"] / "m") == EXIT_USAGE
        assert run("train", "--data", toy_files["corpus"], "--out", toy_files["dir"] / "m") == EXIT_USAGE

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("n_estimators = 3\n")
        assert run("train", "--config", cfg, "--out", tmp_path / "m") == EXIT_USAGE

    def test_data_errors(self, toy_files):
        d = toy_files["dir"]
        assert run("train", "--data", d / "missing.tsv", "--embeddings", toy_files["embeddings"],
                   "--out", d / "m") == EXIT_DATA
        broken = d / "broken.txt"
        broken.write_text("a 1 2\nb 1\n")
        assert run("train", "--data", toy_files["corpus"], "--embeddings", broken, "--out", d / "m") == EXIT_DATA
        assert run("eval", "--model", d / "no-model", "--data", toy_files["corpus"]) == EXIT_DATA

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "scd01", "--version"], capture_output=True, text=True,
                              env={**os.environ})
        assert proc.returncode == 0 and proc.stdout.startswith("scd01 ")
