import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mvembed.cli import dispatch, parse_view, read_config


def run(*argv):
    return dispatch(["-q", *map(str, argv)])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert run("synth", "--out", d, "--seed", 3, "--nodes", 120, "--communities", 3,
               "--informative", "sbm:0.3:0.02", "--noise", "noise:0.06",
               "--train-fraction", 0.2) == 0
    return d


def train_args(data, out, *extra):
    return ["train", "--view", f"sbm={data / 'sbm.txt'}", "--view", f"noise={data / 'noise.txt'}",
            "--labels", data / "labels_train.txt", "--dim", 16, "--samples", 100000,
            "--iterations", 2, "--seed", 7, "--out", out, *extra]


@pytest.fixture(scope="module")
def model(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert run(*train_args(data, out)) == 0
    return out


def tree(path):
    return {p.relative_to(path): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_synth_writes_expected_files(data):
    names = {p.name for p in data.iterdir()}
    assert {"sbm.txt", "noise.txt", "labels.txt", "labels_train.txt", "labels_test.txt",
            "heldout.txt", "links_attn.txt", "links_test.txt", "links_neg.txt"} <= names


def test_train_outputs(model):
    names = {p.name for p in model.iterdir()}
    assert {"vocab.txt", "robust.emb", "view_sbm.emb", "view_noise.emb", "weights.txt",
            "train_log.txt", "model.npz", "view_names.txt"} <= names
    lam = np.loadtxt(model / "weights.txt", usecols=(1, 2))
    np.testing.assert_allclose(lam.sum(axis=1), 1.0, atol=1e-5)


def test_train_twice_identical(data, model, tmp_path):
    assert run(*train_args(data, tmp_path / "again")) == 0
    assert tree(tmp_path / "again") == tree(model)


def test_config_file_with_flag_override(data, model, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"# experiment\nd=16\nsamples_per_iter=100000\niterations=2\nseed=1\n"
                   f"view=sbm={data / 'sbm.txt'}\nview=noise={data / 'noise.txt'}\n"
                   f"labels={data / 'labels_train.txt'}\nout={tmp_path / 'cfg_out'}\n")
    assert run("train", "--config", cfg, "--seed", 7) == 0
    assert tree(tmp_path / "cfg_out") == tree(model)


def test_read_config_resolves_relative_paths(tmp_path):
    (tmp_path / "v.txt").write_text("a b\n")
    cfg = tmp_path / "c.cfg"
    cfg.write_text("dim = 4\nno_attention = true\nview = one=v.txt:directed\n")
    values = read_config(cfg)
    assert values["dim"] == 4 and values["no_attention"] is True
    assert values["view"] == [("one", tmp_path / "v.txt", True)]


def test_read_config_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus=1\n")
    with pytest.raises(Exception):
        read_config(cfg)


def test_parse_view():
    assert parse_view("a=x.txt") == ("a", Path("x.txt"), False)
    assert parse_view("a=x.txt:directed", Path("/d")) == ("a", Path("/d/x.txt"), True)
    with pytest.raises(Exception):
        parse_view("nameonly")


def test_eval_classify(data, model, tmp_path, capsys):
    out = tmp_path / "m"
    assert run("eval-classify", "--emb", model / "robust.emb", "--labels", data / "labels.txt",
               "--train", data / "labels_train.txt", "--out", out) == 0
    line = capsys.readouterr().out.strip()
    metrics = dict(kv.split("=") for kv in line.split())
    assert float(metrics["micro_f1"]) > 60
    assert int(metrics["train"]) + int(metrics["test"]) == 120
    assert (out / "metrics.txt").read_text().strip() == line


def test_eval_classify_degree_groups(data, model, capsys):
    assert run("eval-classify", "--emb", model / "robust.emb", "--labels", data / "labels.txt",
               "--train", data / "labels_train.txt", "--groups", 2,
               "--view", f"sbm={data / 'sbm.txt'}") == 0
    out = capsys.readouterr().out
    assert "micro_f1_group0=" in out and "micro_f1_group1=" in out


def test_eval_link(data, model, capsys):
    assert run("eval-link", "--emb", model / "robust.emb", "--pairs", data / "links_test.txt",
               "--negatives", data / "links_neg.txt") == 0
    metrics = dict(kv.split("=") for kv in capsys.readouterr().out.split())
    assert 0.0 <= float(metrics["auc"]) <= 1.0
    assert metrics["positives"] == metrics["negatives"]


def test_eval_link_sampled_negatives(data, model, capsys):
    assert run("eval-link", "--emb", model / "robust.emb", "--pairs", data / "heldout.txt",
               "--exclude", data / "links_attn.txt", "--view", f"sbm={data / 'sbm.txt'}") == 0
    assert "auc=" in capsys.readouterr().out


def test_dump_commands(model, tmp_path):
    assert run("dump-weights", "--model", model / "model.npz", "--out", tmp_path / "w") == 0
    assert (tmp_path / "w" / "weights.txt").read_bytes() == (model / "weights.txt").read_bytes()
    assert run("dump-embeddings", "--model", model / "model.npz", "--out", tmp_path / "e") == 0
    for name in ("robust.emb", "view_sbm.emb", "view_noise.emb"):
        assert (tmp_path / "e" / name).read_bytes() == (model / name).read_bytes()


def test_eval_link_without_pairs_is_usage_error(model, capsys):
    assert run("eval-link", "--emb", model / "robust.emb") == 1
    err = capsys.readouterr().err
    assert "usage" in err.lower() and "--pairs" in err


@pytest.mark.parametrize("argv", [
    ["train", "--bogus"],
    ["frobnicate"],
    [],
    ["train", "--view", "a=/nonexistent.txt", "--out", "x"],
    ["train", "--dim", "0", "--view", "a=/nonexistent.txt", "--out", "x"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert dispatch(argv) == 1
    assert capsys.readouterr().err


def test_malformed_view_is_runtime_error(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("a b\nbroken\n")
    assert run("train", "--view", f"v={bad}", "--out", tmp_path / "o") == 2
    assert "line 2" in capsys.readouterr().err


def test_unknown_token_is_runtime_error(data, model, tmp_path, capsys):
    pairs = tmp_path / "p.txt"
    pairs.write_text("n0 ghost\n")
    assert run("eval-link", "--emb", model / "robust.emb", "--pairs", pairs,
               "--negatives", data / "links_neg.txt") == 2


def test_writes_stay_inside_out(data, tmp_path, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    before = tree(data)
    assert run(*train_args(data, tmp_path / "only")) == 0
    assert run("eval-classify", "--emb", tmp_path / "only" / "robust.emb", "--labels",
               data / "labels.txt", "--train", data / "labels_train.txt",
               "--out", tmp_path / "only_m") == 0
    assert not any(work.iterdir())
    assert tree(data) == before
    assert {p.name for p in tmp_path.iterdir()} == {"cwd", "only", "only_m"}


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mvembed", "synth", "-h"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "--informative" in proc.stdout
