import hashlib

import numpy as np
import pytest

from gvector.cli import main
from gvector.io import EmbeddingSet, read_embeddings, read_scores, write_embeddings

SMALL = ["--epochs", "20", "--lr", "1e-3", "--lda-dim", "19", "--plda-dim", "10", "--threshold", "0", "--hidden-dim", "32", "--gvec-dim", "16"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out-dir", str(d), "--n-speakers", "20", "--per-speaker", "12", "--dim", "30", "--within-std", "0.5"]) == 0
    return d


def run(args, capsys=None):
    code = main(args)
    out = capsys.readouterr() if capsys else None
    return code, out


def test_full_pipeline_report(synth_dir, tmp_path, capsys):
    out = tmp_path / "run"
    code, res = run(["run", "-c", str(synth_dir / "config.txt"), "--out-dir", str(out), *SMALL], capsys)
    assert code == 0, res.err
    assert "EER[%]" in res.out and "minDCF" in res.out
    rows = dict(line.split(",") for line in (out / "metrics.csv").read_text().splitlines()[1:])
    assert {"eer_percent", "min_dcf"} <= set(rows)
    assert (out / "det.csv").read_text().startswith("p_fa,p_miss\n")
    scores = read_scores(out / "scores.txt")
    assert len(scores.scores) == 20 * 20  # 20 models x 20 test vectors (1 per speaker)
    g = read_embeddings(out / "gvectors.emb")
    assert g.dim == 16 and len(g) == 20 * 12


def test_stagewise_equals_run_and_is_deterministic(synth_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = ["-c", str(synth_dir / "config.txt"), *SMALL]
    assert main(["run", *cfg, "--out-dir", str(a)]) == 0
    for step in ("preprocess", "build-graph", "train", "extract", "score", "eval"):
        assert main([step, *cfg, "--out-dir", str(b)]) == 0, step
    for name in ("model.gnnm", "gvectors.emb", "scores.txt", "metrics.csv", "det.csv", "graph.txt", "nodes.emb", "loss.csv"):
        assert sha(a / name) == sha(b / name), name
    # retraining with the same seed reproduces the checkpoint hash
    before = sha(b / "model.gnnm")
    assert main(["train", *cfg, "--out-dir", str(b)]) == 0
    assert sha(b / "model.gnnm") == before


@pytest.mark.parametrize("backend", ["cosine", "lda_cosine", "plda"])
def test_baseline_backends(synth_dir, tmp_path, backend, capsys):
    code, res = run(["run", "-c", str(synth_dir / "config.txt"), "--out-dir", str(tmp_path), "--backend", backend, "--lda-dim", "19", "--plda-dim", "10"], capsys)
    assert code == 0, res.err
    assert f"backend={backend}" in res.out
    assert not (tmp_path / "model.gnnm").exists()


def test_eval_perfect_scores(tmp_path, capsys):
    (tmp_path / "trials").write_text("m a target\nm b nontarget\nn b target\nn a nontarget\n")
    (tmp_path / "scores").write_text("m a 3.000000\nm b -1.000000\nn b 2.000000\nn a 0.500000\n")
    code, res = run(["eval", "--trials", str(tmp_path / "trials"), "--scores", str(tmp_path / "scores"), "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 0
    assert "EER[%]  0.00" in res.out
    assert "minDCF  0.000" in res.out


def _single_error_line(err):
    first = err.strip().splitlines()[0]
    assert first.startswith("error=")
    return first


def test_config_errors_exit_2(synth_dir, tmp_path, capsys):
    code, res = run(["run", "-c", str(synth_dir / "config.txt"), "--out-dir", str(tmp_path / "o"), "--variant", "GIN"], capsys)
    assert code == 2
    assert _single_error_line(res.err).startswith("error=config_error exit=2")
    bad = tmp_path / "bad.txt"
    bad.write_text("no_such_key = 3\n")
    code, res = run(["run", "-c", str(bad)], capsys)
    assert code == 2 and "no_such_key" in res.err
    code, res = run(["run", "--dev", str(tmp_path / "missing.emb")], capsys)
    assert code == 2
    code, res = run(["frobnicate"], capsys)
    assert code == 2
    assert not (tmp_path / "o").exists()


def test_data_error_exit_3_and_no_partial_output(synth_dir, tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    for f in synth_dir.iterdir():
        if f.is_file():
            (data / f.name).write_bytes(f.read_bytes())
    # a test id that collides with a dev id
    dev = read_embeddings(data / "dev.emb")
    test = read_embeddings(data / "test.emb")
    write_embeddings(EmbeddingSet([dev.ids[0], *test.ids[1:]], test.vectors), data / "test.emb")
    code, res = run(["run", "-c", str(data / "config.txt"), *SMALL], capsys)
    assert code == 3
    assert _single_error_line(res.err).startswith("error=data_error exit=3 kind=DuplicateIdError")
    assert not (data / "run").exists()

    (data / "dev.emb").write_bytes(b"GVEC\x02\x00\x00\x00")
    code, res = run(["preprocess", "-c", str(data / "config.txt")], capsys)
    assert code == 3 and "MalformedHeaderError" in res.err
    assert not (data / "run").exists()


def test_divergence_exit_4(synth_dir, tmp_path, capsys):
    code, res = run(["run", "-c", str(synth_dir / "config.txt"), "--out-dir", str(tmp_path), *SMALL, "--lr", "1e30", "--epochs", "5"], capsys)
    assert code == 4, res.err
    assert _single_error_line(res.err).startswith("error=numeric_divergence exit=4")


def test_sweep_writes_subdirectories(synth_dir, tmp_path, capsys):
    code, res = run(["sweep", "-c", str(synth_dir / "config.txt"), "--out-dir", str(tmp_path), *SMALL, "--epochs", "5", "--grid", "threshold=0,4"], capsys)
    assert code == 0, res.err
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "run,threshold,eer_percent,min_dcf"
    assert len(lines) == 3
    assert (tmp_path / "threshold=0" / "model.gnnm").exists()
    assert (tmp_path / "threshold=4" / "config.txt").read_text().count("threshold = 4.0") == 1


def test_synth_text_format(tmp_path):
    assert main(["synth", "--out-dir", str(tmp_path), "--format", "text", "--n-speakers", "3", "--per-speaker", "8", "--dim", "4"]) == 0
    emb = read_embeddings(tmp_path / "dev.txt")
    assert emb.dim == 4
    np.testing.assert_allclose(np.linalg.norm(emb.vectors, axis=1), 1.0, atol=1e-7)
