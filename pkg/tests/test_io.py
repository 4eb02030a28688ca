import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvector.errors import (
    DimensionMismatchError,
    DuplicateIdError,
    EmptySetError,
    MalformedHeaderError,
    MalformedLineError,
    NonFiniteError,
)
from gvector.io import (
    EmbeddingSet,
    ScoreSet,
    TrialList,
    embeddings_to_bytes,
    read_embeddings,
    read_labels,
    read_scores,
    read_trials,
    write_embeddings,
    write_labels,
    write_scores,
    write_trials,
)


def random_set(rng, n, dim):
    return EmbeddingSet([f"utt{i}" for i in range(n)], rng.normal(size=(n, dim)).astype(np.float32))


def test_text_parse(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("a 1 0\nb 0 1\n")
    emb = read_embeddings(p, "text")
    assert emb.dim == 2
    assert emb.ids == ["a", "b"]
    np.testing.assert_array_equal(emb.vectors, [[1, 0], [0, 1]])


def test_binary_empty_rejected(tmp_path):
    p = tmp_path / "e.bin"
    p.write_bytes(struct.pack("<4sIII", b"GVEC", 1, 0, 4))
    with pytest.raises(EmptySetError):
        read_embeddings(p)


def test_binary_round_trip_100x600(tmp_path):
    emb = random_set(np.random.default_rng(0), 100, 600)
    p = tmp_path / "e.bin"
    write_embeddings(emb, p)
    back = read_embeddings(p)
    assert back.ids == emb.ids
    assert back.vectors.astype(np.float32).tobytes() == emb.vectors.astype(np.float32).tobytes()
    # rewriting what was read gives the identical file
    p2 = tmp_path / "e2.bin"
    write_embeddings(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_binary_layout_is_exact():
    emb = EmbeddingSet(["ab"], np.array([[1.0, -2.0]]))
    expected = struct.pack("<4sIII", b"GVEC", 1, 1, 2) + struct.pack("<H", 2) + b"ab" + struct.pack("<2f", 1.0, -2.0)
    assert embeddings_to_bytes(emb) == expected


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 8),
    dim=st.integers(1, 6),
    seed=st.integers(0, 2**32 - 1),
    name=st.text(alphabet=st.characters(blacklist_categories=("Cs", "Zs", "Cc", "Zl", "Zp")), min_size=1, max_size=6),
)
def test_binary_round_trip_property(tmp_path_factory, n, dim, seed, name):
    rng = np.random.default_rng(seed)
    emb = EmbeddingSet([f"{name}{i}" for i in range(n)], rng.normal(size=(n, dim)) * 10.0 ** rng.integers(-3, 4))
    p = tmp_path_factory.mktemp("rt") / "e.bin"
    write_embeddings(emb, p)
    back = read_embeddings(p, "binary")
    assert back.ids == emb.ids
    assert back.vectors.astype(np.float32).tobytes() == emb.vectors.astype(np.float32).tobytes()


def test_text_reparse_within_1e7(tmp_path):
    rng = np.random.default_rng(1)
    emb = EmbeddingSet([f"u{i}" for i in range(50)], rng.normal(size=(50, 7)) * 10.0 ** rng.integers(-5, 5, (50, 1)))
    p = tmp_path / "e.txt"
    write_embeddings(emb, p, "text")
    back = read_embeddings(p, "text")
    assert back.ids == emb.ids
    np.testing.assert_allclose(back.vectors, emb.vectors, rtol=1e-7, atol=0)


def test_row_order_preserved(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("z 3\ny 2\nx 1\n")
    emb = read_embeddings(p)
    assert emb.ids == ["z", "y", "x"]
    np.testing.assert_array_equal(emb.vectors[:, 0], [3, 2, 1])


@pytest.mark.parametrize(
    "content, exc",
    [
        ("a 1 0\nb 0\n", DimensionMismatchError),
        ("a 1 0\na 0 1\n", DuplicateIdError),
        ("a 1 nan\n", NonFiniteError),
        ("a 1 inf\n", NonFiniteError),
        ("a\n", MalformedLineError),
        ("", EmptySetError),
    ],
)
def test_text_errors(tmp_path, content, exc):
    p = tmp_path / "e.txt"
    p.write_text(content)
    with pytest.raises(exc):
        read_embeddings(p, "text")


def test_binary_errors(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"GVEC" + struct.pack("<III", 2, 1, 1))
    with pytest.raises(MalformedHeaderError):
        read_embeddings(p, "binary")
    p.write_bytes(b"XXXX" + struct.pack("<III", 1, 1, 1))
    with pytest.raises(MalformedHeaderError):
        read_embeddings(p, "binary")
    good = embeddings_to_bytes(EmbeddingSet(["a"], np.ones((1, 3))))
    p.write_bytes(good[:-2])
    with pytest.raises(DimensionMismatchError):
        read_embeddings(p, "binary")


def test_empty_set_rejected_on_construction():
    with pytest.raises(EmptySetError):
        EmbeddingSet([], np.empty((0, 3)))


def test_trials(tmp_path):
    p = tmp_path / "trials"
    p.write_text("m1 t1 target\nm1 t2 nontarget\n")
    tl = read_trials(p)
    assert tl.trials == [("m1", "t1", "target"), ("m1", "t2", "nontarget")]
    p.write_text("m1 t1\n")
    assert read_trials(p).trials == [("m1", "t1", "unknown")]
    p.write_text("m1 t1\nm1 t1\n")
    with pytest.raises(DuplicateIdError):
        read_trials(p)
    p.write_text("m1 t1 target extra\n")
    with pytest.raises(MalformedLineError):
        read_trials(p)
    p.write_text("m1 t1 target\nm1 t2\n")
    with pytest.raises(ValueError):
        read_trials(p)


def test_trials_round_trip(tmp_path):
    tl = TrialList([("a", "b", "target"), ("a", "c", "nontarget")])
    p = tmp_path / "t"
    write_trials(tl, p)
    assert read_trials(p) == tl


def test_scores_six_decimals(tmp_path):
    s = ScoreSet(["m", "m"], ["t1", "t2"], np.array([0.123456789, -2.0]))
    p = tmp_path / "scores"
    write_scores(s, p)
    assert p.read_text() == "m t1 0.123457\nm t2 -2.000000\n"
    back = read_scores(p)
    np.testing.assert_allclose(back.scores, [0.123457, -2.0])


def test_labels_round_trip(tmp_path):
    p = tmp_path / "labels"
    write_labels({"u1": "spkA", "u2": "spkB"}, p)
    assert read_labels(p) == {"u1": "spkA", "u2": "spkB"}
    p.write_text("u1 a b\n")
    with pytest.raises(MalformedLineError):
        read_labels(p)
