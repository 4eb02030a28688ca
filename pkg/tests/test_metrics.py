import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_eer, brute_min_dcf

from gvector.errors import DataError, UnknownIdError, ZeroNormError
from gvector.io import EmbeddingSet, ScoreSet, TrialList
from gvector.metrics import (
    DCF14,
    DCF_001,
    DcfParams,
    compute_eer,
    compute_min_dcf,
    dcf_curve,
    det_curve,
    enroll_average,
    evaluate,
    score_trials,
    score_trials_averaged,
    write_det_csv,
    write_metrics_csv,
)
from gvector.preproc import PldaModel, plda_llr


def random_scores(rng):
    n_tar = int(rng.integers(1, 200))
    n_non = int(rng.integers(1, 1000 - n_tar))
    shift = rng.uniform(0, 3)
    tar = rng.normal(shift, 1, n_tar)
    non = rng.normal(0, 1, n_non)
    if rng.random() < 0.5:  # ties, including across classes
        tar, non = np.round(tar, 1), np.round(non, 1)
    return tar, non


def test_eer_worked_example():
    assert compute_eer([0.9, 0.8, 0.3], [0.7, 0.2, 0.1]) == pytest.approx(100 / 3, abs=1e-12)


def test_eer_separated_and_identical():
    assert compute_eer([2.0, 3.0], [0.0, 1.0]) == 0.0
    s = np.random.default_rng(0).normal(size=50)
    assert compute_eer(s, s) == pytest.approx(50.0, abs=1e-12)


def test_min_dcf_separated_and_constant():
    assert compute_min_dcf([2.0, 3.0], [0.0, 1.0], DCF14) == 0.0
    for params in (DCF14, DCF_001, DcfParams(10.0, 1.0, 0.01)):
        assert compute_min_dcf(np.zeros(5), np.zeros(7), params) == pytest.approx(1.0, abs=1e-12)


def test_dcf14_is_miss_plus_100_fa():
    rng = np.random.default_rng(3)
    tar, non = rng.normal(1, 1, 40), rng.normal(0, 1, 400)
    th, cost = dcf_curve(tar, non, DCF14)
    for t, c in zip(th, cost):
        pm = np.mean(tar < t)
        pf = np.mean(non >= t)
        assert c == pytest.approx(pm + 100 * pf, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_eer_and_min_dcf_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    tar, non = random_scores(rng)
    assert abs(compute_eer(tar, non) - brute_eer(tar.tolist(), non.tolist())) <= 1e-12
    for p in (DCF14, DCF_001, DcfParams(2.0, 0.5, 0.3)):
        ref = brute_min_dcf(tar.tolist(), non.tolist(), p.c_miss, p.c_fa, p.p_target)
        assert abs(compute_min_dcf(tar, non, p) - ref) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["exp", "cube", "affine", "arctan"]))
def test_metrics_invariant_under_increasing_transforms(seed, kind):
    rng = np.random.default_rng(seed)
    tar, non = random_scores(rng)
    f = {
        "exp": np.exp,
        "cube": lambda x: x**3,
        "affine": lambda x: 3.5 * x - 2.0,
        "arctan": np.arctan,
    }[kind]
    assert compute_eer(f(tar), f(non)) == pytest.approx(compute_eer(tar, non), abs=1e-12)
    assert compute_min_dcf(f(tar), f(non), DCF14) == pytest.approx(compute_min_dcf(tar, non, DCF14), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_min_dcf_bounds(seed):
    rng = np.random.default_rng(seed)
    tar, non = random_scores(rng)
    _, cost = dcf_curve(tar, non, DCF14)
    m = compute_min_dcf(tar, non, DCF14)
    assert 0.0 <= m <= 1.0
    assert np.all(m <= cost)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_det_curve_staircase(seed):
    rng = np.random.default_rng(seed)
    tar, non = random_scores(rng)
    pts = np.array(det_curve(tar, non))
    assert len(pts) == len(np.unique(np.concatenate([tar, non]))) + 1
    assert np.all(np.diff(pts[:, 0]) <= 0)
    assert np.all(np.diff(pts[:, 1]) >= 0)
    # the EER lies between two adjacent curve points
    e = compute_eer(tar, non) / 100
    ok = False
    for (f0, m0), (f1, m1) in zip(pts, pts[1:]):
        if min(m0, m1) - 1e-12 <= e <= max(m0, m1) + 1e-12 and min(f0, f1) - 1e-12 <= e <= max(f0, f1) + 1e-12:
            ok = True
    assert ok


def test_single_class_errors():
    with pytest.raises(DataError):
        compute_eer([1.0, 2.0], [])
    with pytest.raises(DataError):
        det_curve([1.0], [])
    with pytest.raises(DataError):
        compute_min_dcf([], [0.0])
    with pytest.raises(DataError):
        DcfParams(1.0, 1.0, 1.5)


def test_enroll_average():
    emb = EmbeddingSet(["a", "b", "c"], np.array([[3.0, 4.0], [1.0, 0.0], [-1.0, 0.0]]))
    out = enroll_average(emb, {"m1": ["a"]})
    np.testing.assert_allclose(out.vectors, [[0.6, 0.8]])
    with pytest.raises(ZeroNormError):
        enroll_average(emb, {"m": ["b", "c"]})
    with pytest.raises(UnknownIdError):
        enroll_average(emb, {"m": ["zzz"]})
    rng = np.random.default_rng(0)
    V = rng.normal(size=(5, 7))
    five = enroll_average(EmbeddingSet(list("vwxyz"), V), {"m": list("vwxyz")})
    mean = V.sum(axis=0) / 5
    np.testing.assert_allclose(five.vectors[0], mean / np.sqrt((mean**2).sum()), atol=1e-9)


def test_score_trials_cosine():
    enroll = EmbeddingSet(["m1", "m2"], np.array([[1.0, 0.0], [0.0, 2.0]]))
    test = EmbeddingSet(["t1", "t2"], np.array([[5.0, 0.0], [1.0, 1.0]]))
    trials = TrialList([("m1", "t1", "target"), ("m2", "t1", "nontarget"), ("m2", "t2", "target")])
    s = score_trials(trials, enroll, test)
    assert len(s.scores) == len(trials)
    np.testing.assert_allclose(s.scores, [1.0, 0.0, np.sqrt(0.5)], atol=1e-15)
    with pytest.raises(UnknownIdError):
        score_trials(TrialList([("m9", "t1", "target")]), enroll, test)


def test_score_trials_plda_matches_pairwise():
    rng = np.random.default_rng(0)
    m = PldaModel(np.zeros(3), rng.normal(size=(3, 2)), np.eye(3) * 0.5)
    enroll = EmbeddingSet(["a", "b"], rng.normal(size=(2, 3)))
    test = EmbeddingSet(["x", "y", "z"], rng.normal(size=(3, 3)))
    trials = TrialList([(e, t, "unknown") for e in ("a", "b") for t in ("x", "y", "z")])
    s = score_trials(trials, enroll, test, m)
    ei, ti = enroll.index(), test.index()
    for (e, t, _), v in zip(trials.trials, s.scores):
        assert v == pytest.approx(plda_llr(m, enroll.vectors[ei[e]], test.vectors[ti[t]]), abs=1e-10)


def test_score_averaging_mode():
    members = EmbeddingSet(["a", "b"], np.array([[1.0, 0.0], [0.0, 1.0]]))
    test = EmbeddingSet(["t"], np.array([[1.0, 0.0]]))
    s = score_trials_averaged(TrialList([("m", "t", "target")]), members, {"m": ["a", "b"]}, test)
    assert s.scores[0] == pytest.approx(0.5)


def test_evaluate_and_csv(tmp_path):
    s = ScoreSet(["m"] * 4, ["a", "b", "c", "d"], np.array([0.9, 0.8, 0.1, 0.2]), ["target", "target", "nontarget", "nontarget"])
    rep = evaluate(s, DCF14)
    assert rep.eer == 0.0 and rep.min_dcf == 0.0
    assert "EER[%]  0.00" in rep.text() and "minDCF  0.000" in rep.text()
    write_metrics_csv(rep, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "metric,value" and lines[1] == "eer_percent,0"
    write_det_csv(det_curve(*s.split()), tmp_path / "det.csv")
    assert (tmp_path / "det.csv").read_text().splitlines()[0] == "p_fa,p_miss"
