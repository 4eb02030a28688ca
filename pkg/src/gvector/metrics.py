"""Trial scoring, EER, minDCF and DET curves.

Convention throughout: a trial is accepted when ``score >= threshold``.
Thresholds swept are the distinct score values plus +inf (and -inf for
minDCF, which coincides with accepting everything).
"""

from __future__ import annotations

import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UnknownIdError, ZeroNormError
from .io import EmbeddingSet, ScoreSet, TrialList, _atomic_write_text
from .preproc import PldaModel


@dataclass(frozen=True)
class DcfParams:
    c_miss: float = 1.0
    c_fa: float = 1.0
    p_target: float = 0.01
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise DataError("DCF costs must be positive")
        if not 0 < self.p_target < 1:
            raise DataError("p_target must be in (0, 1)")


# NIST SRE14 i-vector challenge cost: P_miss + 100 * P_fa.
DCF14 = DcfParams(c_miss=1.0, c_fa=1.0, p_target=1.0 / 101.0, normalize=True)
DCF_001 = DcfParams(c_miss=1.0, c_fa=1.0, p_target=0.01, normalize=True)


def enroll_average(emb: EmbeddingSet, model_map: Mapping[str, Sequence[str]]) -> EmbeddingSet:
    """One vector per model: the length-normalized mean of its members."""
    idx = emb.index()
    ids, rows = [], []
    for model, members in model_map.items():
        if not members:
            raise DataError(f"model {model!r} has no members")
        try:
            sel = [idx[m] for m in members]
        except KeyError as exc:
            raise UnknownIdError(f"model {model!r}: unknown member id {exc.args[0]!r}") from None
        mean = emb.vectors[sel].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm <= np.finfo(np.float64).tiny * 1e3 or norm < 1e-12 * np.abs(emb.vectors[sel]).max():
            raise ZeroNormError(f"model {model!r}: mean of members has zero norm")
        ids.append(model)
        rows.append(mean / norm)
    return EmbeddingSet(ids, np.array(rows))


def _resolve(ids: Sequence[str], emb: EmbeddingSet, what: str) -> np.ndarray:
    idx = emb.index()
    try:
        return np.array([idx[i] for i in ids], dtype=np.int64)
    except KeyError as exc:
        raise UnknownIdError(f"{what} id {exc.args[0]!r} not found") from None


def score_trials(
    trials: TrialList,
    enroll: EmbeddingSet,
    test: EmbeddingSet,
    scorer: str | PldaModel = "cosine",
) -> ScoreSet:
    """Score every trial with cosine similarity or a PLDA log-likelihood ratio."""
    mi = _resolve(trials.model_ids(), enroll, "model")
    ti = _resolve(trials.test_ids(), test, "test")
    um, minv = np.unique(mi, return_inverse=True)
    ut, tinv = np.unique(ti, return_inverse=True)
    A, B = enroll.vectors[um], test.vectors[ut]
    if isinstance(scorer, PldaModel):
        S = scorer.llr_matrix(A, B)
    elif scorer == "cosine":
        na = np.linalg.norm(A, axis=1)
        nb = np.linalg.norm(B, axis=1)
        if np.any(na == 0) or np.any(nb == 0):
            raise ZeroNormError("cosine scoring of a zero vector")
        S = (A / na[:, None]) @ (B / nb[:, None]).T
    else:
        raise DataError(f"unknown scorer {scorer!r}")
    scores = S[minv.ravel(), tinv.ravel()]
    return ScoreSet(trials.model_ids(), trials.test_ids(), scores, trials.keys())


def score_trials_averaged(
    trials: TrialList,
    members: EmbeddingSet,
    model_map: Mapping[str, Sequence[str]],
    test: EmbeddingSet,
    scorer: str | PldaModel = "cosine",
) -> ScoreSet:
    """Alternative to enrollment averaging: mean of per-member scores."""
    model_ids = trials.model_ids()
    total = np.zeros(len(trials))
    missing = set(model_ids) - set(model_map)
    if missing:
        raise UnknownIdError(f"model id {sorted(missing)[0]!r} not found")
    counts = {model: len(model_map[model]) for model in set(model_ids)}
    for k in range(max(counts.values())):
        sub_trials, pos = [], []
        for t, (model, test_id, key) in enumerate(trials.trials):
            mem = model_map[model]
            if k < len(mem):
                sub_trials.append((mem[k], test_id, key))
                pos.append(t)
        sub = TrialList(sub_trials)  # members are unique per model, so no duplicate pairs
        total[pos] += score_trials(sub, members, test, scorer).scores
    avg = total / np.array([counts[m] for m in model_ids])
    return ScoreSet(model_ids, trials.test_ids(), avg, trials.keys())


def _check_two_class(tar: np.ndarray, non: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tar = np.asarray(tar, dtype=np.float64).ravel()
    non = np.asarray(non, dtype=np.float64).ravel()
    if tar.size == 0 or non.size == 0:
        raise DataError("need at least one target and one nontarget score")
    if not (np.all(np.isfinite(tar)) and np.all(np.isfinite(non))):
        raise DataError("scores must be finite")
    return tar, non


def error_rates(tar: np.ndarray, non: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, P_miss, P_fa) at every distinct score and at +inf, in rising order."""
    tar, non = _check_two_class(tar, non)
    thresholds = np.unique(np.concatenate([tar, non]))
    tar_s, non_s = np.sort(tar), np.sort(non)
    # P_miss(t) = #{tar < t} / N_tar ; P_fa(t) = #{non >= t} / N_non
    p_miss = np.searchsorted(tar_s, thresholds, side="left") / tar.size
    p_fa = (non.size - np.searchsorted(non_s, thresholds, side="left")) / non.size
    thresholds = np.append(thresholds, np.inf)
    p_miss = np.append(p_miss, 1.0)
    p_fa = np.append(p_fa, 0.0)
    return thresholds, p_miss, p_fa


def compute_eer(tar: np.ndarray, non: np.ndarray, interpolate: bool = True) -> float:
    """Equal error rate in percent.

    The miss/false-alarm staircase is walked in threshold order and the
    crossing is linearly interpolated between the two sweep points that
    bracket it. With ``interpolate=False`` the larger of the two rates at
    the first point where P_miss >= P_fa is returned instead.
    """
    _, pm, pf = error_rates(tar, non)
    diff = pm - pf
    # diff starts at -1 (accept all) and ends at +1 (reject all)
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return 100.0 * float(pm[k])
    if not interpolate:
        return 100.0 * float(max(pm[k], pf[k]))
    j = k - 1
    lam = (pf[j] - pm[j]) / ((pm[k] - pm[j]) - (pf[k] - pf[j]))
    return 100.0 * float(pm[j] + lam * (pm[k] - pm[j]))


def dcf_curve(tar: np.ndarray, non: np.ndarray, params: DcfParams = DCF_001) -> tuple[np.ndarray, np.ndarray]:
    """(thresholds, cost) at -inf, every distinct score, and +inf."""
    th, pm, pf = error_rates(tar, non)
    th = np.concatenate([[-np.inf], th])
    pm = np.concatenate([[0.0], pm])
    pf = np.concatenate([[1.0], pf])
    a = params.c_miss * params.p_target
    b = params.c_fa * (1.0 - params.p_target)
    cost = a * pm + b * pf
    if params.normalize:
        cost = cost / min(a, b)
    return th, cost


def compute_min_dcf(tar: np.ndarray, non: np.ndarray, params: DcfParams = DCF_001) -> float:
    return float(dcf_curve(tar, non, params)[1].min())


def det_curve(tar: np.ndarray, non: np.ndarray) -> list[tuple[float, float]]:
    """(P_fa, P_miss) per sweep threshold, in rising threshold order."""
    _, pm, pf = error_rates(tar, non)
    return list(zip(pf.tolist(), pm.tolist()))


@dataclass(frozen=True)
class MetricReport:
    eer: float
    min_dcf: float
    dcf_params: DcfParams
    n_target: int
    n_nontarget: int

    def as_rows(self) -> list[tuple[str, float]]:
        return [
            ("eer_percent", self.eer),
            ("min_dcf", self.min_dcf),
            ("p_target", self.dcf_params.p_target),
            ("c_miss", self.dcf_params.c_miss),
            ("c_fa", self.dcf_params.c_fa),
            ("n_target", self.n_target),
            ("n_nontarget", self.n_nontarget),
        ]

    def text(self, title: str = "") -> str:
        lines = [title] if title else []
        lines.append(f"EER[%]  {self.eer:.2f}")
        lines.append(f"minDCF  {self.min_dcf:.3f}  (p_target={self.dcf_params.p_target:.6g})")
        lines.append(f"trials  {self.n_target} target / {self.n_nontarget} nontarget")
        return "\n".join(lines)


def evaluate(scores: ScoreSet, params: DcfParams = DCF_001) -> MetricReport:
    tar, non = scores.split()
    return MetricReport(compute_eer(tar, non), compute_min_dcf(tar, non, params), params, tar.size, non.size)


def write_metrics_csv(report: MetricReport, path: str | os.PathLike) -> None:
    _atomic_write_text(path, ["metric,value", *(f"{k},{v:.9g}" for k, v in report.as_rows())])


def write_det_csv(points: Sequence[tuple[float, float]], path: str | os.PathLike) -> None:
    _atomic_write_text(path, ["p_fa,p_miss", *(f"{a:.9g},{b:.9g}" for a, b in points)])
