"""Seeded speaker clusters on the unit hypersphere.

Speaker means are drawn from N(0, between_std^2 I), utterances add
N(0, within_std^2 I) noise, and every vector is length-normalized. Each
speaker's utterances are split in order into a labelled development part
(``dev_fraction`` of them), ``n_enroll`` enrollment vectors forming that
speaker's model, and the remaining test vectors. Trials pair every model
with every test vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .io import NONTARGET, TARGET, EmbeddingSet, TrialList, concat


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 20
    per_speaker: int = 20
    dim: int = 50
    between_std: float = 1.0
    within_std: float = 0.1
    seed: int = 0
    dev_fraction: float = 0.6
    n_enroll: int = 5

    def __post_init__(self) -> None:
        if self.n_speakers < 2:
            raise ConfigError("need at least 2 speakers")
        if self.dim < 1:
            raise ConfigError("dim must be positive")
        if self.between_std <= 0 or self.within_std <= 0:
            raise ConfigError("standard deviations must be positive")
        if self.n_enroll < 1 or not 0 < self.dev_fraction < 1:
            raise ConfigError("invalid split proportions")
        if self.per_speaker < self.n_enroll + 2:
            raise ConfigError(f"per_speaker must be >= n_enroll + 2 = {self.n_enroll + 2}")

    @property
    def n_dev(self) -> int:
        want = int(round(self.dev_fraction * self.per_speaker))
        return max(1, min(want, self.per_speaker - self.n_enroll - 1))

    @property
    def n_test(self) -> int:
        return self.per_speaker - self.n_dev - self.n_enroll


@dataclass(frozen=True)
class SynthData:
    dev: EmbeddingSet
    enroll: EmbeddingSet
    test: EmbeddingSet
    model_map: dict[str, list[str]]
    trials: TrialList
    speaker_means: np.ndarray

    @property
    def all(self) -> EmbeddingSet:
        return concat([self.dev, self.enroll, self.test])

    def test_labels(self) -> dict[str, str]:
        return dict(self.test.labels or {})


def speaker_name(s: int) -> str:
    return f"spk{s:04d}"


def generate(config: SynthConfig) -> SynthData:
    c = config
    rng = np.random.default_rng(c.seed)
    means = c.between_std * rng.standard_normal((c.n_speakers, c.dim))
    noise = rng.standard_normal((c.n_speakers, c.per_speaker, c.dim))
    X = means[:, None, :] + c.within_std * noise
    X /= np.linalg.norm(X, axis=2, keepdims=True)

    parts: dict[str, tuple[list[str], list[np.ndarray]]] = {"dev": ([], []), "enroll": ([], []), "test": ([], [])}
    labels: dict[str, str] = {}
    model_map: dict[str, list[str]] = {}
    bounds = {"dev": (0, c.n_dev), "enroll": (c.n_dev, c.n_dev + c.n_enroll), "test": (c.n_dev + c.n_enroll, c.per_speaker)}
    for s in range(c.n_speakers):
        spk = speaker_name(s)
        for part, (lo, hi) in bounds.items():
            for u in range(lo, hi):
                uid = f"{spk}-{part}{u:03d}"
                parts[part][0].append(uid)
                parts[part][1].append(X[s, u])
                labels[uid] = spk
                if part == "enroll":
                    model_map.setdefault(spk, []).append(uid)

    def make(part: str) -> EmbeddingSet:
        ids, rows = parts[part]
        return EmbeddingSet(ids, np.array(rows), {i: labels[i] for i in ids})

    dev, enroll, test = make("dev"), make("enroll"), make("test")
    trials = TrialList(
        [
            (model, tid, TARGET if test.labels[tid] == model else NONTARGET)
            for model in model_map
            for tid in test.ids
        ]
    )
    return SynthData(dev, enroll, test, model_map, trials, means)
