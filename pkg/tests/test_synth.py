import numpy as np
import pytest

from gvector.errors import ConfigError
from gvector.metrics import compute_eer, enroll_average, score_trials
from gvector.synth import SynthConfig, generate


def cosine_eer(data):
    models = enroll_average(data.enroll, data.model_map)
    return compute_eer(*score_trials(data.trials, models, data.test).split())


def test_same_seed_bitwise():
    a, b = generate(SynthConfig(seed=5)), generate(SynthConfig(seed=5))
    for part in ("dev", "enroll", "test"):
        assert getattr(a, part).ids == getattr(b, part).ids
        assert getattr(a, part).vectors.tobytes() == getattr(b, part).vectors.tobytes()
    assert a.trials == b.trials
    assert generate(SynthConfig(seed=6)).dev.vectors.tobytes() != a.dev.vectors.tobytes()


def test_split_sizes_and_disjointness():
    cfg = SynthConfig(n_speakers=7, per_speaker=20)
    d = generate(cfg)
    assert (cfg.n_dev, cfg.n_enroll, cfg.n_test) == (12, 5, 3)
    assert len(d.dev.ids) == 7 * 12 and len(d.enroll.ids) == 35 and len(d.test.ids) == 21
    assert not (set(d.dev.ids) & set(d.enroll.ids) or set(d.enroll.ids) & set(d.test.ids) or set(d.dev.ids) & set(d.test.ids))
    assert all(len(m) == 5 for m in d.model_map.values())
    assert len(d.trials) == 7 * 21
    keys = d.trials.keys()
    assert keys.count("target") == 21
    np.testing.assert_allclose(np.linalg.norm(d.all.vectors, axis=1), 1.0, atol=1e-12)


def test_vanishing_within_std_collapses_speakers():
    d = generate(SynthConfig(within_std=1e-12, n_speakers=4, per_speaker=8))
    all_ = d.all
    for spk in range(4):
        rows = all_.vectors[[i for i, u in enumerate(all_.ids) if u.startswith(f"spk{spk:04d}")]]
        assert np.max(np.abs(rows - rows[0])) < 1e-10


def test_labels_match_generating_means():
    d = generate(SynthConfig(n_speakers=30, within_std=0.3, dim=50))
    all_ = d.all
    M = d.speaker_means / np.linalg.norm(d.speaker_means, axis=1, keepdims=True)
    nearest = np.argmax(all_.vectors @ M.T, axis=1)
    assert [f"spk{k:04d}" for k in nearest] == all_.label_array()


def test_high_ratio_cosine_eer_below_one_percent():
    assert cosine_eer(generate(SynthConfig(n_speakers=20, dim=50, between_std=1.0, within_std=0.1))) < 1.0


@pytest.mark.parametrize("seed", range(3))
def test_eer_non_decreasing_in_within_std(seed):
    eers = [cosine_eer(generate(SynthConfig(n_speakers=20, dim=10, within_std=w, seed=seed))) for w in (0.3, 0.6, 1.2)]
    assert eers[0] <= eers[1] <= eers[2]


def test_invalid_configs():
    with pytest.raises(ConfigError):
        SynthConfig(within_std=0)
    with pytest.raises(ConfigError):
        SynthConfig(per_speaker=6)
    with pytest.raises(ConfigError):
        SynthConfig(n_speakers=1)
