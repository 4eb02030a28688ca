"""Synthetic benchmark: every backend on seeded speaker clusters.

Used by the acceptance tests and the scripts in ``scripts/``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, coerce
from .errors import ConfigError
from .metrics import evaluate
from .pipeline import Frontend, TrialData, fit_frontend_for, run_baseline, run_gnn
from .synth import SynthConfig, generate


@dataclass(frozen=True)
class BenchConfig:
    n_speakers: int = 50
    per_speaker: int = 20
    dim: int = 100
    ratio: float = 3.0  # between_std / within_std
    n_enroll: int = 5
    dev_fraction: float = 0.6

    def synth(self, seed: int) -> SynthConfig:
        return SynthConfig(
            n_speakers=self.n_speakers,
            per_speaker=self.per_speaker,
            dim=self.dim,
            between_std=1.0,
            within_std=1.0 / self.ratio,
            seed=seed,
            dev_fraction=self.dev_fraction,
            n_enroll=self.n_enroll,
        )


@dataclass(frozen=True)
class BenchResult:
    backend: str
    seed: int
    eer: float
    min_dcf: float
    seconds: float
    mean_degree: float = float("nan")
    final_loss: float = float("nan")


def trial_data(bench: BenchConfig, seed: int) -> TrialData:
    d = generate(bench.synth(seed))
    return TrialData(d.dev, d.enroll, d.test, d.model_map, d.trials)


def run_one(cfg: RunConfig, data: TrialData, seed: int, frontend: Frontend | None = None) -> BenchResult:
    """One backend on one dataset; ``seconds`` includes fitting the frontend if not given."""
    t0 = time.perf_counter()
    if frontend is None and cfg.backend != "cosine":
        frontend = fit_frontend_for(cfg, data.dev)
    if cfg.backend == "gnn":
        res = run_gnn(cfg, data, frontend)
        rep = evaluate(res.scores, cfg.dcf_params)
        g = res.inputs.graph
        return BenchResult("gnn", seed, rep.eer, rep.min_dcf, time.perf_counter() - t0, 2 * g.n_edges / g.n, res.loss_history[-1] if res.loss_history else float("nan"))
    rep = evaluate(run_baseline(cfg, data, frontend), cfg.dcf_params)
    return BenchResult(cfg.backend, seed, rep.eer, rep.min_dcf, time.perf_counter() - t0)


def median(values) -> float:
    return float(np.median(np.asarray(list(values), dtype=np.float64)))


def is_u_shaped(values) -> bool:
    """True when the minimum is strictly below both grid ends (an interior minimum)."""
    v = np.asarray(values, dtype=np.float64)
    k = int(np.argmin(v))
    return 0 < k < len(v) - 1 and v[k] < v[0] and v[k] < v[-1]


def parse_overrides(pairs) -> dict:
    """``["epochs=100", "variant=GCN"]`` -> typed RunConfig overrides."""
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"override {pair!r} is not KEY=VALUE")
        out[key.strip()] = coerce(key.strip(), value.strip())
    return out


def run_grid(bench: BenchConfig, seeds, configs: dict[str, RunConfig], progress=None) -> list[tuple[str, BenchResult]]:
    """Every named config on every seed; one frontend per seed and frontend settings."""
    rows = []
    for seed in seeds:
        data = trial_data(bench, seed)
        frontends: dict[tuple, Frontend] = {}
        for name, cfg in configs.items():
            key = (cfg.lda_dim, cfg.plda_dim, cfg.plda_iters, cfg.length_norm)
            if cfg.backend != "cosine" and key not in frontends:
                frontends[key] = fit_frontend_for(cfg, data.dev)
            res = run_one(cfg, data, seed, frontends.get(key))
            rows.append((name, res))
            if progress:
                progress(name, res)
    return rows


RESULT_HEADER = "name,backend,seed,eer_percent,min_dcf,seconds,mean_degree,final_loss"


def result_line(name: str, r: BenchResult) -> str:
    return f"{name},{r.backend},{r.seed},{r.eer:.4f},{r.min_dcf:.4f},{r.seconds:.1f},{r.mean_degree:.2f},{r.final_loss:.5f}"
