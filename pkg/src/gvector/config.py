"""Flat ``key = value`` run configuration.

Precedence is flag > file > default. Unknown keys are rejected.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .gnn.layers import VARIANTS
from .graph import METRICS
from .metrics import DCF14, DCF_001, DcfParams

PATH_KEYS = ("dev", "dev_labels", "enroll", "enroll_map", "test", "trials")


@dataclass
class RunConfig:
    dev: str = ""
    dev_labels: str = ""
    enroll: str = ""
    enroll_map: str = ""
    test: str = ""
    trials: str = ""
    out_dir: str = "run"

    backend: str = "gnn"
    length_norm: bool = True
    node_transform: str = "lda"
    edge_metric: str = "lda_plda"
    graph_rule: str = "threshold"
    threshold: float = 8.0
    top_k: int = 10
    lda_dim: int = 250
    plda_dim: int = 50
    plda_iters: int = 20

    variant: str = "GAT"
    depth: int = 2
    hidden_dim: int = 256
    gvec_dim: int = 250
    heads: int = 4
    hops: int = 3
    activation: str = ""
    epochs: int = 600
    lr: float = 1e-4
    weight_decay: float = 5e-4
    seed: int = 0

    scorer: str = "cosine"
    enroll_mode: str = "average"
    dcf: str = "dcf14"
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        choices = {
            "backend": ("gnn", "cosine", "lda_cosine", "plda"),
            "node_transform": ("raw", "lda"),
            "edge_metric": METRICS,
            "graph_rule": ("threshold", "top_k"),
            "variant": VARIANTS,
            "activation": ("", "relu", "identity"),
            "scorer": ("cosine", "plda"),
            "enroll_mode": ("average", "score_average"),
            "dcf": ("dcf14", "dcf001", "custom"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}={getattr(self, key)!r} not in {list(allowed)}")
        for key in ("lda_dim", "plda_dim", "depth", "hidden_dim", "gvec_dim", "heads", "hops", "top_k"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.epochs < 0 or self.plda_iters < 0:
            raise ConfigError("epochs and plda_iters must be >= 0")

    @property
    def dcf_params(self) -> DcfParams:
        if self.dcf == "dcf14":
            return DCF14
        if self.dcf == "dcf001":
            return DCF_001
        try:
            return DcfParams(self.c_miss, self.c_fa, self.p_target)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def updated(self, **overrides) -> RunConfig:
        return RunConfig(**{**asdict(self), **overrides})

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())

    def check_paths(self, keys=PATH_KEYS) -> None:
        for key in keys:
            value = getattr(self, key)
            if not value:
                raise ConfigError(f"missing required path '{key}'")
            if not os.path.exists(value):
                raise ConfigError(f"{key}: no such file {value}")


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = coerce(key, raw)
    return values


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then ``overrides``.

    Relative paths inside a config file are taken relative to the file's
    directory; relative paths given as overrides are left as they are.
    """
    values: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
        for key in (*PATH_KEYS, "out_dir"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = str(p.parent / values[key])
    for key, raw in (overrides or {}).items():
        values[key] = coerce(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values)


def expand_sweep(values: dict[str, str]) -> list[dict[str, str]]:
    """Cartesian product of comma-separated values, e.g. {'threshold': '2,4,6'}."""
    runs: list[dict[str, str]] = [{}]
    for key, raw in values.items():
        options = [v.strip() for v in raw.split(",") if v.strip()]
        if not options:
            raise ConfigError(f"sweep key {key!r} has no values")
        runs = [{**r, key: opt} for r in runs for opt in options]
    return runs
