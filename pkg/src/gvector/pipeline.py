"""End-to-end backends: cosine, LDA+cosine, LDA+PLDA and the GNN (g-vector) backend."""

from __future__ import annotations

import logging
import os
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError, DataError, DimensionMismatchError, UnknownIdError
from .gnn import GnnConfig, GnnModel, extract_gvectors, train
from .graph import Graph, build_graph, similarity_matrix
from .io import EmbeddingSet, ScoreSet, TrialList, concat, invert_map, read_embeddings, read_labels, read_trials
from .metrics import enroll_average, score_trials, score_trials_averaged
from .preproc import (
    LdaTransform,
    PldaModel,
    fit_lda,
    fit_plda,
    length_norm,
    load_lda,
    load_mean,
    load_plda,
    save_lda,
    save_mean,
    save_plda,
)

log = logging.getLogger(__name__)


@dataclass
class Frontend:
    """Preprocessing fitted on labelled development data.

    center/length-norm -> LDA -> center/length-norm -> PLDA; each
    normalization step is skipped when ``center_mean``/``plda_mean`` is None.
    """

    center_mean: np.ndarray | None
    lda: LdaTransform
    plda_mean: np.ndarray | None
    plda: PldaModel

    def normalize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return length_norm(X, self.center_mean) if self.center_mean is not None else X

    def project(self, X: np.ndarray) -> np.ndarray:
        """LDA space, prepared for PLDA."""
        Y = self.lda.transform(self.normalize(X))
        return length_norm(Y, self.plda_mean) if self.plda_mean is not None else Y

    def node_features(self, X: np.ndarray, transform: str) -> np.ndarray:
        if transform == "raw":
            return self.normalize(X)
        if transform == "lda":
            return self.project(X)
        raise DataError(f"unknown node transform {transform!r}")

    def similarity(self, X: np.ndarray, metric: str):
        Xn = self.normalize(X)
        if metric == "cosine":
            return similarity_matrix(Xn, "cosine")
        if metric == "lda_cosine":
            return similarity_matrix(Xn, "lda_cosine", lda=self.lda)
        return similarity_matrix(Xn, "lda_plda", lda=self.lda, plda=self.plda, plda_mean=self.plda_mean)


def fit_frontend(
    dev: EmbeddingSet,
    labels: Sequence[str],
    lda_dim: int,
    plda_dim: int,
    plda_iters: int = 20,
    use_length_norm: bool = True,
) -> Frontend:
    n_classes = len(set(labels))
    lda_dim_eff = min(lda_dim, n_classes - 1, dev.dim)
    if lda_dim_eff != lda_dim:
        log.warning("LDA dim %d reduced to %d (classes-1 / input dim bound)", lda_dim, lda_dim_eff)
    center = dev.vectors.mean(axis=0) if use_length_norm else None
    X0 = length_norm(dev.vectors, center) if use_length_norm else dev.vectors
    lda = fit_lda(X0, labels, lda_dim_eff)
    Y = lda.transform(X0)
    plda_mean = Y.mean(axis=0) if use_length_norm else None
    Yn = length_norm(Y, plda_mean) if use_length_norm else Y
    plda_dim_eff = min(plda_dim, lda_dim_eff)
    plda = fit_plda(Yn, labels, plda_dim_eff, plda_iters)
    return Frontend(center, lda, plda_mean, plda)


_FRONTEND_FILES = {"center": "center.gmen", "lda": "lda.glda", "plda_mean": "plda_mean.gmen", "plda": "plda.gpld"}


def save_frontend(fe: Frontend, directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for key in ("center", "plda_mean"):
        path = d / _FRONTEND_FILES[key]
        mean = fe.center_mean if key == "center" else fe.plda_mean
        if mean is not None:
            save_mean(mean, path)
        elif path.exists():
            path.unlink()
    save_lda(fe.lda, d / _FRONTEND_FILES["lda"])
    save_plda(fe.plda, d / _FRONTEND_FILES["plda"])


def load_frontend(directory: str | os.PathLike) -> Frontend:
    d = Path(directory)
    for key in ("lda", "plda"):
        if not (d / _FRONTEND_FILES[key]).exists():
            raise ConfigError(f"missing {d / _FRONTEND_FILES[key]}; run preprocess first")

    def mean(key):
        path = d / _FRONTEND_FILES[key]
        return load_mean(path) if path.exists() else None

    return Frontend(mean("center"), load_lda(d / _FRONTEND_FILES["lda"]), mean("plda_mean"), load_plda(d / _FRONTEND_FILES["plda"]))


@dataclass
class TrialData:
    dev: EmbeddingSet
    enroll: EmbeddingSet
    test: EmbeddingSet
    model_map: dict[str, list[str]]
    trials: TrialList


def load_dev(cfg: RunConfig) -> EmbeddingSet:
    dev = read_embeddings(cfg.dev)
    labels = read_labels(cfg.dev_labels)
    missing = [i for i in dev.ids if i not in labels]
    if missing:
        raise UnknownIdError(f"{len(missing)} dev ids have no label in {cfg.dev_labels}, e.g. {missing[0]!r}")
    return dev.with_labels({i: labels[i] for i in dev.ids})


def load_model_map(path: str | os.PathLike, enroll: EmbeddingSet) -> dict[str, list[str]]:
    model_map = invert_map(read_labels(path))
    known = set(enroll.ids)
    for model, members in model_map.items():
        bad = [m for m in members if m not in known]
        if bad:
            raise UnknownIdError(f"model {model!r}: enrollment id {bad[0]!r} not in enrollment set")
    return model_map


def check_trials(trials: TrialList, model_map, test: EmbeddingSet) -> None:
    known = set(test.ids)
    for model, test_id, _ in trials.trials:
        if model not in model_map:
            raise UnknownIdError(f"trial model {model!r} has no enrollment")
        if test_id not in known:
            raise UnknownIdError(f"trial test id {test_id!r} not in test set")


def load_trial_data(cfg: RunConfig) -> TrialData:
    """Read and cross-check every input named by the config."""
    cfg.check_paths()
    dev = load_dev(cfg)
    enroll = read_embeddings(cfg.enroll)
    test = read_embeddings(cfg.test)
    for name, emb in (("enroll", enroll), ("test", test)):
        if emb.dim != dev.dim:
            raise DimensionMismatchError(f"{name} dim {emb.dim} != dev dim {dev.dim}")
    concat([dev.with_labels(None), enroll, test])  # ids must be unique across sets
    model_map = load_model_map(cfg.enroll_map, enroll)
    trials = read_trials(cfg.trials)
    check_trials(trials, model_map, test)
    return TrialData(dev, enroll, test, model_map, trials)


def _score(cfg: RunConfig, trials, enroll: EmbeddingSet, model_map, test: EmbeddingSet, scorer) -> ScoreSet:
    if cfg.enroll_mode == "score_average":
        return score_trials_averaged(trials, enroll, model_map, test, scorer)
    if scorer == "cosine":
        models = enroll_average(enroll, model_map)
    else:
        # PLDA works on the raw averages, not unit-norm ones
        idx = enroll.index()
        models = EmbeddingSet(
            list(model_map),
            np.array([enroll.vectors[[idx[m] for m in mem]].mean(axis=0) for mem in model_map.values()]),
        )
    return score_trials(trials, models, test, scorer)


def run_baseline(cfg: RunConfig, data: TrialData, frontend: Frontend | None = None) -> ScoreSet:
    """Non-graph backends: ``cosine`` (normalized input), ``lda_cosine``, ``plda``."""
    if cfg.backend == "cosine":
        fn = (lambda X: frontend.normalize(X)) if frontend else (lambda X: X)
        scorer = "cosine"
    else:
        if frontend is None:
            frontend = fit_frontend_for(cfg, data.dev)
        if cfg.backend == "lda_cosine":
            fn = lambda X: frontend.lda.transform(frontend.normalize(X))  # noqa: E731
            scorer = "cosine"
        else:
            fn = frontend.project
            scorer = frontend.plda
    enroll = data.enroll.with_vectors(fn(data.enroll.vectors))
    test = data.test.with_vectors(fn(data.test.vectors))
    return _score(cfg, data.trials, enroll, data.model_map, test, scorer)


def fit_frontend_for(cfg: RunConfig, dev: EmbeddingSet) -> Frontend:
    return fit_frontend(dev, dev.label_array(), cfg.lda_dim, cfg.plda_dim, cfg.plda_iters, cfg.length_norm)


def gnn_config(cfg: RunConfig, in_dim: int, n_classes: int) -> GnnConfig:
    return GnnConfig(
        variant=cfg.variant,
        in_dim=in_dim,
        n_classes=n_classes,
        hidden_dim=cfg.hidden_dim,
        gvec_dim=cfg.gvec_dim,
        depth=cfg.depth,
        heads=cfg.heads,
        hops=cfg.hops,
        activation=cfg.activation or None,
        epochs=cfg.epochs,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        seed=cfg.seed,
    )


@dataclass
class GraphInputs:
    nodes: EmbeddingSet
    graph: Graph
    labels: np.ndarray
    mask: np.ndarray
    classes: list[str]


def build_graph_inputs(cfg: RunConfig, frontend: Frontend, sets: Sequence[EmbeddingSet]) -> GraphInputs:
    """Node features and graph over every vector; labels from sets that carry them."""
    allset = concat(sets)
    feats = frontend.node_features(allset.vectors, cfg.node_transform)
    sim = frontend.similarity(allset.vectors, cfg.edge_metric)
    if cfg.graph_rule == "threshold":
        graph = build_graph(sim, threshold=cfg.threshold)
    else:
        graph = build_graph(sim, top_k=cfg.top_k)
    labels_map = allset.labels or {}
    dev_ids = set(sets[0].ids)
    classes = sorted({labels_map[i] for i in sets[0].ids})
    cls_index = {c: k for k, c in enumerate(classes)}
    labels = np.array([cls_index[labels_map[i]] if i in dev_ids else -1 for i in allset.ids])
    mask = labels >= 0
    log.info("graph: %d nodes, %d edges (mean degree %.1f)", graph.n, graph.n_edges, 2 * graph.n_edges / graph.n)
    return GraphInputs(allset.with_vectors(feats).with_labels(None), graph, labels, mask, classes)


@dataclass
class GnnRun:
    scores: ScoreSet
    model: GnnModel
    loss_history: list[float]
    gvectors: EmbeddingSet
    inputs: GraphInputs


def run_gnn(cfg: RunConfig, data: TrialData, frontend: Frontend | None = None) -> GnnRun:
    if frontend is None:
        frontend = fit_frontend_for(cfg, data.dev)
    inputs = build_graph_inputs(cfg, frontend, [data.dev, data.enroll, data.test])
    gcfg = gnn_config(cfg, inputs.nodes.dim, len(inputs.classes))
    model, history = train(gcfg, inputs.graph, inputs.nodes.vectors, inputs.labels, inputs.mask)
    gvecs = extract_gvectors(model, inputs.graph, inputs.nodes.vectors, inputs.nodes.ids)
    enroll = gvecs.subset(data.enroll.ids)
    test = gvecs.subset(data.test.ids)
    scores = _score(cfg, data.trials, enroll, data.model_map, test, "cosine")
    return GnnRun(scores, model, history, gvecs, inputs)


def run_backend(cfg: RunConfig, data: TrialData, frontend: Frontend | None = None) -> ScoreSet:
    if cfg.backend == "gnn":
        return run_gnn(cfg, data, frontend).scores
    return run_baseline(cfg, data, frontend)
