"""Full-batch transductive training and g-vector extraction."""

from __future__ import annotations

import logging
import os
from collections.abc import Sequence

import numpy as np

from ..errors import DataError, DivergenceError
from ..graph import Graph
from ..io import EmbeddingSet, _atomic_write_text
from .model import GnnConfig, GnnModel
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


def train(
    config: GnnConfig,
    graph: Graph,
    X: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray,
    log_every: int = 0,
) -> tuple[GnnModel, list[float]]:
    """Train on every node, with the loss restricted to ``mask``.

    ``labels`` are class indices for masked nodes (anything for the rest).
    """
    mask = np.asarray(mask)
    if not np.any(mask):
        raise DataError("training mask selects no labelled nodes")
    model = GnnModel(config)
    ops = model.ops(graph)
    X = np.asarray(X, dtype=model.dtype)
    state = AdamState()
    params = model.parameters()
    history: list[float] = []
    for epoch in range(config.epochs):
        try:
            loss, grads = model.loss_and_grads(ops, X, labels, mask)
        except DivergenceError as exc:
            raise DivergenceError(f"epoch {epoch}: {exc}") from None
        history.append(loss)
        adam_step(params, grads, state, config.lr, config.weight_decay)
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d loss %.5f", epoch + 1, loss)
    return model, history


def predict(model: GnnModel, graph: Graph, X: np.ndarray) -> np.ndarray:
    logits, _, _ = model.forward(model.ops(graph), X, "eval")
    return logits.argmax(axis=1)


def extract_gvectors(model: GnnModel, graph: Graph, X: np.ndarray, ids: Sequence[str]) -> EmbeddingSet:
    """Eval-mode linear-layer outputs for every node."""
    _, gvec, _ = model.forward(model.ops(graph), X, "eval")
    return EmbeddingSet(list(ids), gvec.astype(np.float64))


def write_loss_history(history: Sequence[float], path: str | os.PathLike) -> None:
    _atomic_write_text(path, ["epoch,loss", *(f"{i + 1},{v:.9g}" for i, v in enumerate(history))])
