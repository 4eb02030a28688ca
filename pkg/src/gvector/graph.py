"""Similarity matrices and thresholded / nearest-neighbour graphs."""

from __future__ import annotations

import os
from collections.abc import Callable
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, DimensionMismatchError, MalformedHeaderError, MalformedLineError
from .io import _atomic_write_text
from .preproc import LdaTransform, PldaModel, length_norm

METRICS = ("cosine", "lda_cosine", "lda_plda")
_BLOCK_ROWS = 2048


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric pairwise similarities, either materialized or row-block computed.

    ``rows(start, stop)`` always works; ``values`` is only set for dense
    matrices. Blocks are pure functions of (start, stop), so the result does
    not depend on the order in which they are requested.
    """

    n: int
    metric: str
    values: np.ndarray | None = None
    row_fn: Callable[[int, int], np.ndarray] | None = None

    def rows(self, start: int, stop: int) -> np.ndarray:
        if self.values is not None:
            return self.values[start:stop]
        return self.row_fn(start, stop)

    def dense(self) -> np.ndarray:
        if self.values is not None:
            return self.values
        return np.vstack([self.rows(s, min(s + _BLOCK_ROWS, self.n)) for s in range(0, self.n, _BLOCK_ROWS)])

    @classmethod
    def from_dense(cls, values: np.ndarray, metric: str = "cosine") -> SimilarityMatrix:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionMismatchError("similarity matrix must be square")
        return cls(values.shape[0], metric, values=values)


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise DataError("cosine similarity of a zero vector is undefined")
    return X / norms[:, None]


def similarity_matrix(
    X: np.ndarray,
    metric: str = "cosine",
    lda: LdaTransform | None = None,
    plda: PldaModel | None = None,
    plda_mean: np.ndarray | None = None,
    dense: bool = True,
) -> SimilarityMatrix:
    """Pairwise similarities of the rows of ``X``.

    ``lda_plda`` scores LDA-projected vectors with the PLDA LLR. If
    ``plda_mean`` is given, projected vectors are centered on it and length
    normalized before scoring (the usual LDA -> length-norm -> PLDA chain);
    the PLDA model must have been trained on vectors prepared the same way.
    """
    X = np.asarray(X, dtype=np.float64)
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; choose from {METRICS}")
    if metric != "cosine":
        if lda is None:
            raise ConfigError(f"metric {metric} needs an LDA transform")
        X = lda.transform(X)
    if metric == "lda_plda":
        if plda is None:
            raise ConfigError("metric lda_plda needs a PLDA model")
        if plda_mean is not None:
            X = length_norm(X, plda_mean)
        if X.shape[1] != plda.dim:
            raise DimensionMismatchError(f"PLDA dim {plda.dim} != projected dim {X.shape[1]}")

        def row_fn(start: int, stop: int) -> np.ndarray:
            return plda.llr_matrix(X[start:stop], X)
    else:
        U = _unit_rows(X)

        def row_fn(start: int, stop: int) -> np.ndarray:
            return np.clip(U[start:stop] @ U.T, -1.0, 1.0)

    n = X.shape[0]
    if not dense:
        return SimilarityMatrix(n, metric, row_fn=row_fn)
    values = row_fn(0, n)
    values = 0.5 * (values + values.T)
    return SimilarityMatrix(n, metric, values=values)


def cosine_similarity(X: np.ndarray) -> np.ndarray:
    return similarity_matrix(X, "cosine").values


@dataclass(frozen=True)
class Graph:
    """Undirected binary graph; self-loops are implicit for every node.

    ``edges`` holds each off-diagonal edge once as (i, j) with i < j, sorted.
    """

    n: int
    edges: np.ndarray

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n < 1:
            raise DataError("graph needs at least one node")
        if edges.size:
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise DataError("edges must satisfy i < j")
            if edges.min() < 0 or edges.max() >= self.n:
                raise DataError("edge index out of range")
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
            if np.any(np.all(edges[1:] == edges[:-1], axis=1)):
                raise DataError("duplicate edge")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Binary adjacency with self-loops, as CSR (rows sorted by column)."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        diag = np.arange(self.n)
        rows = np.concatenate([i, j, diag])
        cols = np.concatenate([j, i, diag])
        a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n))
        a.sort_indices()
        return a

    def degree(self) -> np.ndarray:
        """Degree including the self-loop."""
        return np.diff(self.adjacency.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]]

    def permute(self, perm: np.ndarray) -> Graph:
        """Graph with node ``k`` renamed to ``perm[k]``."""
        perm = np.asarray(perm)
        e = perm[self.edges] if self.n_edges else self.edges
        return Graph(self.n, np.sort(e, axis=1))


def build_graph(
    sim: SimilarityMatrix,
    threshold: float | None = None,
    top_k: int | None = None,
) -> Graph:
    """Connect i != j when s(i, j) > threshold, or by mutual-union top-k.

    Exactly one of ``threshold`` / ``top_k`` must be given. Top-k ties are
    broken toward the lower node index.
    """
    if (threshold is None) == (top_k is None):
        raise ConfigError("give exactly one of threshold or top_k")
    n = sim.n
    if n < 1:
        raise DataError("graph needs at least one node")
    pairs = []
    if threshold is not None:
        for start in range(0, n, _BLOCK_ROWS):
            stop = min(start + _BLOCK_ROWS, n)
            block = sim.rows(start, stop)
            r, c = np.nonzero(block > threshold)
            r = r + start
            keep = r < c
            pairs.append(np.stack([r[keep], c[keep]], axis=1))
    else:
        if not 1 <= top_k < n:
            raise ConfigError(f"top_k must be in [1, {n - 1}], got {top_k}")
        for start in range(0, n, _BLOCK_ROWS):
            stop = min(start + _BLOCK_ROWS, n)
            block = np.array(sim.rows(start, stop), dtype=np.float64)
            block[np.arange(stop - start), np.arange(start, stop)] = -np.inf
            # stable sort on the negated rows keeps lower indices first among ties
            nn = np.argsort(-block, axis=1, kind="stable")[:, :top_k]
            r = np.repeat(np.arange(start, stop), top_k)
            c = nn.ravel()
            pairs.append(np.stack([np.minimum(r, c), np.maximum(r, c)], axis=1))
    edges = np.concatenate(pairs) if pairs else np.empty((0, 2), dtype=np.int64)
    edges = np.unique(edges, axis=0) if len(edges) else edges.reshape(0, 2)
    return Graph(n, edges)


def normalized_adjacency(graph: Graph) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 with D the degree of A + I."""
    a = graph.adjacency
    inv_sqrt = 1.0 / np.sqrt(np.asarray(a.sum(axis=1)).ravel())
    d = sp.diags(inv_sqrt)
    out = (d @ a @ d).tocsr()
    out.sort_indices()
    return out


def write_graph(graph: Graph, path: str | os.PathLike) -> None:
    lines = [f"n {graph.n}"]
    lines.extend(f"{i} {j}" for i, j in graph.edges)
    _atomic_write_text(path, lines)


def read_graph(path: str | os.PathLike) -> Graph:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "n":
            raise MalformedHeaderError(f"{path}: expected header 'n <count>'")
        try:
            n = int(header[1])
        except ValueError:
            raise MalformedHeaderError(f"{path}: bad node count {header[1]!r}") from None
        edges = []
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise MalformedLineError(f"{path}:{lineno}: expected 'i j'")
            i, j = int(parts[0]), int(parts[1])
            if i == j:
                continue
            edges.append((min(i, j), max(i, j)))
    return Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))

