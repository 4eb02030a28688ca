"""Sparse graph primitives shared by the layers.

Edges (self-loops included) are stored in CSR order: grouped by the
receiving node ``dst`` and sorted by the sending node ``src`` inside each
group. Every group is non-empty because of the self-loop, which is what
lets segment reductions use ``np.*.reduceat`` directly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..graph import Graph, normalized_adjacency

_DENSE_SDDMM_LIMIT = 10_000_000
_CHUNK = 65536


class GraphOps:
    def __init__(self, graph: Graph, dtype=np.float64):
        self.graph = graph
        self.dtype = np.dtype(dtype)
        a = graph.adjacency
        self.n = graph.n
        self.indptr = a.indptr.astype(np.int64)
        self.src = a.indices.astype(np.int64)
        self.dst = np.repeat(np.arange(self.n), np.diff(self.indptr))
        self.starts = self.indptr[:-1]
        self.n_edges = len(self.src)
        eid = sp.csr_matrix((np.arange(1, self.n_edges + 1), self.src, self.indptr), shape=(self.n, self.n))
        t = eid.T.tocsr()
        t.sort_indices()
        self.rev = t.data.astype(np.int64) - 1
        self._flat = self.dst * self.n + self.src
        self.norm_adj = normalized_adjacency(graph).astype(self.dtype)
        deg = np.diff(self.indptr).astype(np.float64)
        self.mean_adj = self.csr(np.repeat(1.0 / deg, np.diff(self.indptr)).astype(self.dtype))
        self.mean_adj_t = self.mean_adj.T.tocsr()

    def csr(self, data: np.ndarray) -> sp.csr_matrix:
        """n x n matrix with ``data[e]`` at (dst[e], src[e])."""
        return sp.csr_matrix((data, self.src, self.indptr), shape=(self.n, self.n))

    def aggregate(self, weights: np.ndarray, H: np.ndarray) -> np.ndarray:
        """out[i] = sum_e weights[e] * H[src[e]] over edges into i."""
        return np.asarray(self.csr(weights) @ H)

    def aggregate_t(self, weights: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Adjoint of ``aggregate`` in H: out[j] = sum_e weights[e] * G[dst[e]] over edges out of j."""
        return np.asarray(self.csr(weights).T @ G)

    def segment_sum(self, v: np.ndarray) -> np.ndarray:
        """Sum per-edge values over edges into each node."""
        return np.add.reduceat(v, self.starts, axis=0)

    def scatter_src(self, v: np.ndarray) -> np.ndarray:
        """Sum per-edge values over edges out of each node."""
        return np.add.reduceat(v[self.rev], self.starts, axis=0)

    def segment_softmax(self, scores: np.ndarray) -> np.ndarray:
        mx = np.maximum.reduceat(scores, self.starts, axis=0)
        ex = np.exp(scores - mx[self.dst])
        return ex / self.segment_sum(ex)[self.dst]

    def segment_softmax_backward(self, alpha: np.ndarray, dalpha: np.ndarray) -> np.ndarray:
        inner = self.segment_sum(alpha * dalpha)
        return alpha * (dalpha - inner[self.dst])

    def edge_dot(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Per edge: A[dst[e]] . B[src[e]]."""
        if self.n * self.n <= _DENSE_SDDMM_LIMIT:
            return np.take((A @ B.T).ravel(), self._flat)
        out = np.empty(self.n_edges, dtype=np.result_type(A, B))
        for s in range(0, self.n_edges, _CHUNK):
            e = slice(s, s + _CHUNK)
            out[e] = np.einsum("ij,ij->i", A[self.dst[e]], B[self.src[e]])
        return out
