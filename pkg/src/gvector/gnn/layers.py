"""Message-passing layers with explicit forward and backward passes.

Every layer maps node features ``X`` (n x in_dim) to ``Y`` (n x out_dim)
over a :class:`GraphOps`. ``forward`` returns ``(Y, cache)`` and
``backward(ops, dY, cache)`` returns ``(dX, grads)`` where ``grads`` is
keyed like ``params``. Neighbourhoods always contain the node itself
(self-loops are part of every graph).
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, DimensionMismatchError
from .ops import GraphOps

VARIANTS = ("GCN", "GAT", "GATv2", "SAGE_mean", "GraphTF", "TAGCN")
ATTENTION_VARIANTS = ("GAT", "GATv2", "GraphTF")
LEAKY_SLOPE = 0.2

DEFAULT_ACTIVATION = {
    "GCN": "relu",
    "SAGE_mean": "relu",
    "TAGCN": "relu",
    "GAT": "identity",
    "GATv2": "identity",
    "GraphTF": "identity",
}


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int, dtype) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


def linear_init(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Dense layer init U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias."""
    s = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-s, s, size=(fan_in, fan_out)).astype(dtype)
    return w, rng.uniform(-s, s, size=fan_out).astype(dtype)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0)
    return z


def _act_grad(dy: np.ndarray, z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return dy * (z > 0)
    return dy


def _leaky(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _leaky_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, LEAKY_SLOPE).astype(z.dtype)


class Layer:
    variant = ""

    def __init__(self, in_dim: int, out_dim: int, activation: str | None = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation or DEFAULT_ACTIVATION[self.variant]
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        self.params: dict[str, np.ndarray] = {}

    def _check(self, ops: GraphOps, X: np.ndarray) -> None:
        if X.shape != (ops.n, self.in_dim):
            raise DimensionMismatchError(
                f"{self.variant}: expected input ({ops.n}, {self.in_dim}), got {X.shape}"
            )

    def forward(self, ops: GraphOps, X: np.ndarray):
        raise NotImplementedError

    def backward(self, ops: GraphOps, dY: np.ndarray, cache):
        raise NotImplementedError


class GCNLayer(Layer):
    """Y = act(N X Theta) with N the symmetric-normalized adjacency."""

    variant = "GCN"

    def __init__(self, in_dim, out_dim, rng, dtype=np.float64, activation=None, **_):
        super().__init__(in_dim, out_dim, activation)
        self.params["theta"] = glorot(rng, (in_dim, out_dim), in_dim, out_dim, dtype)

    def forward(self, ops, X):
        self._check(ops, X)
        NX = ops.norm_adj @ X
        Z = NX @ self.params["theta"]
        return _act(Z, self.activation), (NX, Z)

    def backward(self, ops, dY, cache):
        NX, Z = cache
        dZ = _act_grad(dY, Z, self.activation)
        grads = {"theta": NX.T @ dZ}
        dX = ops.norm_adj.T @ (dZ @ self.params["theta"].T)
        return dX, grads


class TAGCNLayer(Layer):
    """Y = act(sum_{p=1..P} N^p X Theta_p)."""

    variant = "TAGCN"

    def __init__(self, in_dim, out_dim, rng, dtype=np.float64, activation=None, hops=3, **_):
        super().__init__(in_dim, out_dim, activation)
        if hops < 1:
            raise ConfigError("TAGCN needs hops >= 1")
        self.hops = hops
        for p in range(1, hops + 1):
            self.params[f"theta_{p}"] = glorot(rng, (in_dim, out_dim), in_dim, out_dim, dtype)

    def forward(self, ops, X):
        self._check(ops, X)
        powers = []
        cur = X
        for _ in range(self.hops):
            cur = ops.norm_adj @ cur
            powers.append(cur)
        Z = powers[0] @ self.params["theta_1"]
        for p in range(2, self.hops + 1):
            Z = Z + powers[p - 1] @ self.params[f"theta_{p}"]
        return _act(Z, self.activation), (powers, Z)

    def backward(self, ops, dY, cache):
        powers, Z = cache
        dZ = _act_grad(dY, Z, self.activation)
        grads = {}
        carry = None
        for p in range(self.hops, 0, -1):
            theta = self.params[f"theta_{p}"]
            grads[f"theta_{p}"] = powers[p - 1].T @ dZ
            g = dZ @ theta.T
            carry = g if carry is None else g + carry
            carry = ops.norm_adj.T @ carry
        return carry, {k: grads[k] for k in self.params}


class SAGEMeanLayer(Layer):
    """Y = act([X, mean-aggregate(X)] W); the mean runs over N(i) including i."""

    variant = "SAGE_mean"

    def __init__(self, in_dim, out_dim, rng, dtype=np.float64, activation=None, **_):
        super().__init__(in_dim, out_dim, activation)
        self.params["weight"] = glorot(rng, (2 * in_dim, out_dim), 2 * in_dim, out_dim, dtype)

    def forward(self, ops, X):
        self._check(ops, X)
        C = np.concatenate([X, ops.mean_adj @ X], axis=1)
        Z = C @ self.params["weight"]
        return _act(Z, self.activation), (C, Z)

    def backward(self, ops, dY, cache):
        C, Z = cache
        dZ = _act_grad(dY, Z, self.activation)
        grads = {"weight": C.T @ dZ}
        dC = dZ @ self.params["weight"].T
        dX = dC[:, : self.in_dim] + ops.mean_adj_t @ dC[:, self.in_dim :]
        return dX, grads


class _AttentionLayer(Layer):
    """Shared head bookkeeping: concat heads of size out/heads, or average full-size heads."""

    def __init__(self, in_dim, out_dim, activation, heads, concat):
        super().__init__(in_dim, out_dim, activation)
        if heads < 1:
            raise ConfigError("heads must be >= 1")
        if concat and out_dim % heads:
            raise ConfigError(f"out_dim {out_dim} not divisible by heads {heads}")
        self.heads = heads
        self.concat = concat
        self.head_dim = out_dim // heads if concat else out_dim

    def _merge(self, out: np.ndarray) -> np.ndarray:
        n = out.shape[0]
        return out.reshape(n, -1) if self.concat else out.mean(axis=1)

    def _split_grad(self, dZ: np.ndarray) -> np.ndarray:
        n = dZ.shape[0]
        if self.concat:
            return dZ.reshape(n, self.heads, self.head_dim)
        return np.broadcast_to(dZ[:, None, :] / self.heads, (n, self.heads, self.head_dim))

    def attention(self, ops: GraphOps, X: np.ndarray) -> np.ndarray:
        """Per-edge coefficients, shape (n_edges, heads), edges in ``ops`` order."""
        return self.forward(ops, X)[1]["alpha"]


class GATLayer(_AttentionLayer):
    """alpha_ij = softmax_j LeakyReLU(a_dst . Theta x_i + a_src . Theta x_j)."""

    variant = "GAT"

    def __init__(self, in_dim, out_dim, rng, dtype=np.float64, activation=None, heads=4, concat=True, **_):
        super().__init__(in_dim, out_dim, activation, heads, concat)
        h, d = heads, self.head_dim
        self.params["theta"] = glorot(rng, (in_dim, h * d), in_dim, d, dtype)
        self.params["att_src"] = glorot(rng, (h, d), d, 1, dtype)
        self.params["att_dst"] = glorot(rng, (h, d), d, 1, dtype)

    def forward(self, ops, X):
        self._check(ops, X)
        n, h, d = ops.n, self.heads, self.head_dim
        H = (X @ self.params["theta"]).reshape(n, h, d)
        e_src = np.einsum("nhd,hd->nh", H, self.params["att_src"])
        e_dst = np.einsum("nhd,hd->nh", H, self.params["att_dst"])
        pre = e_dst[ops.dst] + e_src[ops.src]
        alpha = ops.segment_softmax(_leaky(pre))
        out = np.stack([ops.aggregate(alpha[:, k], H[:, k]) for k in range(h)], axis=1)
        Z = self._merge(out)
        return _act(Z, self.activation), {"X": X, "H": H, "pre": pre, "alpha": alpha, "Z": Z}

    def backward(self, ops, dY, cache):
        X, H, pre, alpha, Z = cache["X"], cache["H"], cache["pre"], cache["alpha"], cache["Z"]
        n, h, d = ops.n, self.heads, self.head_dim
        dout = self._split_grad(_act_grad(dY, Z, self.activation))
        dH = np.empty_like(H)
        dalpha = np.empty_like(alpha)
        for k in range(h):
            dH[:, k] = ops.aggregate_t(alpha[:, k], dout[:, k])
            dalpha[:, k] = ops.edge_dot(np.ascontiguousarray(dout[:, k]), H[:, k])
        dpre = ops.segment_softmax_backward(alpha, dalpha) * _leaky_grad(pre)
        de_dst = ops.segment_sum(dpre)
        de_src = ops.scatter_src(dpre)
        dH += de_dst[:, :, None] * self.params["att_dst"][None] + de_src[:, :, None] * self.params["att_src"][None]
        grads = {
            "theta": X.T @ dH.reshape(n, h * d),
            "att_src": np.einsum("nh,nhd->hd", de_src, H),
            "att_dst": np.einsum("nh,nhd->hd", de_dst, H),
        }
        dX = dH.reshape(n, h * d) @ self.params["theta"].T
        return dX, grads


class GATv2Layer(_AttentionLayer):
    """alpha_ij = softmax_j a . LeakyReLU(Theta_dst x_i + Theta_src x_j); messages Theta_src x_j."""

    variant = "GATv2"

    def __init__(self, in_dim, out_dim, rng, dtype=np.float64, activation=None, heads=4, concat=True, **_):
        super().__init__(in_dim, out_dim, activation, heads, concat)
        h, d = heads, self.head_dim
        self.params["theta_src"] = glorot(rng, (in_dim, h * d), in_dim, d, dtype)
        self.params["theta_dst"] = glorot(rng, (in_dim, h * d), in_dim, d, dtype)
        self.params["att"] = glorot(rng, (h, d), d, 1, dtype)

    def _edge_pre(self, ops, HL, HR, k):
        return HR[ops.dst, k] + HL[ops.src, k]

    def forward(self, ops, X):
        self._check(ops, X)
        n, h, d = ops.n, self.heads, self.head_dim
        HL = (X @ self.params["theta_src"]).reshape(n, h, d)
        HR = (X @ self.params["theta_dst"]).reshape(n, h, d)
        att = self.params["att"]
        scores = np.empty((ops.n_edges, h), dtype=HL.dtype)
        for k in range(h):
            scores[:, k] = _leaky(self._edge_pre(ops, HL, HR, k)) @ att[k]
        alpha = ops.segment_softmax(scores)
        out = np.stack([ops.aggregate(alpha[:, k], HL[:, k]) for k in range(h)], axis=1)
        Z = self._merge(out)
        return _act(Z, self.activation), {"X": X, "HL": HL, "HR": HR, "alpha": alpha, "Z": Z}

    def backward(self, ops, dY, cache):
        X, HL, HR, alpha, Z = cache["X"], cache["HL"], cache["HR"], cache["alpha"], cache["Z"]
        n, h, d = ops.n, self.heads, self.head_dim
        att = self.params["att"]
        dout = self._split_grad(_act_grad(dY, Z, self.activation))
        dHL = np.empty_like(HL)
        dHR = np.empty_like(HR)
        datt = np.empty_like(att)
        for k in range(h):
            dHL[:, k] = ops.aggregate_t(alpha[:, k], dout[:, k])
            dalpha = ops.edge_dot(np.ascontiguousarray(dout[:, k]), HL[:, k])
            dscore = ops.segment_softmax_backward(alpha[:, k], dalpha)
            pre = self._edge_pre(ops, HL, HR, k)
            datt[k] = _leaky(pre).T @ dscore
            dpre = (dscore[:, None] * att[k][None, :]) * _leaky_grad(pre)
            dHR[:, k] = ops.segment_sum(dpre)
            dHL[:, k] += ops.scatter_src(dpre)
        grads = {
            "theta_src": X.T @ dHL.reshape(n, h * d),
            "theta_dst": X.T @ dHR.reshape(n, h * d),
            "att": datt,
        }
        dX = dHL.reshape(n, h * d) @ self.params["theta_src"].T + dHR.reshape(n, h * d) @ self.params["theta_dst"].T
        return dX, grads


class GraphTFLayer(_AttentionLayer):
    """Y = X W_root + concat_h sum_j alpha^h_ij (X W_value)^h_j.

    alpha^h is a softmax over N(i) of scaled dot products between query and
    key projections. Heads are always concatenated.
    """

    variant = "GraphTF"

    def __init__(self, in_dim, out_dim, rng, dtype=np.float64, activation=None, heads=4, **_):
        super().__init__(in_dim, out_dim, activation, heads, concat=True)
        for name in ("w_root", "w_query", "w_key", "w_value"):
            self.params[name] = glorot(rng, (in_dim, out_dim), in_dim, out_dim, dtype)
        self.scale = 1.0 / math.sqrt(self.head_dim)

    def forward(self, ops, X):
        self._check(ops, X)
        n, h, d = ops.n, self.heads, self.head_dim
        Q = (X @ self.params["w_query"]).reshape(n, h, d)
        K = (X @ self.params["w_key"]).reshape(n, h, d)
        V = (X @ self.params["w_value"]).reshape(n, h, d)
        scores = np.stack(
            [ops.edge_dot(np.ascontiguousarray(Q[:, k]), K[:, k]) for k in range(h)], axis=1
        ) * self.scale
        alpha = ops.segment_softmax(scores)
        out = np.stack([ops.aggregate(alpha[:, k], V[:, k]) for k in range(h)], axis=1)
        Z = X @ self.params["w_root"] + out.reshape(n, h * d)
        return _act(Z, self.activation), {"X": X, "Q": Q, "K": K, "V": V, "alpha": alpha, "Z": Z}

    def backward(self, ops, dY, cache):
        X, Q, K, V, alpha, Z = (cache[k] for k in ("X", "Q", "K", "V", "alpha", "Z"))
        n, h, d = ops.n, self.heads, self.head_dim
        dZ = _act_grad(dY, Z, self.activation)
        dout = dZ.reshape(n, h, d)
        dQ, dK, dV = np.empty_like(Q), np.empty_like(K), np.empty_like(V)
        for k in range(h):
            dV[:, k] = ops.aggregate_t(alpha[:, k], dout[:, k])
            dalpha = ops.edge_dot(np.ascontiguousarray(dout[:, k]), V[:, k])
            dscore = ops.segment_softmax_backward(alpha[:, k], dalpha) * self.scale
            dQ[:, k] = ops.aggregate(dscore, K[:, k])
            dK[:, k] = ops.aggregate_t(dscore, Q[:, k])
        dQ, dK, dV = (a.reshape(n, h * d) for a in (dQ, dK, dV))
        grads = {
            "w_root": X.T @ dZ,
            "w_query": X.T @ dQ,
            "w_key": X.T @ dK,
            "w_value": X.T @ dV,
        }
        p = self.params
        dX = dZ @ p["w_root"].T + dQ @ p["w_query"].T + dK @ p["w_key"].T + dV @ p["w_value"].T
        return dX, grads


_LAYER_TYPES = {
    cls.variant: cls for cls in (GCNLayer, GATLayer, GATv2Layer, SAGEMeanLayer, GraphTFLayer, TAGCNLayer)
}


def make_layer(variant: str, in_dim: int, out_dim: int, rng: np.random.Generator, **kwargs) -> Layer:
    try:
        cls = _LAYER_TYPES[variant]
    except KeyError:
        raise ConfigError(f"unknown GNN variant {variant!r}; choose from {VARIANTS}") from None
    return cls(in_dim, out_dim, rng, **kwargs)


def attention_coeffs(layer: Layer, ops: GraphOps, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dst, src, alpha) for an attention layer; alpha has one column per head."""
    if not isinstance(layer, _AttentionLayer):
        raise ConfigError(f"{layer.variant} has no attention coefficients")
    return ops.dst, ops.src, layer.attention(ops, X)
