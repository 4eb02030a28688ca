"""The backend network: [GNN layer -> batch norm] x depth -> linear (g-vectors) -> classifier."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError, DimensionMismatchError, DivergenceError
from ..graph import Graph
from ..io import _atomic_write
from .layers import ATTENTION_VARIANTS, VARIANTS, Layer, linear_init, make_layer
from .ops import GraphOps

CHECKPOINT_MAGIC = b"GNNM"
CHECKPOINT_VERSION = 1


@dataclass
class GnnConfig:
    variant: str = "GAT"
    in_dim: int = 250
    n_classes: int = 2
    hidden_dim: int = 256
    gvec_dim: int = 250
    depth: int = 2
    heads: int = 4
    hops: int = 3
    activation: str | None = None
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    epochs: int = 600
    lr: float = 1e-4
    weight_decay: float = 5e-4
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown GNN variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("in_dim", "n_classes", "hidden_dim", "gvec_dim", "depth", "heads", "hops"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, d: dict) -> GnnConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, dim: int, dtype, momentum: float = 0.1, eps: float = 1e-5) -> BatchNormState:
        return cls(
            np.ones(dim, dtype=dtype),
            np.zeros(dim, dtype=dtype),
            np.zeros(dim, dtype=dtype),
            np.ones(dim, dtype=dtype),
            momentum,
            eps,
        )


def batch_norm(state: BatchNormState, X: np.ndarray, mode: str = "train", update_stats: bool = True):
    """Normalize features over all nodes. Returns (Y, cache)."""
    if X.shape[0] == 0:
        raise DataError("batch norm on empty input")
    if mode == "train":
        mu = X.mean(axis=0)
        var = X.var(axis=0)
        if update_stats:
            n = X.shape[0]
            unbiased = var * (n / (n - 1)) if n > 1 else var
            m = state.momentum
            state.running_mean[...] = (1 - m) * state.running_mean + m * mu
            state.running_var[...] = (1 - m) * state.running_var + m * unbiased
    elif mode == "eval":
        mu, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (X - mu) * inv_std
    return state.gamma * xhat + state.beta, (xhat, inv_std, mode)


def batch_norm_backward(state: BatchNormState, dY: np.ndarray, cache):
    xhat, inv_std, mode = cache
    dgamma = (dY * xhat).sum(axis=0)
    dbeta = dY.sum(axis=0)
    dxhat = dY * state.gamma
    if mode == "eval":
        return dxhat * inv_std, dgamma, dbeta
    n = dY.shape[0]
    dX = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dX, dgamma, dbeta


def log_softmax(logits: np.ndarray) -> np.ndarray:
    mx = logits.max(axis=1, keepdims=True)
    shifted = logits - mx
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def masked_cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over masked nodes, and its gradient wrt logits.

    ``mask`` may be boolean or nonnegative weights; each node contributes
    ``weight * CE`` and the sum is divided by the number of nonzero-weight
    nodes. Labels of unmasked nodes are ignored.
    """
    mask = np.asarray(mask)
    weights = mask.astype(logits.dtype)
    if np.any(weights < 0):
        raise DataError("mask weights must be nonnegative")
    sel = np.flatnonzero(weights > 0)
    if sel.size == 0:
        raise DataError("cross-entropy mask selects no nodes")
    labels = np.asarray(labels)
    y = labels[sel]
    n_classes = logits.shape[1]
    if np.any(y < 0) or np.any(y >= n_classes):
        raise DataError(f"label index out of range [0, {n_classes})")
    logp = log_softmax(logits[sel])
    w = weights[sel]
    loss = float(-(w * logp[np.arange(sel.size), y]).sum() / sel.size)
    grad = np.zeros_like(logits)
    g = np.exp(logp)
    g[np.arange(sel.size), y] -= 1.0
    grad[sel] = g * (w / sel.size)[:, None]
    return loss, grad


class GnnModel:
    """Parameters and state of the full backend network."""

    def __init__(self, config: GnnConfig):
        self.config = config
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed)
        c = config
        self.layers: list[Layer] = []
        self.bns: list[BatchNormState] = []
        dim = c.in_dim
        for k in range(c.depth):
            last = k == c.depth - 1
            kwargs = dict(dtype=dtype, activation=c.activation, heads=c.heads, hops=c.hops)
            if c.variant in ATTENTION_VARIANTS:
                kwargs["concat"] = not last
            self.layers.append(make_layer(c.variant, dim, c.hidden_dim, rng, **kwargs))
            self.bns.append(BatchNormState.create(c.hidden_dim, dtype, c.bn_momentum, c.bn_eps))
            dim = c.hidden_dim
        # small dense-layer init keeps the initial logits near uniform
        self.head_w, self.head_b = linear_init(rng, c.hidden_dim, c.gvec_dim, dtype)
        self.cls_w, self.cls_b = linear_init(rng, c.gvec_dim, c.n_classes, dtype)

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays in declaration order (views, safe to update in place)."""
        out: dict[str, np.ndarray] = {}
        for k, (layer, bn) in enumerate(zip(self.layers, self.bns)):
            for name, arr in layer.params.items():
                out[f"layers.{k}.{name}"] = arr
            out[f"bn.{k}.gamma"] = bn.gamma
            out[f"bn.{k}.beta"] = bn.beta
        out["head.weight"] = self.head_w
        out["head.bias"] = self.head_b
        out["classifier.weight"] = self.cls_w
        out["classifier.bias"] = self.cls_b
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for k, bn in enumerate(self.bns):
            out[f"bn.{k}.running_mean"] = bn.running_mean
            out[f"bn.{k}.running_var"] = bn.running_var
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def ops(self, graph: Graph) -> GraphOps:
        return GraphOps(graph, self.dtype)

    def forward(self, ops: GraphOps, X: np.ndarray, mode: str = "eval", update_stats: bool = True):
        """Returns (logits, g_vectors, cache)."""
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != self.config.in_dim:
            raise DimensionMismatchError(f"expected node features with {self.config.in_dim} columns, got {X.shape}")
        if X.shape[0] != ops.n:
            raise DimensionMismatchError(f"{X.shape[0]} feature rows for a {ops.n}-node graph")
        H = X.astype(self.dtype, copy=False)
        caches = []
        for layer, bn in zip(self.layers, self.bns):
            H, lc = layer.forward(ops, H)
            H, bc = batch_norm(bn, H, mode, update_stats)
            caches.append((lc, bc))
        gvec = H @ self.head_w + self.head_b
        logits = gvec @ self.cls_w + self.cls_b
        return logits, gvec, (caches, H, gvec)

    def backward(self, ops: GraphOps, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        caches, H, gvec = cache
        grads: dict[str, np.ndarray] = {
            "classifier.weight": gvec.T @ dlogits,
            "classifier.bias": dlogits.sum(axis=0),
        }
        dg = dlogits @ self.cls_w.T
        grads["head.weight"] = H.T @ dg
        grads["head.bias"] = dg.sum(axis=0)
        dH = dg @ self.head_w.T
        for k in range(len(self.layers) - 1, -1, -1):
            lc, bc = caches[k]
            dH, dgamma, dbeta = batch_norm_backward(self.bns[k], dH, bc)
            grads[f"bn.{k}.gamma"] = dgamma
            grads[f"bn.{k}.beta"] = dbeta
            dH, lg = self.layers[k].backward(ops, dH, lc)
            for name, g in lg.items():
                grads[f"layers.{k}.{name}"] = g
        return {name: grads[name] for name in self.parameters()}

    def loss_and_grads(self, ops: GraphOps, X, labels, mask, update_stats: bool = True):
        logits, _, cache = self.forward(ops, X, "train", update_stats)
        loss, dlogits = masked_cross_entropy(logits, labels, mask)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss}")
        grads = self.backward(ops, cache, dlogits)
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for {name}")
        return loss, grads

    def astype(self, dtype: str) -> GnnModel:
        """Copy of the model with every array cast to ``dtype``."""
        cfg = GnnConfig(**{**asdict(self.config), "dtype": dtype})
        other = GnnModel(cfg)
        src = self.state_arrays()
        for name, arr in other.state_arrays().items():
            arr[...] = src[name]
        return other

    def fingerprint(self) -> str:
        return hashlib.sha256(checkpoint_bytes(self)).hexdigest()


def forward(model: GnnModel, graph: Graph, X: np.ndarray, mode: str = "eval"):
    """(logits, g_vectors) for every node."""
    logits, gvec, _ = model.forward(model.ops(graph), X, mode)
    return logits, gvec


def backward(model: GnnModel, graph: Graph, X, labels, mask, update_stats: bool = False):
    """(loss, gradients) of the masked cross-entropy in train mode."""
    return model.loss_and_grads(model.ops(graph), X, labels, mask, update_stats)


# -- checkpoint --------------------------------------------------------------
# b"GNNM" | version u32 | config_len u32 | config JSON (utf-8, sorted keys)
# | n_arrays u32 | per array: name_len u16, name, ndim u8, shape u32 x ndim, f32 data


def checkpoint_bytes(model: GnnModel) -> bytes:
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    arrays = model.state_arrays()
    parts = [struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(cfg)), cfg, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: GnnModel, path: str | os.PathLike) -> None:
    _atomic_write(path, checkpoint_bytes(model))


def load_checkpoint(path: str | os.PathLike) -> GnnModel:
    buf = Path(path).read_bytes()
    try:
        magic, version, cfg_len = struct.unpack_from("<4sII", buf, 0)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a GNN checkpoint (magic {magic!r})")
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        cfg = GnnConfig.from_dict(json.loads(buf[off : off + cfg_len].decode("utf-8")))
        off += cfg_len
        model = GnnModel(cfg)
        expected = model.state_arrays()
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        if count != len(expected):
            raise DataError(f"{path}: {count} arrays, expected {len(expected)}")
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            if name not in expected or expected[name].shape != tuple(shape):
                raise DataError(f"{path}: unexpected array {name} {shape}")
            size = int(np.prod(shape))
            expected[name][...] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from None
    if off != len(buf):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return model
