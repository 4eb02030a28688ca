"""Centering, length normalization, LDA and simplified Gaussian PLDA."""

from __future__ import annotations

import os
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import DataError, DimensionMismatchError, ZeroNormError
from .io import EmbeddingSet, _atomic_write

LDA_MAGIC = b"GLDA"
PLDA_MAGIC = b"GPLD"
MEAN_MAGIC = b"GMEN"
_CONTAINER_VERSION = 1


def length_norm(X: np.ndarray, mean: np.ndarray | None = None) -> np.ndarray:
    """Subtract ``mean`` (default: the row mean of ``X``) and scale rows to unit norm."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("length_norm needs a non-empty 2-D array")
    if mean is None:
        mean = X.mean(axis=0)
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (X.shape[1],):
        raise DimensionMismatchError(f"mean has shape {mean.shape}, data dim is {X.shape[1]}")
    centered = X - mean
    norms = np.linalg.norm(centered, axis=1)
    bad = np.flatnonzero(norms <= np.finfo(np.float64).tiny)
    if bad.size:
        raise ZeroNormError(f"row {bad[0]} has zero norm after centering")
    return centered / norms[:, None]


def center_length_norm(emb: EmbeddingSet, mean: np.ndarray | None = None) -> EmbeddingSet:
    return emb.with_vectors(length_norm(emb.vectors, mean))


def _encode_labels(labels: Sequence) -> tuple[np.ndarray, int]:
    _, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.ravel(), int(inv.max()) + 1 if len(inv) else 0


def scatter_matrices(X: np.ndarray, labels: Sequence) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Global mean, between-class and within-class scatter (both divided by N)."""
    X = np.asarray(X, dtype=np.float64)
    y, n_classes = _encode_labels(labels)
    mean = X.mean(axis=0)
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    sums = np.zeros((n_classes, X.shape[1]))
    np.add.at(sums, y, X)
    class_means = sums / counts[:, None]
    dm = class_means - mean
    s_b = (dm * counts[:, None]).T @ dm / len(X)
    resid = X - class_means[y]
    s_w = resid.T @ resid / len(X)
    return mean, s_b, s_w


@dataclass(frozen=True)
class LdaTransform:
    mean: np.ndarray
    projection: np.ndarray

    def __post_init__(self) -> None:
        if self.projection.ndim != 2 or self.mean.shape != (self.projection.shape[0],):
            raise DimensionMismatchError("LDA mean/projection shapes disagree")
        if self.dim_out > self.dim_in:
            raise DimensionMismatchError("LDA output dim exceeds input dim")

    @property
    def dim_in(self) -> int:
        return self.projection.shape[0]

    @property
    def dim_out(self) -> int:
        return self.projection.shape[1]

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim_in:
            raise DimensionMismatchError(f"input dim {X.shape[-1]} != LDA dim_in {self.dim_in}")
        return (X - self.mean) @ self.projection


def fit_lda(X: np.ndarray, labels: Sequence, dim_out: int) -> LdaTransform:
    """Top ``dim_out`` generalized eigenvectors of (S_b, S_w + eps*I).

    Columns are scaled so that the projected within-class scatter is the
    identity, and their sign is fixed so the first nonzero entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    y, n_classes = _encode_labels(labels)
    if len(y) != len(X):
        raise DimensionMismatchError("labels and data differ in length")
    if n_classes < 2:
        raise DataError("LDA needs at least 2 classes")
    if np.bincount(y).min() < 2:
        raise DataError("LDA needs at least 2 samples per class")
    dim_in = X.shape[1]
    if not 1 <= dim_out <= min(n_classes - 1, dim_in):
        raise DataError(
            f"dim_out={dim_out} outside [1, min(classes-1={n_classes - 1}, dim_in={dim_in})]"
        )
    mean, s_b, s_w = scatter_matrices(X, y)
    eps = 1e-6 * np.trace(s_w) / dim_in
    if eps <= 0:
        eps = 1e-12
    evals, evecs = scipy.linalg.eigh(s_b, s_w + eps * np.eye(dim_in))
    order = np.argsort(evals, kind="stable")[::-1][:dim_out]
    proj = evecs[:, order]
    for k in range(dim_out):
        col = proj[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if col[nz[0]] < 0:
            proj[:, k] = -col
    return LdaTransform(mean, np.ascontiguousarray(proj))


def apply_lda(transform: LdaTransform, emb: EmbeddingSet) -> EmbeddingSet:
    return emb.with_vectors(transform.transform(emb.vectors))


def _gauss_logpdf_rows(Z: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """log N(z; 0, C) per row given lower Cholesky factor of C."""
    d = Z.shape[1]
    sol = scipy.linalg.solve_triangular(chol, Z.T, lower=True)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (np.einsum("ij,ij->j", sol, sol) + logdet + d * np.log(2 * np.pi))


@dataclass
class PldaModel:
    """x = mean + V h + e, h ~ N(0, I_q), e ~ N(0, noise_covariance)."""

    mean: np.ndarray
    speaker_subspace: np.ndarray
    noise_covariance: np.ndarray
    loglik_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        d = self.mean.shape[0]
        if self.speaker_subspace.shape[0] != d or self.noise_covariance.shape != (d, d):
            raise DimensionMismatchError("PLDA parameter shapes disagree")
        if self.q > d:
            raise DataError(f"latent dim q={self.q} exceeds data dim {d}")
        self._scorer: tuple | None = None

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def q(self) -> int:
        return self.speaker_subspace.shape[1]

    @property
    def between_covariance(self) -> np.ndarray:
        V = self.speaker_subspace
        return V @ V.T

    def _llr_terms(self) -> tuple[np.ndarray, np.ndarray, float]:
        # Same-speaker joint covariance [[T, B], [B, T]] with T = B + W; its
        # inverse is [[Qa, P], [P, Qa]], Qa = (T - B T^-1 B)^-1, P = -T^-1 B Qa.
        if self._scorer is None:
            B = self.between_covariance
            T = B + self.noise_covariance
            t_inv = np.linalg.inv(T)
            schur = T - B @ t_inv @ B
            qa = np.linalg.inv(schur)
            P = -t_inv @ B @ qa
            Q = qa - t_inv
            _, ld_t = np.linalg.slogdet(T)
            _, ld_s = np.linalg.slogdet(schur)
            const = -0.5 * (ld_s - ld_t)
            self._scorer = (0.5 * (Q + Q.T), 0.5 * (P + P.T), float(const))
        return self._scorer

    def llr_matrix(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Pairwise log-likelihood ratios between rows of ``X`` and rows of ``Y``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        if X.shape[1] != self.dim or Y.shape[1] != self.dim:
            raise DimensionMismatchError(f"PLDA dim is {self.dim}, got {X.shape[1]} and {Y.shape[1]}")
        Q, P, const = self._llr_terms()
        xc, yc = X - self.mean, Y - self.mean
        qx = np.einsum("ij,jk,ik->i", xc, Q, xc)
        qy = np.einsum("ij,jk,ik->i", yc, Q, yc)
        return -0.5 * (qx[:, None] + qy[None, :] + 2.0 * (xc @ P) @ yc.T) + const

    def log_likelihood(self, X: np.ndarray, labels: Sequence) -> float:
        return plda_log_likelihood(self, X, labels)


def plda_llr(model: PldaModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(model.llr_matrix(x, y)[0, 0])


def _class_stats(X: np.ndarray, labels: Sequence) -> tuple[np.ndarray, np.ndarray]:
    y, n_classes = _encode_labels(labels)
    counts = np.bincount(y, minlength=n_classes)
    sums = np.zeros((n_classes, X.shape[1]))
    np.add.at(sums, y, X)
    return counts, sums


def plda_log_likelihood(model: PldaModel, X: np.ndarray, labels: Sequence) -> float:
    """Exact marginal log-likelihood of labelled data (speaker factors integrated out)."""
    X = np.asarray(X, dtype=np.float64) - model.mean
    counts, F = _class_stats(X, labels)
    V, W = model.speaker_subspace, model.noise_covariance
    chol = np.linalg.cholesky(W)
    total = float(_gauss_logpdf_rows(X, chol).sum())
    w_inv_v = scipy.linalg.cho_solve((chol, True), V)
    vwv = V.T @ w_inv_v
    b = F @ w_inv_v  # rows are V^T W^-1 F_s
    eye = np.eye(model.q)
    for n in np.unique(counts):
        sel = counts == n
        L = eye + n * vwv
        cl = np.linalg.cholesky(L)
        sol = scipy.linalg.solve_triangular(cl, b[sel].T, lower=True)
        total += 0.5 * float(np.sum(sol * sol)) - sel.sum() * float(np.log(np.diag(cl)).sum())
    return total


def fit_plda(
    X: np.ndarray,
    labels: Sequence,
    q: int,
    n_iters: int = 20,
    minimum_divergence: bool = True,
) -> PldaModel:
    """EM for the simplified PLDA model.

    Initialization is deterministic: Σ is half the total covariance and V
    carries the other half of the variance along the top-``q`` principal
    directions. The mean stays at the data mean. With
    ``minimum_divergence`` each iteration also re-estimates the prior of the
    speaker factor (parameter-expanded EM), which keeps the likelihood
    monotone and converges much faster along V.
    """
    X = np.asarray(X, dtype=np.float64)
    y, n_classes = _encode_labels(labels)
    if n_classes < 2:
        raise DataError("PLDA needs at least 2 classes")
    N, d = X.shape
    if not 1 <= q <= d:
        raise DataError(f"q={q} must be in [1, {d}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    S = Xc.T @ Xc
    total_cov = S / N
    evals, evecs = np.linalg.eigh(total_cov)
    order = np.argsort(evals, kind="stable")[::-1][:q]
    lam = np.clip(evals[order], 0.0, None)
    V = evecs[:, order] * np.sqrt(0.5 * lam)
    for k in range(q):
        col = V[:, k]
        nz = np.flatnonzero(np.abs(col) > 0)
        if nz.size and col[nz[0]] < 0:
            V[:, k] = -col
    W = _ensure_spd(0.5 * total_cov, total_cov)

    counts, F = _class_stats(Xc, y)
    model = PldaModel(mean, V, W)
    history = [plda_log_likelihood(model, X, y)]
    eye = np.eye(q)
    for _ in range(n_iters):
        w_inv_v = np.linalg.solve(W, V)
        vwv = V.T @ w_inv_v
        b = F @ w_inv_v
        H = np.empty((n_classes, q))
        R = np.zeros((q, q))
        sum_cov = np.zeros((q, q))
        for n in np.unique(counts):
            sel = counts == n
            cov = np.linalg.inv(eye + n * vwv)
            cov = 0.5 * (cov + cov.T)
            h = b[sel] @ cov
            H[sel] = h
            R += n * (sel.sum() * cov + h.T @ h)
            sum_cov += sel.sum() * cov
        T = H.T @ F  # q x d, sum_s h_s F_s^T
        V = np.linalg.solve(R, T).T
        W = (S - V @ T) / N
        W = _ensure_spd(0.5 * (W + W.T), total_cov)
        if minimum_divergence:
            # prior covariance of h re-estimated, then folded back into V
            prior = (H.T @ H + sum_cov) / n_classes
            V = V @ np.linalg.cholesky(0.5 * (prior + prior.T))
        model = PldaModel(mean, V, W)
        history.append(plda_log_likelihood(model, X, y))
    model.loglik_history = history
    return model


def _ensure_spd(W: np.ndarray, reference: np.ndarray) -> np.ndarray:
    try:
        np.linalg.cholesky(W)
        return W
    except np.linalg.LinAlgError:
        pass
    d = W.shape[0]
    eps = 1e-6 * max(np.trace(reference) / d, 1e-12)
    W = W + eps * np.eye(d)
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise DataError("PLDA noise covariance is singular after regularization") from None
    return W


# -- persistence -------------------------------------------------------------


def _pack_arrays(magic: bytes, arrays: Sequence[np.ndarray]) -> bytes:
    parts = [struct.pack("<4sII", magic, _CONTAINER_VERSION, len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


def _unpack_arrays(buf: bytes, magic: bytes, path) -> list[np.ndarray]:
    if len(buf) < 12:
        raise DataError(f"{path}: truncated model file")
    got, version, count = struct.unpack_from("<4sII", buf, 0)
    if got != magic:
        raise DataError(f"{path}: expected magic {magic!r}, got {got!r}")
    if version != _CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    off = 12
    out = []
    try:
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            out.append(np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64))
            off += 8 * size
    except (struct.error, ValueError):
        raise DataError(f"{path}: truncated model file") from None
    if off != len(buf):
        raise DataError(f"{path}: trailing bytes in model file")
    return out


def save_lda(t: LdaTransform, path: str | os.PathLike) -> None:
    _atomic_write(path, _pack_arrays(LDA_MAGIC, [t.mean, t.projection]))


def load_lda(path: str | os.PathLike) -> LdaTransform:
    mean, proj = _unpack_arrays(Path(path).read_bytes(), LDA_MAGIC, path)
    return LdaTransform(mean, proj)


def save_plda(m: PldaModel, path: str | os.PathLike) -> None:
    _atomic_write(path, _pack_arrays(PLDA_MAGIC, [m.mean, m.speaker_subspace, m.noise_covariance]))


def load_plda(path: str | os.PathLike) -> PldaModel:
    mean, V, W = _unpack_arrays(Path(path).read_bytes(), PLDA_MAGIC, path)
    return PldaModel(mean, V, W)


def save_mean(mean: np.ndarray, path: str | os.PathLike) -> None:
    _atomic_write(path, _pack_arrays(MEAN_MAGIC, [mean]))


def load_mean(path: str | os.PathLike) -> np.ndarray:
    (mean,) = _unpack_arrays(Path(path).read_bytes(), MEAN_MAGIC, path)
    return mean
