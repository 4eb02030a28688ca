"""Embedding, label, trial and score files.

Binary embedding layout (little-endian)::

    b"GVEC" | version u32 = 1 | count u32 | dim u32
    count x ( id_len u16 | id utf-8 bytes | dim x f32 )

Text embedding layout: one record per line, ``id v1 v2 ... vD``.
"""

from __future__ import annotations

import os
import struct
import tempfile
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptySetError,
    MalformedHeaderError,
    MalformedLineError,
    NonFiniteError,
)

MAGIC = b"GVEC"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

TARGET, NONTARGET, UNKNOWN = "target", "nontarget", "unknown"
_KEYS = (TARGET, NONTARGET)


@dataclass(frozen=True)
class EmbeddingSet:
    """Ordered, uniquely-identified rows of a real matrix."""

    ids: list[str]
    vectors: np.ndarray
    labels: dict[str, str] | None = None

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionMismatchError(f"vectors must be 2-D, got shape {vectors.shape}")
        if vectors.shape[0] == 0 or len(self.ids) == 0:
            raise EmptySetError("embedding set is empty")
        if vectors.shape[1] == 0:
            raise DimensionMismatchError("embedding dimension must be positive")
        if len(self.ids) != vectors.shape[0]:
            raise DimensionMismatchError(
                f"{len(self.ids)} ids but {vectors.shape[0]} vector rows"
            )
        if len(set(self.ids)) != len(self.ids):
            seen: set[str] = set()
            dup = next(i for i in self.ids if i in seen or seen.add(i))
            raise DuplicateIdError(f"duplicate id {dup!r}")
        if not np.all(np.isfinite(vectors)):
            row = int(np.argwhere(~np.isfinite(vectors))[0, 0])
            raise NonFiniteError(f"non-finite value in row {row} (id {self.ids[row]!r})")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "ids", list(self.ids))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def index(self) -> dict[str, int]:
        return {id_: i for i, id_ in enumerate(self.ids)}

    def with_vectors(self, vectors: np.ndarray) -> EmbeddingSet:
        return EmbeddingSet(self.ids, vectors, self.labels)

    def with_labels(self, labels: Mapping[str, str] | None) -> EmbeddingSet:
        return EmbeddingSet(self.ids, self.vectors, None if labels is None else dict(labels))

    def subset(self, ids: Sequence[str]) -> EmbeddingSet:
        idx = self.index()
        missing = [i for i in ids if i not in idx]
        if missing:
            raise DataError(f"ids not in set: {missing[:5]}")
        rows = [idx[i] for i in ids]
        labels = None
        if self.labels is not None:
            labels = {i: self.labels[i] for i in ids if i in self.labels}
        return EmbeddingSet(list(ids), self.vectors[rows], labels)

    def label_array(self) -> list[str]:
        if self.labels is None:
            raise DataError("embedding set has no labels")
        missing = [i for i in self.ids if i not in self.labels]
        if missing:
            raise DataError(f"{len(missing)} ids without label, e.g. {missing[0]!r}")
        return [self.labels[i] for i in self.ids]


def concat(sets: Iterable[EmbeddingSet]) -> EmbeddingSet:
    sets = list(sets)
    ids = [i for s in sets for i in s.ids]
    labels: dict[str, str] | None = None
    if any(s.labels for s in sets):
        labels = {}
        for s in sets:
            labels.update(s.labels or {})
    return EmbeddingSet(ids, np.vstack([s.vectors for s in sets]), labels)


def _atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: str | os.PathLike, lines: Iterable[str]) -> None:
    _atomic_write(path, "".join(line + "\n" for line in lines).encode("utf-8"))


def _detect_format(path: Path) -> str:
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == MAGIC else "text"


def read_embeddings(path: str | os.PathLike, format: str | None = None) -> EmbeddingSet:
    """Read an embedding file; ``format=None`` sniffs the magic bytes."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    format = format or _detect_format(path)
    if format == "binary":
        return _read_binary(path)
    if format == "text":
        return _read_text(path)
    raise ValueError(f"unknown embedding format {format!r}")


def _read_binary(path: Path) -> EmbeddingSet:
    buf = path.read_bytes()
    if len(buf) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file shorter than header")
    magic, version, count, dim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if count == 0:
        raise EmptySetError(f"{path}: embedding set is empty")
    if dim == 0:
        raise MalformedHeaderError(f"{path}: dim is zero")
    off = _HEADER.size
    ids: list[str] = []
    vectors = np.empty((count, dim), dtype="<f4")
    nbytes = 4 * dim
    for row in range(count):
        if off + 2 > len(buf):
            raise DimensionMismatchError(f"{path}: truncated at record {row}")
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        if off + n + nbytes > len(buf):
            raise DimensionMismatchError(f"{path}: truncated at record {row}")
        ids.append(buf[off : off + n].decode("utf-8"))
        off += n
        vectors[row] = np.frombuffer(buf, dtype="<f4", count=dim, offset=off)
        off += nbytes
    if off != len(buf):
        raise DimensionMismatchError(f"{path}: {len(buf) - off} trailing bytes after {count} records")
    return EmbeddingSet(ids, vectors.astype(np.float64))


def _read_text(path: Path) -> EmbeddingSet:
    ids: list[str] = []
    rows: list[list[float]] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise MalformedLineError(f"{path}:{lineno}: record has no values")
            if dim is None:
                dim = len(parts) - 1
            elif len(parts) - 1 != dim:
                raise DimensionMismatchError(
                    f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}"
                )
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise MalformedLineError(f"{path}:{lineno}: {exc}") from None
            ids.append(parts[0])
    if not ids:
        raise EmptySetError(f"{path}: embedding set is empty")
    try:
        return EmbeddingSet(ids, np.array(rows))
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def embeddings_to_bytes(emb: EmbeddingSet) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(emb), emb.dim)]
    payload = emb.vectors.astype("<f4")
    for id_, row in zip(emb.ids, payload):
        raw = id_.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"id too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(row.tobytes())
    return b"".join(parts)


def write_embeddings(emb: EmbeddingSet, path: str | os.PathLike, format: str = "binary") -> None:
    if format == "binary":
        _atomic_write(path, embeddings_to_bytes(emb))
    elif format == "text":
        _atomic_write_text(
            path,
            (id_ + " " + " ".join(format_float(v) for v in row) for id_, row in zip(emb.ids, emb.vectors)),
        )
    else:
        raise ValueError(f"unknown embedding format {format!r}")


def format_float(v: float) -> str:
    return format(float(v), ".9g")


def read_labels(path: str | os.PathLike) -> dict[str, str]:
    """Two-column ``id label`` file. Also used for enrollment maps (member id -> model id)."""
    labels: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise MalformedLineError(f"{path}:{lineno}: expected 'id label', got {len(parts)} fields")
            if parts[0] in labels:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate id {parts[0]!r}")
            labels[parts[0]] = parts[1]
    return labels


def write_labels(labels: Mapping[str, str], path: str | os.PathLike) -> None:
    _atomic_write_text(path, (f"{k} {v}" for k, v in labels.items()))


def invert_map(member_to_model: Mapping[str, str]) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for member, model in member_to_model.items():
        out.setdefault(model, []).append(member)
    return out


@dataclass(frozen=True)
class TrialList:
    trials: list[tuple[str, str, str]]

    def __post_init__(self) -> None:
        seen: set[tuple[str, str]] = set()
        for m, t, k in self.trials:
            if k not in (TARGET, NONTARGET, UNKNOWN):
                raise MalformedLineError(f"invalid trial key {k!r}")
            if (m, t) in seen:
                raise DuplicateIdError(f"duplicate trial ({m}, {t})")
            seen.add((m, t))
        keys = {k == UNKNOWN for _, _, k in self.trials}
        if len(keys) > 1:
            raise DataError("trial list mixes keyed and unkeyed trials")

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def has_keys(self) -> bool:
        return bool(self.trials) and self.trials[0][2] != UNKNOWN

    def model_ids(self) -> list[str]:
        return [m for m, _, _ in self.trials]

    def test_ids(self) -> list[str]:
        return [t for _, t, _ in self.trials]

    def keys(self) -> list[str]:
        return [k for _, _, k in self.trials]


def read_trials(path: str | os.PathLike) -> TrialList:
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) == 2:
                trials.append((parts[0], parts[1], UNKNOWN))
            elif len(parts) == 3 and parts[2] in _KEYS:
                trials.append((parts[0], parts[1], parts[2]))
            else:
                raise MalformedLineError(
                    f"{path}:{lineno}: expected 'model test [target|nontarget]', got {line.strip()!r}"
                )
    try:
        return TrialList(trials)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def write_trials(trials: TrialList, path: str | os.PathLike) -> None:
    _atomic_write_text(
        path, (f"{m} {t}" if k == UNKNOWN else f"{m} {t} {k}" for m, t, k in trials.trials)
    )


@dataclass(frozen=True)
class ScoreSet:
    model_ids: list[str]
    test_ids: list[str]
    scores: np.ndarray
    keys: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        if not self.keys:
            object.__setattr__(self, "keys", [UNKNOWN] * len(scores))
        if not (len(self.model_ids) == len(self.test_ids) == len(scores) == len(self.keys)):
            raise DimensionMismatchError("score set fields have different lengths")
        if not np.all(np.isfinite(scores)):
            raise NonFiniteError("non-finite score")

    def __len__(self) -> int:
        return len(self.scores)

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (target scores, nontarget scores)."""
        keys = np.asarray(self.keys)
        if np.any(keys == UNKNOWN):
            raise DataError("score set has unkeyed trials")
        return self.scores[keys == TARGET], self.scores[keys == NONTARGET]

    def with_keys(self, trials: TrialList) -> ScoreSet:
        lookup = {(m, t): k for m, t, k in trials.trials}
        try:
            keys = [lookup[(m, t)] for m, t in zip(self.model_ids, self.test_ids)]
        except KeyError as exc:
            raise DataError(f"score for trial {exc.args[0]} not in key file") from None
        return ScoreSet(self.model_ids, self.test_ids, self.scores, keys)


def write_scores(scores: ScoreSet, path: str | os.PathLike) -> None:
    _atomic_write_text(
        path, (f"{m} {t} {s:.6f}" for m, t, s in zip(scores.model_ids, scores.test_ids, scores.scores))
    )


def read_scores(path: str | os.PathLike) -> ScoreSet:
    models, tests, values = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise MalformedLineError(f"{path}:{lineno}: expected 'model test score'")
            try:
                values.append(float(parts[2]))
            except ValueError:
                raise MalformedLineError(f"{path}:{lineno}: bad score {parts[2]!r}") from None
            models.append(parts[0])
            tests.append(parts[1])
    return ScoreSet(models, tests, np.array(values))
