"""Dense text features: n-gram TF-IDF with max-abs scaling, and precomputed
embedding lookup.

Vocabularies, document frequencies, and scalers are fitted on the training
split only and then frozen for dev/test. TF-IDF uses raw term counts and the
smoothed log form idf(t) = ln((1 + D) / (1 + df(t))) + 1.

Binary formats (little-endian throughout):

EMB1 embedding table
    b"EMB1" | u32 count | u32 dim | count x (u16 id_len, id utf-8, dim x f32)

FMAT1 dense feature matrix
    b"FMAT1" | u32 rows | u32 cols | rows x (u16 id_len, id utf-8) | rows*cols f64

Readers reject bad magic, truncation, and trailing bytes.
"""

from __future__ import annotations

import hashlib
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, DimZero, EmptyCorpus, FormatError, MissingId

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

# Pipeline defaults: unigrams over original texts, 1..3-grams over responses.
TEXT_NGRAM_RANGE = frozenset({1})
TEXT_VOCAB_CAP = 10_000
RESPONSE_NGRAM_RANGE = frozenset({1, 2, 3})
RESPONSE_VOCAB_CAP = 2_000


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def _ngrams(tokens: list[str], n_range) -> list[str]:
    grams = []
    for n in n_range:
        for i in range(len(tokens) - n + 1):
            grams.append(" ".join(tokens[i : i + n]))
    return grams


@dataclass(frozen=True)
class Vocab:
    terms: tuple[str, ...]
    n_range: frozenset[int]
    size_cap: int
    term_index: dict[str, int] = field(default=None, compare=False)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "term_index", {t: i for i, t in enumerate(self.terms)})

    def __len__(self) -> int:
        return len(self.terms)


def build_vocab(train_texts: list[str], n_range, size_cap: int) -> Vocab:
    """Keep the size_cap most frequent n-grams over the training texts.

    Ranking is by total occurrence count, ties broken lexicographically.
    """
    n_range = frozenset(int(n) for n in n_range)
    if not n_range:
        raise ValueError("n_range must be non-empty")
    if size_cap < 1:
        raise ValueError("size_cap must be >= 1")
    counts: Counter[str] = Counter()
    for text in train_texts:
        counts.update(_ngrams(tokenize(text), n_range))
    if not counts:
        raise EmptyCorpus("no n-grams found in training texts")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:size_cap]
    return Vocab(terms=tuple(t for t, _ in ranked), n_range=n_range, size_cap=size_cap)


@dataclass(frozen=True)
class IdfWeights:
    """Train-split document frequencies turned into idf multipliers."""

    idf: np.ndarray
    n_train_docs: int


def fit_idf(train_texts: list[str], vocab: Vocab) -> IdfWeights:
    df = np.zeros(len(vocab), dtype=np.float64)
    for text in train_texts:
        for term in set(_ngrams(tokenize(text), vocab.n_range)):
            col = vocab.term_index.get(term)
            if col is not None:
                df[col] += 1
    n_docs = len(train_texts)
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    return IdfWeights(idf=idf, n_train_docs=n_docs)


@dataclass(frozen=True)
class FeatureMatrix:
    ids: tuple[str, ...]
    data: np.ndarray  # (n_rows, n_cols) float64

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != len(self.ids):
            raise DimMismatch(
                f"{len(self.ids)} ids but data shape {self.data.shape}"
            )

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def _default_ids(n: int) -> tuple[str, ...]:
    return tuple(f"{i:06d}" for i in range(n))


def tfidf(
    texts: list[str],
    vocab: Vocab,
    idf: IdfWeights,
    ids: list[str] | tuple[str, ...] | None = None,
) -> FeatureMatrix:
    """Raw term counts weighted by the train-fitted idf; OOV terms are ignored."""
    data = np.zeros((len(texts), len(vocab)), dtype=np.float64)
    for row, text in enumerate(texts):
        for term, count in Counter(_ngrams(tokenize(text), vocab.n_range)).items():
            col = vocab.term_index.get(term)
            if col is not None:
                data[row, col] = count
    data *= idf.idf
    row_ids = tuple(ids) if ids is not None else _default_ids(len(texts))
    return FeatureMatrix(ids=row_ids, data=data)


@dataclass(frozen=True)
class MaxAbsScaler:
    max_abs: np.ndarray


def fit_scaler(train_features: FeatureMatrix) -> MaxAbsScaler:
    return MaxAbsScaler(max_abs=np.max(np.abs(train_features.data), axis=0))


def scale(features: FeatureMatrix, scaler: MaxAbsScaler) -> FeatureMatrix:
    """Divide each column by its training max-abs; all-zero columns pass through."""
    if features.n_cols != scaler.max_abs.shape[0]:
        raise DimMismatch(
            f"matrix has {features.n_cols} columns, scaler has {scaler.max_abs.shape[0]}"
        )
    denom = np.where(scaler.max_abs == 0.0, 1.0, scaler.max_abs)
    return FeatureMatrix(ids=features.ids, data=features.data / denom)


# -- embedding tables ------------------------------------------------------

_EMB1_MAGIC = b"EMB1"
_FMAT1_MAGIC = b"FMAT1"


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]  # id -> (dim,) float32


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def done(self) -> None:
        if self.pos != len(self.blob):
            raise FormatError(f"{self.path}: {len(self.blob) - self.pos} trailing bytes")


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_EMB1_MAGIC)
        fh.write(struct.pack("<II", len(table.vectors), table.dim))
        for vec_id, vec in table.vectors.items():
            id_bytes = vec_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != _EMB1_MAGIC:
        raise FormatError(f"{path}: bad magic, not an EMB1 file")
    count, dim = struct.unpack("<II", reader.take(8))
    if dim == 0:
        raise DimZero(f"{path}: embedding dimension is zero")
    vectors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (id_len,) = struct.unpack("<H", reader.take(2))
        vec_id = reader.take(id_len).decode("utf-8")
        vec = np.frombuffer(reader.take(4 * dim), dtype="<f4").copy()
        vectors[vec_id] = vec
    reader.done()
    return EmbeddingTable(dim=dim, vectors=vectors)


def lookup(table: EmbeddingTable, ids) -> FeatureMatrix:
    """Stack the vectors for the requested ids, in the requested order."""
    rows = []
    for vec_id in ids:
        vec = table.vectors.get(vec_id)
        if vec is None:
            raise MissingId(f"id {vec_id!r} not present in embedding table")
        rows.append(vec.astype(np.float64))
    data = np.vstack(rows) if rows else np.zeros((0, table.dim), dtype=np.float64)
    return FeatureMatrix(ids=tuple(ids), data=data)


def mock_embed(texts: list[str], dim: int, seed: int, ids=None) -> FeatureMatrix:
    """Deterministic pseudo-embeddings: each text's vector depends only on
    (seed, text), uniform in [-1, 1]. A stand-in for a real embedding producer."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    data = np.empty((len(texts), dim), dtype=np.float64)
    for i, text in enumerate(texts):
        digest = hashlib.sha256(f"{seed}\x1f{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        data[i] = rng.uniform(-1.0, 1.0, dim)
    row_ids = tuple(ids) if ids is not None else _default_ids(len(texts))
    return FeatureMatrix(ids=row_ids, data=data)


# -- feature matrix files ----------------------------------------------------


def save_feature_matrix(fm: FeatureMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_FMAT1_MAGIC)
        fh.write(struct.pack("<II", len(fm.ids), fm.n_cols))
        for row_id in fm.ids:
            id_bytes = row_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
        fh.write(np.ascontiguousarray(fm.data, dtype="<f8").tobytes())


def load_feature_matrix(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(5) != _FMAT1_MAGIC:
        raise FormatError(f"{path}: bad magic, not an FMAT1 file")
    rows, cols = struct.unpack("<II", reader.take(8))
    ids = []
    for _ in range(rows):
        (id_len,) = struct.unpack("<H", reader.take(2))
        ids.append(reader.take(id_len).decode("utf-8"))
    data = np.frombuffer(reader.take(8 * rows * cols), dtype="<f8").copy()
    reader.done()
    return FeatureMatrix(ids=tuple(ids), data=data.reshape(rows, cols))
