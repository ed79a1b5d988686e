"""Desk-scale bi-encoder: frozen token table plus per-token linear projections.

The teacher path projects every token, L2-normalizes the rows and (for
passages) drops punctuation rows. The student path projects and averages,
with no normalization and no filtering.
"""

from __future__ import annotations

import re
import struct
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .linalg import l2_normalize_rows

UNK = "[UNK]"
QUERY_MAX_LEN = 32
PASSAGE_MAX_LEN = 150
DEFAULT_T = 64
DEFAULT_H = 32

TABLE_MAGIC = b"TCTE"
PROJECTION_MAGIC = b"TCTP"
FORMAT_VERSION = 1

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_tokens(text: str) -> list[str]:
    """Lowercase and split into word tokens and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


def is_punctuation(token: str) -> bool:
    return bool(token) and all(unicodedata.category(c).startswith("P") for c in token)


class Vocabulary:
    """Dense token -> id map. Id 0 is always the reserved UNK token."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if not tokens or tokens[0] != UNK:
            tokens = [UNK] + [t for t in tokens if t != UNK]
        self.tokens = tokens
        self.index = {}
        for i, tok in enumerate(tokens):
            if tok in self.index:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.index[tok] = i
        self.punctuation_ids = frozenset(
            i for i, tok in enumerate(tokens) if is_punctuation(tok)
        )

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        """Build a vocabulary in first-seen order (deterministic for a fixed input order)."""
        seen = {UNK: None}
        for text in texts:
            for tok in split_tokens(text):
                seen.setdefault(tok, None)
        return cls(list(seen))

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def unk_id(self) -> int:
        return 0

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, 0)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> np.ndarray:
    """Map text to token ids, unknown tokens to UNK, truncated to ``max_len``."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    toks = split_tokens(text)
    if not toks:
        raise ValueError(f"text is empty after tokenization: {text!r}")
    return np.array([vocab.id(t) for t in toks[:max_len]], dtype=np.int64)


@dataclass
class EmbeddingTable:
    """Frozen (vocab_size x t) token embedding table."""

    vocab: Vocabulary
    table: np.ndarray
    frozen: bool = True

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float32)
        if self.table.ndim != 2 or self.table.shape[0] != self.vocab.size:
            raise ValueError(
                f"table shape {self.table.shape} does not match vocab size {self.vocab.size}"
            )
        if self.frozen:
            self.table.setflags(write=False)

    @property
    def t(self) -> int:
        return self.table.shape[1]

    @classmethod
    def random(cls, vocab: Vocabulary, t: int = DEFAULT_T, seed: int = 0) -> "EmbeddingTable":
        rng = np.random.default_rng(seed)
        table = rng.normal(0.0, 1.0 / np.sqrt(t), size=(vocab.size, t))
        return cls(vocab, table.astype(np.float32))

    def lookup(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("token id sequence is empty")
        return self.table[ids].astype(np.float64)

    def mean(self, ids) -> np.ndarray:
        return self.lookup(ids).mean(axis=0)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(TABLE_MAGIC)
            f.write(struct.pack("<III", FORMAT_VERSION, self.vocab.size, self.t))
            for tok in self.vocab.tokens:
                raw = tok.encode("utf-8")
                f.write(struct.pack("<I", len(raw)))
                f.write(raw)
            f.write(self.table.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        data = Path(path).read_bytes()
        if data[:4] != TABLE_MAGIC:
            raise ValueError(f"{path}: not an embedding table file")
        version, size, t = struct.unpack_from("<III", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        off = 16
        tokens = []
        for _ in range(size):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            tokens.append(data[off:off + n].decode("utf-8"))
            off += n
        table = np.frombuffer(data, dtype="<f4", count=size * t, offset=off).reshape(size, t)
        return cls(Vocabulary(tokens), table.astype(np.float32))


@dataclass
class Projection:
    """Per-token shared linear map (t x h), i.e. a width-1 convolution."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("projection weights must be a matrix")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("projection weights must be finite")

    @property
    def t(self) -> int:
        return self.weights.shape[0]

    @property
    def h(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def random(cls, t: int = DEFAULT_T, h: int = DEFAULT_H, seed: int = 0) -> "Projection":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(t), size=(t, h)))

    def copy(self) -> "Projection":
        return Projection(self.weights.copy())

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(PROJECTION_MAGIC)
            f.write(struct.pack("<III", FORMAT_VERSION, self.t, self.h))
            f.write(self.weights.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "Projection":
        data = Path(path).read_bytes()
        if data[:4] != PROJECTION_MAGIC:
            raise ValueError(f"{path}: not a projection file")
        version, t, h = struct.unpack_from("<III", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        w = np.frombuffer(data, dtype="<f4", count=t * h, offset=16).reshape(t, h)
        return cls(w.astype(np.float64))


@dataclass
class EncodedText:
    token_vectors: np.ndarray
    pooled: np.ndarray | None = None
    source_len: int = 0
    kept_positions: np.ndarray = field(default=None, repr=False)


def _project(ids, table: EmbeddingTable, proj: Projection) -> np.ndarray:
    if table.t != proj.t:
        raise ValueError(f"projection expects t={proj.t}, table has t={table.t}")
    return table.lookup(ids) @ proj.weights


def encode_teacher_query(ids, table: EmbeddingTable, proj: Projection) -> EncodedText:
    rows = _project(ids, table, proj)
    return EncodedText(
        token_vectors=l2_normalize_rows(rows),
        source_len=len(rows),
        kept_positions=np.arange(len(rows)),
    )


def encode_teacher_doc(ids, table: EmbeddingTable, proj: Projection) -> EncodedText:
    ids = np.asarray(ids, dtype=np.int64)
    rows = l2_normalize_rows(_project(ids, table, proj))
    punct = table.vocab.punctuation_ids
    keep = np.array([int(i) not in punct for i in ids], dtype=bool)
    if not keep.any():
        raise ValueError("every passage token was filtered as punctuation")
    return EncodedText(
        token_vectors=rows[keep],
        source_len=len(ids),
        kept_positions=np.flatnonzero(keep),
    )


def encode_pooled(ids, table: EmbeddingTable, proj: Projection) -> EncodedText:
    rows = _project(ids, table, proj)
    return EncodedText(token_vectors=rows, pooled=rows.mean(axis=0), source_len=len(rows))


def encode_pooled_batch(id_seqs: Sequence, table: EmbeddingTable, proj: Projection) -> np.ndarray:
    """Pooled vectors for many texts at once, shape (n, h).

    Uses mean(E) @ W, which equals mean(E @ W) up to rounding.
    """
    if table.t != proj.t:
        raise ValueError(f"projection expects t={proj.t}, table has t={table.t}")
    means = np.stack([table.mean(ids) for ids in id_seqs])
    return means @ proj.weights
