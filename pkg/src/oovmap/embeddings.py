"""Word-embedding tables: text I/O, token counts and cosine neighbor search."""
from __future__ import annotations

import logging
from collections import Counter
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class EmbeddingFormatError(ValueError):
    """Malformed embedding text file."""


class EmbeddingTable:
    """Ordered vocabulary with one fixed-length float64 vector per word.

    The table is immutable once built: the backing matrix is flagged
    read-only and the vocabulary order is insertion order, so the same table
    always serializes to the same bytes.
    """

    __slots__ = ("_words", "_index", "_matrix", "n_duplicates")

    def __init__(self, words: Sequence[str], vectors, dim: int | None = None):
        words = list(words)
        matrix = np.array(vectors, dtype=np.float64, copy=True)
        if matrix.size == 0:
            if dim is None:
                raise ValueError("dim is required for an empty table")
            matrix = matrix.reshape(0, dim)
        if matrix.ndim != 2 or matrix.shape[0] != len(words):
            raise ValueError(
                f"expected {len(words)} vectors, got array of shape {matrix.shape}"
            )
        if dim is not None and matrix.shape[1] != dim:
            raise ValueError(f"expected dim {dim}, got {matrix.shape[1]}")
        if matrix.shape[1] < 1:
            raise ValueError("dim must be positive")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("embedding vectors must be finite")
        index = {}
        for i, w in enumerate(words):
            if w in index:
                raise ValueError(f"duplicate word {w!r}")
            index[w] = i
        matrix.flags.writeable = False
        self._words = tuple(words)
        self._index = index
        self._matrix = matrix
        self.n_duplicates = 0

    @classmethod
    def from_dict(cls, entries: Mapping[str, Sequence[float]], dim: int | None = None):
        words = list(entries)
        if not words:
            return cls([], [], dim=dim)
        return cls(words, [entries[w] for w in words], dim=dim)

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def words(self) -> tuple[str, ...]:
        return self._words

    @property
    def matrix(self) -> np.ndarray:
        """Read-only ``(len(self), dim)`` view of all vectors in vocabulary order."""
        return self._matrix

    def __len__(self) -> int:
        return len(self._words)

    def __contains__(self, word: object) -> bool:
        return word in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self._words)

    def __getitem__(self, word: str) -> np.ndarray:
        return self._matrix[self._index[word]]

    def get(self, word: str, default=None):
        i = self._index.get(word)
        return default if i is None else self._matrix[i]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for w, row in zip(self._words, self._matrix):
            yield w, row

    def subset(self, words: Iterable[str]) -> "EmbeddingTable":
        """Table restricted to ``words`` (kept in the order given)."""
        words = [w for w in words if w in self._index]
        rows = [self._index[w] for w in words]
        return EmbeddingTable(words, self._matrix[rows], dim=self.dim)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return self._words == other._words and np.array_equal(self._matrix, other._matrix)

    def __repr__(self) -> str:
        return f"EmbeddingTable(n={len(self)}, dim={self.dim})"


def _is_header(fields: list[str]) -> bool:
    if len(fields) != 2:
        return False
    try:
        int(fields[0])
        int(fields[1])
    except ValueError:
        return False
    return True


def load_embeddings(
    path: str | Path, expected_dim: int | None = None, lowercase: bool = False
) -> EmbeddingTable:
    """Read a ``word v1 ... vd`` text file.

    An optional leading ``V d`` header line is skipped. Duplicate words keep
    the last vector; the number of overridden rows is logged and stored on
    ``table.n_duplicates``.
    """
    entries: dict[str, np.ndarray] = {}
    dim = expected_dim
    duplicates = 0
    seen_data = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split(" ")
            if lineno == 1 and _is_header(fields):
                continue
            word, raw = fields[0], fields[1:]
            if not word:
                raise EmbeddingFormatError(f"empty word at line {lineno}")
            if dim is None:
                dim = len(raw)
                if dim == 0:
                    raise EmbeddingFormatError(f"no vector components at line {lineno}")
            if len(raw) != dim:
                raise EmbeddingFormatError(
                    f"dimension mismatch at line {lineno}: expected {dim}, got {len(raw)}"
                )
            try:
                vec = np.array([float(x) for x in raw], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFormatError(f"non-numeric field at line {lineno}: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"non-finite value at line {lineno}")
            if lowercase:
                word = word.lower()
            if word in entries:
                duplicates += 1
                # keep first-seen position, last-seen vector
            entries[word] = vec
            seen_data = True
    if not seen_data:
        raise EmbeddingFormatError(f"{path}: no embedding records")
    if duplicates:
        log.warning("%s: %d duplicate word(s), last occurrence kept", path, duplicates)
    table = EmbeddingTable(list(entries), list(entries.values()), dim=dim)
    table.n_duplicates = duplicates
    return table


def format_float(x: float) -> str:
    return format(float(x), ".9g")


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write ``table`` as headerless UTF-8 text with 9 significant digits."""
    if len(table) == 0:
        raise ValueError("refusing to write an empty embedding table")
    for w in table.words:
        if not w or any(c.isspace() for c in w):
            raise ValueError(f"word contains whitespace: {w!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w, row in table.items():
            fh.write(w)
            for x in row:
                fh.write(" ")
                fh.write(format_float(x))
            fh.write("\n")


class VocabCounts(Counter):
    """Token counts over the annotated training corpus; absent words count 0."""

    def total_tokens(self) -> int:
        return sum(self.values())


def count_tokens(corpus: Iterable, lowercase: bool = False) -> VocabCounts:
    """Count surface forms over sentences.

    Sentences may be ``DepSentence`` objects or plain sequences of strings.
    """
    counts = VocabCounts()
    for sent in corpus:
        forms = getattr(sent, "forms", sent)
        if lowercase:
            forms = [f.lower() for f in forms]
        counts.update(forms)
    return counts


def load_counts(path: str | Path, lowercase: bool = False) -> VocabCounts:
    """Read ``word count`` lines."""
    counts = VocabCounts()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'word count'")
            try:
                c = int(fields[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: count is not an integer") from None
            if c < 0:
                raise ValueError(f"{path}:{lineno}: negative count")
            w = fields[0].lower() if lowercase else fields[0]
            counts[w] += c
    return counts


def save_counts(counts: Mapping[str, int], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in sorted(counts):
            fh.write(f"{w} {counts[w]}\n")


def cosine_to_rows(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine of ``query`` against every row; zero-norm pairs give 0."""
    query = np.asarray(query, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    qn = float(np.linalg.norm(query))
    dots = matrix @ query
    out = np.zeros(len(matrix))
    if qn == 0.0:
        return out
    ok = norms > 0
    out[ok] = dots[ok] / (norms[ok] * qn)
    return np.clip(out, -1.0, 1.0)


def nearest_neighbors(
    table: EmbeddingTable,
    query,
    k: int,
    exclude: Iterable[str] | None = None,
) -> list[tuple[str, float]]:
    """Top-``k`` words by cosine similarity, ties broken by word order."""
    query = np.asarray(query, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if query.shape != (table.dim,):
        raise ValueError(f"query has shape {query.shape}, table dim is {table.dim}")
    excluded = set(exclude or ())
    sims = cosine_to_rows(table.matrix, query)
    ranked = sorted(
        (
            (-float(s), w)
            for w, s in zip(table.words, sims)
            if w not in excluded
        )
    )
    return [(w, -neg) for neg, w in ranked[:k]]

