"""Tokenisation, GloVe-format embeddings and document representations.

Two representations are produced from the same embedding table:

* the averaged word vector of a document (input to :class:`SignNetwork`
  models), and
* the stacked ``max_len x d`` word-vector matrix (input to the convolutional
  models), stored compactly as row indices into a per-batch vector table.
"""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

logger = logging.getLogger(__name__)

# long dashes separate words the way whitespace does; '-' stays inside tokens
_DASHES = "\u2012\u2013\u2014\u2015"  # figure, en, em dash, horizontal bar
_SPLIT_TABLE = str.maketrans({ch: " " for ch in _DASHES})

DEFAULT_MAX_LEN = {"imdb": 256, "yelp": 256, "mr": 48, "ag": 64}


def _strip_edges(piece):
    start, end = 0, len(piece)
    while start < end and not piece[start].isalnum():
        start += 1
    while end > start and not piece[end - 1].isalnum():
        end -= 1
    return piece[start:end]


def tokenize(text):
    """Lowercase, split on whitespace and long dashes, trim edge punctuation.

    >>> tokenize("Great movie!")
    ['great', 'movie']
    """
    pieces = text.lower().translate(_SPLIT_TABLE).split()
    return [tok for tok in map(_strip_edges, pieces) if tok]


@dataclass(frozen=True)
class Document:
    tokens: tuple
    label: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.label not in (-1, 1):
            raise ValueError(f"document label must be -1 or +1, got {self.label!r}")

    def __len__(self):
        return len(self.tokens)


def _tokens_of(doc):
    if isinstance(doc, Document):
        return doc.tokens
    if isinstance(doc, str):
        return tokenize(doc)
    return tuple(doc)


# embeddings ---------------------------------------------------------------


class EmbeddingFormatError(ValueError):
    pass


class EmbeddingTable:
    """Token to vector map backed by one read-only ``(V, d)`` float64 array."""

    def __init__(self, tokens, vectors):
        vectors = np.array(vectors, dtype=np.float64, copy=True)
        tokens = list(tokens)
        if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
            raise ValueError("need one vector row per token")
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        self.index = {}
        for i, tok in enumerate(tokens):
            if tok in self.index:
                raise ValueError(f"duplicate token {tok!r}")
            self.index[tok] = i
        vectors.setflags(write=False)
        self.tokens = tokens
        self.vectors = vectors
        self.duplicates_skipped = 0

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __getitem__(self, token):
        return self.vectors[self.index[token]]

    def to_text(self):
        rows = (
            tok + " " + " ".join(repr(float(v)) for v in vec)
            for tok, vec in zip(self.tokens, self.vectors)
        )
        return "\n".join(rows) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def load_embeddings(path, vocabulary=None):
    """Read a GloVe text file (``token v1 ... vd`` per line).

    The dimension comes from the first line and every other line must match.
    A repeated token keeps its first vector. ``vocabulary`` optionally limits
    which tokens are kept (all lines are still format-checked).
    """
    tokens, rows = [], []
    seen = set()
    dim = None
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if dim is None:
                dim = len(parts) - 1
                if dim < 1:
                    raise EmbeddingFormatError(f"line {lineno}: no vector values")
            if len(parts) - 1 != dim:
                raise EmbeddingFormatError(
                    f"line {lineno}: expected {dim} values, found {len(parts) - 1}"
                )
            try:
                values = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise EmbeddingFormatError(f"line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise EmbeddingFormatError(f"line {lineno}: non-finite value")
            token = parts[0]
            if token in seen:
                duplicates += 1
                continue
            seen.add(token)
            if vocabulary is not None and token not in vocabulary:
                continue
            tokens.append(token)
            rows.append(values)
    if dim is None:
        raise EmbeddingFormatError(f"{path}: no embeddings found")
    if duplicates:
        logger.warning("%s: skipped %d duplicate tokens", path, duplicates)
    table = EmbeddingTable(tokens, np.array(rows, dtype=np.float64).reshape(len(rows), dim))
    table.duplicates_skipped = duplicates
    return table


# averaged vectors ---------------------------------------------------------


def average_vector(doc, table):
    """Mean embedding of the in-vocabulary tokens and the number of OOV tokens.

    Vectors are summed in vocabulary order, so the result does not depend on
    token order. A document with no known tokens maps to the zero vector.
    """
    tokens = _tokens_of(doc)
    idx = [table.index[t] for t in tokens if t in table.index]
    oov = len(tokens) - len(idx)
    if not idx:
        return np.zeros(table.dim), oov
    idx.sort()
    return table.vectors[idx].sum(axis=0) / len(idx), oov


# stacked matrices ---------------------------------------------------------


@dataclass(frozen=True)
class DocMatrix:
    """``max_len x d`` word-vector matrix; rows from ``valid_len`` on are zero."""

    matrix: np.ndarray
    valid_len: int

    @property
    def max_len(self):
        return self.matrix.shape[0]


def stack_matrix(doc, table, max_len):
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    tokens = _tokens_of(doc)[:max_len]
    M = np.zeros((max_len, table.dim))
    for i, tok in enumerate(tokens):
        j = table.index.get(tok)
        if j is not None:
            M[i] = table.vectors[j]
    return DocMatrix(M, len(tokens))


class DocBatch:
    """A batch of stacked documents sharing a compact vector table.

    ``indices[i, r]`` selects the row of ``vectors`` used for token ``r`` of
    document ``i``. The last row of ``vectors`` is all zeros and serves both
    out-of-vocabulary tokens and padding.
    """

    def __init__(self, indices, lengths, vectors):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.lengths = np.asarray(lengths, dtype=np.int64)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        if self.indices.ndim != 2 or self.lengths.shape != (self.indices.shape[0],):
            raise ValueError("indices must be (n_docs, max_len) with one length per doc")
        if np.any(self.lengths < 0) or np.any(self.lengths > self.indices.shape[1]):
            raise ValueError("document lengths must lie in [0, max_len]")
        if np.any(self.vectors[-1] != 0):
            raise ValueError("the last vector row must be the zero padding row")

    @classmethod
    def from_documents(cls, docs, table, max_len):
        if max_len < 1:
            raise ValueError("max_len must be at least 1")
        token_lists = [_tokens_of(d)[:max_len] for d in docs]
        used = sorted({table.index[t] for toks in token_lists for t in toks if t in table.index})
        local = {row: i for i, row in enumerate(used)}
        pad = len(used)
        indices = np.full((len(token_lists), max_len), pad, dtype=np.int64)
        for i, toks in enumerate(token_lists):
            for r, tok in enumerate(toks):
                row = table.index.get(tok)
                if row is not None:
                    indices[i, r] = local[row]
        vectors = np.vstack([table.vectors[used].reshape(len(used), table.dim), np.zeros(table.dim)])
        lengths = [len(toks) for toks in token_lists]
        return cls(indices, lengths, vectors)

    @property
    def max_len(self):
        return self.indices.shape[1]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.indices.shape[0]

    def __getitem__(self, rows):
        rows = np.atleast_1d(np.arange(len(self))[rows])
        return DocBatch(self.indices[rows], self.lengths[rows], self.vectors)

    def matrix(self, i):
        M = self.vectors[self.indices[i]]
        M[self.lengths[i]:] = 0.0
        return DocMatrix(M, int(self.lengths[i]))


# corpora ------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusFormat:
    labels: dict
    excluded: frozenset = frozenset()


CORPUS_FORMATS = {
    "signed": CorpusFormat({"-1": -1, "1": 1, "+1": 1}),
    "mr": CorpusFormat({"0": -1, "1": 1}),
    "imdb": CorpusFormat({"0": -1, "1": 1}),
    "yelp": CorpusFormat({"1": -1, "2": 1}),
    # AG news: 1 World, 2 Sports, 3 Business, 4 Sci/Tech
    "ag": CorpusFormat({"1": -1, "2": 1}, frozenset({"3", "4"})),
}


class Corpus(list):
    """List of :class:`Document` with the row counts dropped while reading."""

    malformed = 0
    filtered = 0


def _rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        if "\t" in first:
            for line in fh:
                line = line.rstrip("\r\n")
                yield line.split("\t") if line else []
        else:
            yield from csv.reader(fh)


def load_corpus(path, format="signed"):
    """Read ``label<TAB>text`` or ``label,text`` rows.

    Tab-separated files (detected from the first line) are split on tabs with
    no quoting; anything else is read as CSV with standard double-quote
    quoting. Extra fields after the label are joined with spaces to form the
    text (AG news stores title and description separately). Rows whose label
    is outside the format's label map are counted as malformed, except the
    format's explicitly excluded classes, which are counted as filtered.
    """
    try:
        layout = CORPUS_FORMATS[format]
    except KeyError:
        raise ValueError(
            f"unknown corpus format {format!r}; expected one of {sorted(CORPUS_FORMATS)}"
        ) from None
    corpus = Corpus()
    for row in _rows(path):
        if not row:
            continue
        if len(row) < 2:
            corpus.malformed += 1
            continue
        label = row[0].strip()
        if label in layout.excluded:
            corpus.filtered += 1
            continue
        if label not in layout.labels:
            corpus.malformed += 1
            continue
        text = " ".join(field for field in row[1:])
        corpus.append(Document(tokenize(text), layout.labels[label]))
    if corpus.malformed:
        logger.warning("%s: skipped %d malformed rows", path, corpus.malformed)
    if not corpus:
        raise ValueError(f"{path}: no usable rows")
    return corpus


def corpus_stats(docs, table=None):
    n_tokens = sum(len(d.tokens) for d in docs)
    stats = {
        "docs": len(docs),
        "positives": sum(d.label == 1 for d in docs),
        "negatives": sum(d.label == -1 for d in docs),
        "mean_tokens": n_tokens / len(docs) if docs else 0.0,
    }
    if table is not None:
        oov = sum(t not in table.index for d in docs for t in d.tokens)
        stats["oov_rate"] = oov / n_tokens if n_tokens else 0.0
    return stats


# transformers -------------------------------------------------------------


class AverageEmbeddingVectorizer(TransformerMixin, BaseEstimator):
    """Map documents (strings, token lists or Documents) to mean word vectors."""

    def __init__(self, embeddings=None):
        self.embeddings = embeddings

    def fit(self, X, y=None):
        if self.embeddings is None:
            raise ValueError("AverageEmbeddingVectorizer needs an EmbeddingTable")
        self.n_features_out_ = self.embeddings.dim
        return self

    def transform(self, X):
        out = np.empty((len(X), self.embeddings.dim))
        for i, doc in enumerate(X):
            out[i], _ = average_vector(doc, self.embeddings)
        return out


class StackedEmbeddingVectorizer(TransformerMixin, BaseEstimator):
    """Map documents to a :class:`DocBatch` of stacked word vectors."""

    def __init__(self, embeddings=None, max_len=64):
        self.embeddings = embeddings
        self.max_len = max_len

    def fit(self, X, y=None):
        if self.embeddings is None:
            raise ValueError("StackedEmbeddingVectorizer needs an EmbeddingTable")
        return self

    def transform(self, X):
        return DocBatch.from_documents(X, self.embeddings, self.max_len)
