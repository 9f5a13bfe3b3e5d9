"""Document-level co-occurrence counts and the symmetric NPMI matrix.

NPMI is computed from boolean document occurrence: with P(w) = df(w)/D and
P(w,w') = df(w,w')/D,

    npmi(w,w') = log(P(w,w') / (P(w) P(w'))) / (-log P(w,w'))

for pairs that co-occur at least once. Pairs that never co-occur take the
default value -1 (the theoretical limit for zero joint probability) rather
than an epsilon-smoothed score, so evaluation numbers stay interpretable.
The diagonal is 1 for every word that occurs at all; when P(w,w') = 1 the
expression degenerates to 0/0 and is defined as 1 (perfect co-occurrence).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DEFAULT_NPMI = -1.0

# Stored scores are shifted so the sparse matrix's implicit zeros can never
# collide with a legitimate score (npmi 0 is a valid stored value).
_SHIFT = 2.0

# Dense V*V similarity matrices above this many bytes fall back to the
# base-plus-sparse representation (or fail, if dense was demanded).
DEFAULT_MEMORY_BUDGET = 4 << 30


class CoocError(ValueError):
    """Vocabulary/corpus mismatch or malformed matrix file."""


class MemoryBudgetError(RuntimeError):
    """A dense similarity view would exceed the configured budget."""


# ---------------------------------------------------------------------------
# Pair counting (shardable with an associative merge)
# ---------------------------------------------------------------------------


def count_pairs(docs, vocab_size: int):
    """Count boolean document co-occurrence for one shard of documents.

    Returns (keys, counts) with keys = i * vocab_size + j for i < j, sorted.
    Duplicate words within a document count once.
    """
    chunks = []
    for doc in docs:
        idx = doc.indices
        k = idx.size
        if k < 2:
            continue
        a, b = np.triu_indices(k, 1)
        chunks.append(idx[a].astype(np.int64) * vocab_size + idx[b])
    if not chunks:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    keys, counts = np.unique(np.concatenate(chunks), return_counts=True)
    return keys, counts


def merge_pair_counts(parts):
    """Merge per-shard (keys, counts) pairs; associative and order-free."""
    keys = np.concatenate([k for k, _ in parts])
    counts = np.concatenate([c for _, c in parts])
    if keys.size == 0:
        return keys, counts
    order = np.argsort(keys, kind="stable")
    keys, counts = keys[order], counts[order]
    new = np.empty(keys.size, dtype=bool)
    new[0] = True
    new[1:] = keys[1:] != keys[:-1]
    starts = np.flatnonzero(new)
    return keys[starts], np.add.reduceat(counts, starts)


# ---------------------------------------------------------------------------
# The matrix
# ---------------------------------------------------------------------------


@dataclass
class NpmiMatrix:
    """Sparse symmetric NPMI scores over co-occurring pairs.

    ``active`` marks words with df > 0; their diagonal is exactly 1.
    Lookups for pairs without joint occurrence return ``default_value``.
    """

    size: int
    doc_count: int
    default_value: float
    source: str  # "train" or "test"
    active: np.ndarray  # bool per word
    _upper: sp.csr_matrix  # shift-encoded scores, strictly upper triangular
    vocab_hash: str | None = None

    @property
    def nnz_pairs(self) -> int:
        return int(self._upper.nnz)

    def lookup(self, i: int, j: int) -> float:
        """Symmetric score lookup honoring the default value."""
        v = self.size
        if not (0 <= i < v and 0 <= j < v):
            raise CoocError(f"word index out of range: ({i}, {j}) with V={v}")
        if i == j:
            return 1.0 if self.active[i] else self.default_value
        a, b = (i, j) if i < j else (j, i)
        stored = self._upper[a, b]
        return float(stored - _SHIFT) if stored != 0.0 else self.default_value

    def lookup_pairs(self, rows, cols) -> np.ndarray:
        """Vectorized symmetric lookup for parallel index arrays."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.size and (rows.min() < 0 or cols.min() < 0
                          or rows.max() >= self.size or cols.max() >= self.size):
            raise CoocError(f"word index out of range with V={self.size}")
        a = np.minimum(rows, cols)
        b = np.maximum(rows, cols)
        stored = np.asarray(self._upper[a, b]).ravel()
        out = np.where(stored != 0.0, stored - _SHIFT, self.default_value)
        diag = a == b
        if diag.any():
            out[diag] = np.where(self.active[a[diag]], 1.0, self.default_value)
        return out

    def pairs(self):
        """Iterate stored (i, j, score) entries with i < j, sorted."""
        coo = self._upper.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            yield int(i), int(j), float(v - _SHIFT)


def _npmi_scores(joint, df_i, df_j, doc_count):
    p_joint = joint / doc_count
    p_i = df_i / doc_count
    p_j = df_j / doc_count
    denom = -np.log(p_joint)
    num = np.log(p_joint / (p_i * p_j))
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(denom > 0.0, num / np.maximum(denom, 1e-300), 1.0)
    return np.clip(scores, -1.0, 1.0)


def build_npmi(docs, vocab, source: str = "train") -> NpmiMatrix:
    """Build the NPMI matrix for a document list over a shared vocabulary.

    Every vocabulary word must occur in at least one of the given documents;
    a zero document frequency means the matrix is being built against the
    wrong corpus and is fatal.
    """
    if not docs:
        raise CoocError("cannot build NPMI matrix from an empty document list")
    v = len(vocab)
    d = len(docs)

    df = np.zeros(v, dtype=np.int64)
    for doc in docs:
        df[doc.indices] += 1
    missing = np.flatnonzero(df == 0)
    if missing.size:
        word = vocab.words[int(missing[0])]
        raise CoocError(
            f"vocabulary/corpus mismatch: word {word!r} (index {int(missing[0])}) "
            f"never occurs in the given {source} documents"
        )

    keys, counts = count_pairs(docs, v)
    rows = keys // v
    cols = keys % v
    scores = _npmi_scores(counts.astype(np.float64), df[rows], df[cols], float(d))

    upper = sp.csr_matrix((scores + _SHIFT, (rows, cols)), shape=(v, v))
    return NpmiMatrix(
        size=v,
        doc_count=d,
        default_value=DEFAULT_NPMI,
        source=source,
        active=df > 0,
        _upper=upper,
        vocab_hash=vocab.hash_hex(),
    )


# ---------------------------------------------------------------------------
# On-disk format: "NPMI v1 <V> <D> <default>" then sorted "i j score" triples
# ---------------------------------------------------------------------------


def save_npmi(matrix: NpmiMatrix, path) -> None:
    """Write the matrix file. Scores use shortest-roundtrip float formatting.

    Triples are the stored i < j pairs in sorted order. A word that occurs
    but co-occurs with nothing (possible only in degenerate corpora) gets an
    explicit "i i 1" diagonal line so the load is faithful.
    """
    incident = np.zeros(matrix.size, dtype=bool)
    lines = [f"NPMI v1 {matrix.size} {matrix.doc_count} {matrix.default_value!r}"]
    for i, j, score in matrix.pairs():
        incident[i] = incident[j] = True
        lines.append(f"{i} {j} {score!r}")
    isolated = np.flatnonzero(matrix.active & ~incident)
    for i in isolated:
        lines.append(f"{int(i)} {int(i)} 1.0")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))


def load_npmi(path) -> NpmiMatrix:
    """Read a matrix file, validating the header and monotone pair ordering."""
    with open(path, "rb") as fh:
        lines = fh.read().decode("ascii").splitlines()
    if not lines:
        raise CoocError(f"{path}: empty matrix file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "NPMI" or head[1] != "v1":
        raise CoocError(f"{path}: bad header {lines[0][:60]!r}")
    v, d = int(head[2]), int(head[3])
    default = float(head[4])

    rows, cols, vals = [], [], []
    active = np.zeros(v, dtype=bool)
    prev = (-1, -1)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 3:
            raise CoocError(f"{path}:{lineno}: malformed triple")
        i, j, score = int(parts[0]), int(parts[1]), float(parts[2])
        if not (0 <= i <= j < v):
            raise CoocError(f"{path}:{lineno}: indices ({i}, {j}) out of order or range")
        if (i, j) <= prev:
            raise CoocError(f"{path}:{lineno}: triples are not in sorted order")
        prev = (i, j)
        active[i] = active[j] = True
        if i != j:
            if not -1.0 <= score <= 1.0:
                raise CoocError(f"{path}:{lineno}: score {score} outside [-1, 1]")
            rows.append(i)
            cols.append(j)
            vals.append(score + _SHIFT)
    upper = sp.csr_matrix(
        (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(v, v),
    )
    return NpmiMatrix(
        size=v, doc_count=d, default_value=default, source="unknown",
        active=active, _upper=upper,
    )


# ---------------------------------------------------------------------------
# Similarity views used by the regularizer and diagnostics
# ---------------------------------------------------------------------------


class DenseSimilarity:
    """Fully materialized V x V similarity with a fast dense product."""

    kind = "dense"

    def __init__(self, matrix: np.ndarray):
        self.matrix = matrix

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def dot(self, y: np.ndarray) -> np.ndarray:
        return y @ self.matrix

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().copy()

    def value(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])


class BaseOffsetSimilarity:
    """Similarity stored as a constant base plus sparse corrections.

    Memory stays O(nnz): dot(y) = base * rowsum(y) + y @ C with C symmetric.
    """

    kind = "base+sparse"

    def __init__(self, base: float, corrections: sp.csr_matrix):
        self.base = base
        self.corrections = corrections

    @property
    def size(self) -> int:
        return self.corrections.shape[0]

    def dot(self, y: np.ndarray) -> np.ndarray:
        base_term = self.base * y.sum(axis=1, keepdims=True)
        return base_term + (self.corrections @ y.T).T

    def diagonal(self) -> np.ndarray:
        return self.base + np.asarray(self.corrections.diagonal()).ravel()

    def value(self, i: int, j: int) -> float:
        return float(self.base + self.corrections[i, j])


def _transform(scores: np.ndarray | float, transform: str):
    if transform == "exp":
        return np.exp(scores)
    if transform == "raw":
        return scores
    raise ValueError(f"unknown transform {transform!r}")


def similarity_view(matrix: NpmiMatrix, transform: str = "exp", mode: str = "auto",
                    memory_budget: int = DEFAULT_MEMORY_BUDGET):
    """Build a similarity view over the NPMI scores.

    ``transform="exp"`` gives E[i,j] = exp(npmi(i,j)) (what the contrastive
    loss consumes); ``"raw"`` gives the scores themselves (diagnostics).
    ``mode`` is "auto", "dense", or "sparse"; a dense view larger than
    ``memory_budget`` bytes is fatal in "dense" mode and silently becomes
    base-plus-sparse in "auto".
    """
    v = matrix.size
    dense_bytes = v * v * 8
    if mode not in ("auto", "dense", "sparse"):
        raise ValueError(f"unknown mode {mode!r}")
    want_dense = mode == "dense" or (mode == "auto" and dense_bytes <= memory_budget)
    if mode == "dense" and dense_bytes > memory_budget:
        raise MemoryBudgetError(
            f"dense similarity needs {dense_bytes} bytes but the budget is {memory_budget}"
        )

    base = float(_transform(matrix.default_value, transform))
    coo = matrix._upper.tocoo()
    vals = _transform(coo.data - _SHIFT, transform) - base
    diag_vals = np.where(matrix.active, _transform(1.0, transform) - base, 0.0)

    if want_dense:
        out = np.full((v, v), base, dtype=np.float64)
        out[coo.row, coo.col] += vals
        out[coo.col, coo.row] += vals
        out[np.diag_indices(v)] += diag_vals
        return DenseSimilarity(out)

    sym = sp.coo_matrix(
        (
            np.concatenate([vals, vals, diag_vals[matrix.active]]),
            (
                np.concatenate([coo.row, coo.col, np.flatnonzero(matrix.active)]),
                np.concatenate([coo.col, coo.row, np.flatnonzero(matrix.active)]),
            ),
        ),
        shape=(v, v),
    ).tocsr()
    return BaseOffsetSimilarity(base, sym)


def dense_exp_view(matrix: NpmiMatrix, mode: str = "auto",
                   memory_budget: int = DEFAULT_MEMORY_BUDGET):
    """The exp(NPMI) similarity the regularizer multiplies against."""
    return similarity_view(matrix, transform="exp", mode=mode, memory_budget=memory_budget)
