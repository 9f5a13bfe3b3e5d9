"""Corpus ingestion: tokenization, frequency filtering, splits, archives.

The preprocessing pipeline is fixed and documented so runs are reproducible:
lowercase, split on runs of non-alphabetic characters, remove stopwords,
then drop words outside the document-frequency band and documents left with
fewer than two tokens. Document frequencies are computed once, on the
post-stopword corpus, and retained as vocabulary metadata.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_TOKEN_RE = re.compile(r"[a-z]+")

ARCHIVE_MAGIC = "BOWCORPUS v1"


class CorpusError(ValueError):
    """Raised for malformed inputs or filters that empty the corpus."""


@dataclass
class PreprocessConfig:
    """Filter and split settings applied at ingest time."""

    max_df_fraction: float = 0.70
    min_df_docs: int = 100
    split_ratio: float = 0.6  # train share when documents carry no split tag
    split_seed: int = 0
    min_doc_tokens: int = 2

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PreprocessConfig":
        return cls(**json.loads(text))


@dataclass
class Vocabulary:
    """Ordered word list; the index of a word is stable once built.

    ``doc_freq`` holds the document frequencies measured on the
    post-stopword ingest corpus of ``corpus_doc_count`` documents, i.e. the
    values the min/max-df filters were applied to.
    """

    words: list
    doc_freq: np.ndarray
    corpus_doc_count: int
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.doc_freq = np.asarray(self.doc_freq, dtype=np.int64)
        if len(self.words) != len(set(self.words)):
            raise CorpusError("vocabulary words are not unique")
        if len(self.words) != self.doc_freq.shape[0]:
            raise CorpusError("vocabulary words and doc_freq lengths differ")
        self._index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index(self, word: str) -> int:
        return self._index[word]

    def hash_hex(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.corpus_doc_count).encode())
        for w, df in zip(self.words, self.doc_freq):
            h.update(f"\n{w}\t{int(df)}".encode())
        return h.hexdigest()


@dataclass
class BowDocument:
    """Sparse word-count vector; indices are sorted and unique."""

    id: str
    indices: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def total_tokens(self) -> int:
        return int(self.counts.sum())

    def dense(self, vocab_size: int) -> np.ndarray:
        x = np.zeros(vocab_size, dtype=np.float64)
        x[self.indices] = self.counts
        return x


@dataclass
class BowCorpus:
    vocabulary: Vocabulary
    train_docs: list
    test_docs: list
    labels: dict | None  # doc id -> class identifier, covering every doc
    config: PreprocessConfig

    def all_docs(self):
        return list(self.train_docs) + list(self.test_docs)

    def validate(self) -> None:
        """Check the structural invariants; raises CorpusError on violation."""
        train_ids = {d.id for d in self.train_docs}
        test_ids = {d.id for d in self.test_docs}
        if train_ids & test_ids:
            raise CorpusError("train and test document ids overlap")
        v = len(self.vocabulary)
        for doc in self.all_docs():
            if doc.total_tokens < self.config.min_doc_tokens:
                raise CorpusError(f"document {doc.id!r} is shorter than two words")
            if doc.indices.size and (doc.indices.min() < 0 or doc.indices.max() >= v):
                raise CorpusError(f"document {doc.id!r} has out-of-range word indices")
            if np.any(np.diff(doc.indices) <= 0):
                raise CorpusError(f"document {doc.id!r} indices are not sorted unique")
        df = self.vocabulary.doc_freq
        if np.any(df <= 0) or np.any(df > self.vocabulary.corpus_doc_count):
            raise CorpusError("doc_freq outside (0, corpus_doc_count]")
        if self.labels is not None:
            ids = train_ids | test_ids
            if set(self.labels) != ids:
                raise CorpusError("labels do not cover every document exactly once")


@dataclass
class StatsSummary:
    d_train: int
    d_test: int
    vocab_size: int
    avg_doc_tokens: float
    total_tokens: int


def tokenize(text: str) -> list:
    """Lowercase and split on runs of non-alphabetic characters."""
    return _TOKEN_RE.findall(text.lower())


def load_stopwords(path) -> set:
    """Plain text stopword list, one word per line."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = line.strip()
            if word:
                words.add(word)
    return words


# ---------------------------------------------------------------------------
# Shared filtering pipeline (array-based so large UCI corpora stay cheap)
# ---------------------------------------------------------------------------


def _check_doc_id(doc_id: str) -> str:
    if "\t" in doc_id or "\n" in doc_id or "\r" in doc_id:
        raise CorpusError(f"document id {doc_id!r} contains tab or newline")
    return doc_id


def _aggregate(doc_idx, word_idx, counts):
    """Sum duplicate (doc, word) pairs; returns arrays sorted by doc then word."""
    order = np.lexsort((word_idx, doc_idx))
    d, w, c = doc_idx[order], word_idx[order], counts[order]
    if d.size == 0:
        return d, w, c
    new = np.empty(d.size, dtype=bool)
    new[0] = True
    new[1:] = (d[1:] != d[:-1]) | (w[1:] != w[:-1])
    starts = np.flatnonzero(new)
    sums = np.add.reduceat(c, starts)
    return d[starts], w[starts], sums


def _build_corpus(ids, labels, splits, entries, word_table, stopwords,
                  cfg: PreprocessConfig, preserve_word_order: bool) -> BowCorpus:
    """Filter aggregated (doc, word, count) entries into a BowCorpus.

    ``word_table`` is the raw pre-filter word list the entry indices refer
    to. UCI ingestion preserves its order in the final vocabulary; raw-text
    ingestion sorts the surviving words lexicographically.
    """
    n_docs = len(ids)
    if n_docs == 0:
        raise CorpusError("no documents to ingest")
    if len(set(ids)) != n_docs:
        dup = Counter(ids).most_common(1)[0][0]
        raise CorpusError(f"duplicate document id {dup!r}")
    for doc_id in ids:
        _check_doc_id(doc_id)

    d, w, c = _aggregate(*entries)
    n_words = len(word_table)

    stopwords = set(stopwords or ())
    if stopwords:
        stop = np.fromiter((word in stopwords for word in word_table), dtype=bool, count=n_words)
        keep = ~stop[w]
        d, w, c = d[keep], w[keep], c[keep]
    if d.size == 0:
        raise CorpusError("corpus is empty after filtering: stopword list removed every token")

    # Document frequencies over the post-stopword corpus; entries are unique
    # per (doc, word), so presence counts fall out of bincount directly.
    df = np.bincount(w, minlength=n_words)
    present = df > 0
    after_max = present & (df <= cfg.max_df_fraction * n_docs)
    if not after_max.any():
        raise CorpusError(
            "corpus is empty after filtering: max_df_fraction "
            f"{cfg.max_df_fraction} removed every word"
        )
    retained = after_max & (df >= cfg.min_df_docs)
    if not retained.any():
        raise CorpusError(
            f"corpus is empty after filtering: min_df_docs {cfg.min_df_docs} removed every word"
        )
    keep = retained[w]
    d, w, c = d[keep], w[keep], c[keep]

    totals = np.bincount(d, weights=c.astype(np.float64), minlength=n_docs)
    doc_keep = totals >= cfg.min_doc_tokens
    if not doc_keep.any():
        raise CorpusError(
            "corpus is empty after filtering: every document fell below "
            f"{cfg.min_doc_tokens} tokens"
        )
    keep = doc_keep[d]
    d, w, c = d[keep], w[keep], c[keep]

    # Words whose every occurrence sat in dropped documents vanish too.
    seen = np.zeros(n_words, dtype=bool)
    seen[w] = True
    final_mask = retained & seen
    final_raw = np.flatnonzero(final_mask)
    if not preserve_word_order:
        final_raw = final_raw[np.argsort(np.array([word_table[i] for i in final_raw]))]
    remap = np.full(n_words, -1, dtype=np.int64)
    remap[final_raw] = np.arange(final_raw.size)

    vocab = Vocabulary(
        words=[word_table[i] for i in final_raw],
        doc_freq=df[final_raw],
        corpus_doc_count=n_docs,
    )

    # Slice the entry arrays per document (they are sorted by doc already).
    w = remap[w]
    kept_doc_positions = np.flatnonzero(doc_keep)
    doc_starts = np.searchsorted(d, kept_doc_positions, side="left")
    doc_ends = np.searchsorted(d, kept_doc_positions, side="right")
    docs = []
    for pos, lo, hi in zip(kept_doc_positions, doc_starts, doc_ends):
        idx = w[lo:hi]
        order = np.argsort(idx)
        docs.append(
            (
                BowDocument(id=ids[pos], indices=idx[order], counts=c[lo:hi][order]),
                labels[pos],
                splits[pos],
            )
        )

    # Split assignment: explicit tags when every document carries one,
    # otherwise a uniform seeded shuffle at the configured ratio.
    tags = [s for _, _, s in docs]
    if any(s is not None for s in tags):
        if any(s is None for s in tags):
            raise CorpusError("split tags must cover all documents or none")
        bad = {s for s in tags if s not in ("train", "test")}
        if bad:
            raise CorpusError(f"unknown split tag {bad.pop()!r}")
        train = [doc for doc, _, s in docs if s == "train"]
        test = [doc for doc, _, s in docs if s == "test"]
    else:
        rng = np.random.default_rng(cfg.split_seed)
        perm = rng.permutation(len(docs))
        n_train = int(round(cfg.split_ratio * len(docs)))
        train = [docs[i][0] for i in np.sort(perm[:n_train])]
        test = [docs[i][0] for i in np.sort(perm[n_train:])]

    label_map = {doc.id: lab for doc, lab, _ in docs if lab is not None}
    if label_map and len(label_map) != len(docs):
        raise CorpusError("labels must cover all documents or none")

    corpus = BowCorpus(
        vocabulary=vocab,
        train_docs=train,
        test_docs=test,
        labels=label_map or None,
        config=cfg,
    )
    corpus.validate()
    return corpus


class _RawAccumulator:
    """Collects tokenized documents into the array form the pipeline wants."""

    def __init__(self):
        self.ids = []
        self.labels = []
        self.splits = []
        self.word_index = {}
        self.word_table = []
        self._docs = []
        self._words = []
        self._counts = []

    def add(self, doc_id, token_counts: Counter, label, split):
        pos = len(self.ids)
        self.ids.append(doc_id)
        self.labels.append(label)
        self.splits.append(split)
        for word, count in token_counts.items():
            idx = self.word_index.get(word)
            if idx is None:
                idx = len(self.word_table)
                self.word_index[word] = idx
                self.word_table.append(word)
            self._docs.append(pos)
            self._words.append(idx)
            self._counts.append(count)

    def entries(self):
        return (
            np.array(self._docs, dtype=np.int64),
            np.array(self._words, dtype=np.int64),
            np.array(self._counts, dtype=np.int64),
        )


# ---------------------------------------------------------------------------
# Ingestion entry points
# ---------------------------------------------------------------------------


def _read_jsonl(path, acc: _RawAccumulator) -> None:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSONL line: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise CorpusError(f'{path}:{lineno}: JSONL object needs "id" and "text" fields')
            acc.add(
                str(obj["id"]),
                Counter(tokenize(str(obj["text"]))),
                None if obj.get("label") is None else str(obj["label"]),
                None if obj.get("split") is None else str(obj["split"]),
            )


def _read_plain(path, acc: _RawAccumulator) -> None:
    stem = Path(path).stem
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                acc.add(f"{stem}:{lineno}", Counter(tokenize(line)), None, None)


def ingest_raw(paths, stopword_list, config: PreprocessConfig | None = None) -> BowCorpus:
    """Ingest raw text into a filtered, split BowCorpus.

    Files ending in .jsonl/.json hold one {"id", "text"} object per line
    (optional "label" and "split" fields are honored); any other extension
    is treated as plain text with one document per line.
    """
    cfg = config or PreprocessConfig()
    acc = _RawAccumulator()
    for path in paths:
        if Path(path).suffix.lower() in (".jsonl", ".json"):
            _read_jsonl(path, acc)
        else:
            _read_plain(path, acc)
    return _build_corpus(
        acc.ids, acc.labels, acc.splits, acc.entries(), acc.word_table,
        stopword_list, cfg, preserve_word_order=False,
    )


def _read_uci_triples(fh, nnz: int, path):
    """Parse NNZ whitespace-separated integer triples, memory-frugally.

    Uses pandas when available (fast C parser, no per-token Python objects);
    falls back to a streaming token parse for odd layouts.
    """
    start = fh.tell()
    flat = None
    try:
        import pandas as pd

        frame = pd.read_csv(fh, sep=r"\s+", header=None, dtype=np.int64, engine="c")
        flat = frame.to_numpy().reshape(-1)
    except Exception:
        flat = None
    if flat is None:
        fh.seek(start)
        try:
            flat = np.fromiter(
                (int(tok) for line in fh for tok in line.split()), dtype=np.int64
            )
        except ValueError as exc:
            raise CorpusError(f"{path}: non-integer triple data: {exc}") from exc
    if flat.size != 3 * nnz:
        raise CorpusError(
            f"{path}: header promises {nnz} triples but file contains {flat.size // 3}"
        )
    return flat[0::3].copy(), flat[1::3].copy(), flat[2::3].copy()


def ingest_uci(docword_path, vocab_path, labels_path=None, config: PreprocessConfig | None = None,
               stopword_list=None) -> BowCorpus:
    """Load a UCI bag-of-words pair (docword + vocab) and run the same filters.

    The docword file starts with the three integers D, W, NNZ (on one line
    or three) followed by NNZ whitespace-separated "docId wordId count"
    triples, all 1-indexed.
    """
    cfg = config or PreprocessConfig()

    words = []
    with open(vocab_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            word = line.strip()
            if not word:
                raise CorpusError(f"{vocab_path}:{lineno}: empty vocabulary line")
            words.append(word)

    with open(docword_path, encoding="utf-8") as fh:
        header = []
        while len(header) < 3:
            line = fh.readline()
            if not line:
                raise CorpusError(f"{docword_path}: missing D/W/NNZ header")
            try:
                header.extend(int(t) for t in line.split())
            except ValueError as exc:
                raise CorpusError(f"{docword_path}: non-integer header: {exc}") from exc
        if len(header) > 3:
            raise CorpusError(f"{docword_path}: header holds more than three integers")
        d_total, w_total, nnz = header
        if w_total != len(words):
            raise CorpusError(
                f"{docword_path}: header W={w_total} but vocabulary file has {len(words)} words"
            )
        doc_ids, word_ids, counts = _read_uci_triples(fh, nnz, docword_path)

    for name, arr, upper in (("docId", doc_ids, d_total), ("wordId", word_ids, w_total)):
        bad = np.flatnonzero((arr < 1) | (arr > upper))
        if bad.size:
            k = int(bad[0])
            raise CorpusError(
                f"{docword_path}: triple #{k + 1} ({doc_ids[k]} {word_ids[k]} {counts[k]}) "
                f"has {name} outside 1..{upper}"
            )
    bad = np.flatnonzero(counts < 1)
    if bad.size:
        k = int(bad[0])
        raise CorpusError(f"{docword_path}: triple #{k + 1} has non-positive count")

    labels = None
    if labels_path is not None:
        with open(labels_path, encoding="utf-8") as fh:
            labels = [line.strip() for line in fh if line.strip()]
        if len(labels) != d_total:
            raise CorpusError(f"{labels_path}: {len(labels)} labels for {d_total} documents")

    width = len(str(d_total))
    ids = [f"doc{i + 1:0{width}d}" for i in range(d_total)]
    return _build_corpus(
        ids,
        labels if labels else [None] * d_total,
        [None] * d_total,
        (doc_ids - 1, word_ids - 1, counts),
        words,
        stopword_list,
        cfg,
        preserve_word_order=True,
    )


def corpus_stats(corpus: BowCorpus) -> StatsSummary:
    """Document counts, vocabulary size, and token totals."""
    docs = corpus.all_docs()
    if not docs:
        raise CorpusError("corpus has no documents")
    totals = [d.total_tokens for d in docs]
    return StatsSummary(
        d_train=len(corpus.train_docs),
        d_test=len(corpus.test_docs),
        vocab_size=len(corpus.vocabulary),
        avg_doc_tokens=float(np.mean(totals)),
        total_tokens=int(np.sum(totals)),
    )


# ---------------------------------------------------------------------------
# Archive format (documented byte-exactly in the README)
# ---------------------------------------------------------------------------


def _open_for_write(path):
    if str(path).endswith(".gz"):
        return gzip.GzipFile(path, "wb", mtime=0)  # fixed mtime keeps digests stable
    return open(path, "wb")


def _open_for_read(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def save_corpus(corpus: BowCorpus, path) -> None:
    """Write the corpus archive; identical corpora produce identical bytes."""
    lines = [ARCHIVE_MAGIC, "CONFIG " + corpus.config.to_json()]
    lines.append(f"DOCCOUNT {corpus.vocabulary.corpus_doc_count}")
    lines.append(f"VOCAB {len(corpus.vocabulary)}")
    for w, df in zip(corpus.vocabulary.words, corpus.vocabulary.doc_freq):
        lines.append(f"{w}\t{int(df)}")
    lines.append(f"LABELS {1 if corpus.labels else 0}")
    lines.append(f"TRAIN {len(corpus.train_docs)}")
    lines.append(f"TEST {len(corpus.test_docs)}")
    for split, docs in (("train", corpus.train_docs), ("test", corpus.test_docs)):
        for doc in docs:
            label = corpus.labels[doc.id] if corpus.labels else ""
            pairs = " ".join(f"{int(i)}:{int(c)}" for i, c in zip(doc.indices, doc.counts))
            lines.append(f"DOC\t{split}\t{doc.id}\t{label}\t{pairs}")
    lines.append("END")
    with _open_for_write(path) as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))


def load_corpus(path) -> BowCorpus:
    """Read a corpus archive, validating structure and invariants."""
    with _open_for_read(path) as fh:
        text = fh.read().decode("utf-8")
    lines = text.splitlines()
    it = iter(enumerate(lines, start=1))

    def next_line():
        try:
            return next(it)
        except StopIteration:
            raise CorpusError(f"{path}: truncated archive") from None

    def expect(prefix):
        lineno, line = next_line()
        if not line.startswith(prefix):
            raise CorpusError(f"{path}:{lineno}: expected {prefix!r}, found {line[:40]!r}")
        return line[len(prefix):].strip()

    _, magic = next_line()
    if magic != ARCHIVE_MAGIC:
        raise CorpusError(f"{path}: not a corpus archive (bad magic {magic[:40]!r})")
    cfg = PreprocessConfig.from_json(expect("CONFIG "))
    doc_count = int(expect("DOCCOUNT "))
    v = int(expect("VOCAB "))
    words, dfs = [], []
    for _ in range(v):
        lineno, line = next_line()
        try:
            word, df = line.split("\t")
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: malformed vocabulary line") from None
        words.append(word)
        dfs.append(int(df))
    vocab = Vocabulary(words=words, doc_freq=np.array(dfs, dtype=np.int64), corpus_doc_count=doc_count)

    has_labels = expect("LABELS ") == "1"
    n_train = int(expect("TRAIN "))
    n_test = int(expect("TEST "))
    train, test = [], []
    labels = {} if has_labels else None
    for _ in range(n_train + n_test):
        lineno, line = next_line()
        parts = line.split("\t")
        if len(parts) != 5 or parts[0] != "DOC":
            raise CorpusError(f"{path}:{lineno}: malformed DOC line")
        _, split, doc_id, label, pairs = parts
        idx, cnt = [], []
        for pair in pairs.split():
            i, c = pair.split(":")
            idx.append(int(i))
            cnt.append(int(c))
        doc = BowDocument(id=doc_id, indices=np.array(idx, dtype=np.int64), counts=np.array(cnt, dtype=np.int64))
        (train if split == "train" else test).append(doc)
        if has_labels:
            labels[doc_id] = label
    lineno, line = next_line()
    if line != "END":
        raise CorpusError(f"{path}:{lineno}: missing END marker")
    if len(train) != n_train or len(test) != n_test:
        raise CorpusError(f"{path}: document counts disagree with header")

    corpus = BowCorpus(vocabulary=vocab, train_docs=train, test_docs=test, labels=labels, config=cfg)
    corpus.validate()
    return corpus
