"""Ingestion, filtering, and archive round-trip tests."""

import gzip
import hashlib
import json
from collections import Counter

import numpy as np
import pytest

from contopic.corpus import (
    BowCorpus,
    CorpusError,
    PreprocessConfig,
    corpus_stats,
    ingest_raw,
    ingest_uci,
    load_corpus,
    save_corpus,
    tokenize,
)

PERMISSIVE = PreprocessConfig(max_df_fraction=1.0, min_df_docs=1, split_seed=7)

# Six synthetic documents over a small vocabulary; "zebra" appears in one
# document only, everything else in at least two.
SIX_DOCS = [
    ("d1", "apple banana apple"),
    ("d2", "banana cherry"),
    ("d3", "apple cherry cherry"),
    ("d4", "banana banana date"),
    ("d5", "date cherry"),
    ("d6", "apple date zebra"),
]


def write_jsonl(path, docs, **extra_fields):
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, text in docs:
            obj = {"id": doc_id, "text": text}
            obj.update({k: v(doc_id) for k, v in extra_fields.items()})
            fh.write(json.dumps(obj) + "\n")


class TestTokenizer:
    def test_lowercase_and_alpha_runs(self):
        assert tokenize("Hello, WORLD! it's 42 re-do") == ["hello", "world", "it", "s", "re", "do"]

    def test_non_alpha_only(self):
        assert tokenize("123 !!! ...") == []


class TestIngestRaw:
    def test_min_df_filter_matches_hand_count(self, tmp_path):
        # hand-counted document frequencies: apple 3, banana 3, cherry 3,
        # date 3, zebra 1 -> min_df_docs=2 keeps exactly the first four
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, SIX_DOCS)
        cfg = PreprocessConfig(max_df_fraction=1.0, min_df_docs=2, split_seed=1)
        corpus = ingest_raw([path], stopword_list=set(), config=cfg)
        assert corpus.vocabulary.words == ["apple", "banana", "cherry", "date"]
        np.testing.assert_array_equal(corpus.vocabulary.doc_freq, [3, 3, 3, 3])
        assert corpus.vocabulary.corpus_doc_count == 6

    def test_all_stopwords_is_fatal_naming_filter(self, tmp_path):
        path = tmp_path / "one.jsonl"
        write_jsonl(path, [("d1", "the the the")])
        with pytest.raises(CorpusError, match="stopword"):
            ingest_raw([path], stopword_list={"the"}, config=PERMISSIVE)

    def test_max_df_removal(self, tmp_path):
        # "apple" sits in 4 of 5 docs; a 0.7 cap removes it
        suffixes = ["wa", "wb", "wc", "wd"]
        docs = [(f"d{i}", f"apple extra {s} {s}") for i, s in enumerate(suffixes)]
        docs.append(("d4", "extra wa wa"))
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, docs)
        cfg = PreprocessConfig(max_df_fraction=0.7, min_df_docs=1, split_seed=1)
        corpus = ingest_raw([path], stopword_list=set(), config=cfg)
        assert "apple" not in corpus.vocabulary.words
        assert "extra" not in corpus.vocabulary.words  # 5/5 docs, also above cap
        assert "wa" in corpus.vocabulary.words

    def test_short_documents_dropped(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, [("d1", "alpha beta gamma"), ("d2", "alpha")])
        corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
        ids = {d.id for d in corpus.all_docs()}
        assert ids == {"d1"}

    def test_malformed_jsonl_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a", "text": "x y"}\nnot json\n')
        with pytest.raises(CorpusError, match=r"bad\.jsonl:2"):
            ingest_raw([path], stopword_list=set(), config=PERMISSIVE)

    def test_explicit_split_tags_honored(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        split = {"d1": "train", "d2": "test", "d3": "train", "d4": "train", "d5": "test", "d6": "train"}
        write_jsonl(path, SIX_DOCS, split=lambda i: split[i])
        corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
        assert {d.id for d in corpus.train_docs} == {"d1", "d3", "d4", "d6"}
        assert {d.id for d in corpus.test_docs} == {"d2", "d5"}

    def test_labels_carried_through(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, SIX_DOCS, label=lambda i: "fruit" if i < "d4" else "other")
        corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
        assert corpus.labels is not None
        assert set(corpus.labels) == {d.id for d in corpus.all_docs()}

    def test_seeded_split_ratio(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, SIX_DOCS)
        cfg = PreprocessConfig(max_df_fraction=1.0, min_df_docs=1, split_ratio=0.5, split_seed=3)
        corpus = ingest_raw([path], stopword_list=set(), config=cfg)
        assert len(corpus.train_docs) == 3
        assert len(corpus.test_docs) == 3


class TestIngestUci:
    def write_uci(self, tmp_path, docword, vocab):
        dw = tmp_path / "docword.txt"
        vb = tmp_path / "vocab.txt"
        dw.write_text(docword)
        vb.write_text(vocab)
        return dw, vb

    def test_direct_load(self, tmp_path):
        dw, vb = self.write_uci(tmp_path, "2 3 3\n1 1 2\n1 2 1\n2 3 5\n", "aa\nbb\ncc\n")
        corpus = ingest_uci(dw, vb, config=PERMISSIVE)
        docs = {d.id: d for d in corpus.all_docs()}
        assert len(docs) == 2
        totals = sorted(d.total_tokens for d in docs.values())
        assert totals == [3, 5]

    def test_word_id_out_of_range(self, tmp_path):
        dw, vb = self.write_uci(tmp_path, "2 3 3\n1 1 2\n1 2 1\n2 4 5\n", "aa\nbb\ncc\n")
        with pytest.raises(CorpusError, match="wordId"):
            ingest_uci(dw, vb, config=PERMISSIVE)

    def test_triple_count_mismatch(self, tmp_path):
        dw, vb = self.write_uci(tmp_path, "2 3 4\n1 1 2\n1 2 1\n2 3 5\n", "aa\nbb\ncc\n")
        with pytest.raises(CorpusError, match="promises 4"):
            ingest_uci(dw, vb, config=PERMISSIVE)

    def test_header_on_three_lines(self, tmp_path):
        dw, vb = self.write_uci(tmp_path, "2\n3\n3\n1 1 2\n1 2 1\n2 3 5\n", "aa\nbb\ncc\n")
        corpus = ingest_uci(dw, vb, config=PERMISSIVE)
        assert len(corpus.all_docs()) == 2

    def test_vocab_order_preserved(self, tmp_path):
        dw, vb = self.write_uci(
            tmp_path, "2 3 4\n1 3 2\n1 1 1\n2 1 2\n2 3 1\n", "zz\nmm\naa\n"
        )
        corpus = ingest_uci(dw, vb, config=PERMISSIVE)
        assert corpus.vocabulary.words == ["zz", "aa"]  # mm never occurs

    def test_labels_file(self, tmp_path):
        dw, vb = self.write_uci(tmp_path, "2 3 4\n1 1 2\n1 2 1\n2 3 5\n2 1 1\n", "aa\nbb\ncc\n")
        lab = tmp_path / "labels.txt"
        lab.write_text("sports\npolitics\n")
        corpus = ingest_uci(dw, vb, labels_path=lab, config=PERMISSIVE)
        assert sorted(corpus.labels.values()) == ["politics", "sports"]


class TestCorpusStats:
    def test_two_doc_average(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, [("a", "x x y"), ("b", "x y y z z")])
        corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
        stats = corpus_stats(corpus)
        assert stats.avg_doc_tokens == 4.0
        assert stats.total_tokens == 8

    def test_totals_match_hand_count(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, SIX_DOCS)
        corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
        # oracle: re-count tokens over the retained docs directly
        expected = sum(int(d.counts.sum()) for d in corpus.all_docs())
        stats = corpus_stats(corpus)
        assert stats.total_tokens == expected
        assert stats.vocab_size == len(corpus.vocabulary)


class TestFilterSoundness:
    def test_brute_force_recount(self, tmp_path):
        # randomized corpora; recount df by brute force and check the band
        rng = np.random.default_rng(42)
        words = ["".join(p) for p in zip("aabbccddeeff", "stustustustu")]
        for trial in range(10):
            docs = []
            for d in range(20):
                n = rng.integers(2, 8)
                toks = rng.choice(words, size=n)
                docs.append((f"doc{d}", " ".join(toks)))
            path = tmp_path / f"r{trial}.jsonl"
            write_jsonl(path, docs)
            cfg = PreprocessConfig(max_df_fraction=0.6, min_df_docs=2, split_seed=0)
            try:
                corpus = ingest_raw([path], stopword_list=set(), config=cfg)
            except CorpusError:
                continue  # a draw can legitimately empty the corpus
            # oracle: recount presence over the full ingest set
            presence = Counter()
            for _, text in docs:
                presence.update(set(text.split()))
            for w, df in zip(corpus.vocabulary.words, corpus.vocabulary.doc_freq):
                assert presence[w] == df
                assert cfg.min_df_docs <= df <= cfg.max_df_fraction * 20


class TestArchive:
    def roundtrip(self, corpus, path):
        save_corpus(corpus, path)
        return load_corpus(path)

    def test_roundtrip_identity(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, SIX_DOCS, label=lambda i: "a" if i <= "d3" else "b")
        corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
        loaded = self.roundtrip(corpus, tmp_path / "corpus.bow")
        assert loaded.vocabulary.words == corpus.vocabulary.words
        np.testing.assert_array_equal(loaded.vocabulary.doc_freq, corpus.vocabulary.doc_freq)
        assert [d.id for d in loaded.train_docs] == [d.id for d in corpus.train_docs]
        assert [d.id for d in loaded.test_docs] == [d.id for d in corpus.test_docs]
        for a, b in zip(loaded.all_docs(), corpus.all_docs()):
            np.testing.assert_array_equal(a.indices, b.indices)
            np.testing.assert_array_equal(a.counts, b.counts)
        assert loaded.labels == corpus.labels
        assert loaded.config == corpus.config

    def test_save_load_save_is_byte_identical(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, SIX_DOCS)
        corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
        p1, p2 = tmp_path / "c1.bow", tmp_path / "c2.bow"
        save_corpus(corpus, p1)
        save_corpus(load_corpus(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_identical_inputs_identical_bytes(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, SIX_DOCS)
        digests = []
        for name in ("a.bow", "b.bow"):
            corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
            save_corpus(corpus, tmp_path / name)
            digests.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_gzip_archive(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, SIX_DOCS)
        corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
        gz = tmp_path / "corpus.bow.gz"
        save_corpus(corpus, gz)
        with gzip.open(gz, "rb") as fh:
            assert fh.read().startswith(b"BOWCORPUS v1")
        loaded = load_corpus(gz)
        assert loaded.vocabulary.words == corpus.vocabulary.words

    def test_truncated_archive_rejected(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        write_jsonl(path, SIX_DOCS)
        corpus = ingest_raw([path], stopword_list=set(), config=PERMISSIVE)
        out = tmp_path / "c.bow"
        save_corpus(corpus, out)
        out.write_bytes(out.read_bytes()[:-30])
        with pytest.raises(CorpusError):
            load_corpus(out)
