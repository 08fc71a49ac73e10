"""Synthetic corpus generator tests: exact gold recovery, determinism, stats."""

import numpy as np
import pytest

from synmatch.synonyms import CodeEntry
from synmatch.synthgen import (SynthConfig, build_dictionary, generate,
                               oracle_labels, write_corpus_files)
from synmatch.rng import Rng
from synmatch.text import tokenize


def small_config(**overrides):
    base = dict(num_codes=8, synonyms_per_code=2, filler_vocab=60,
                doc_len_min=20, doc_len_max=40, codes_per_doc_min=1,
                codes_per_doc_max=3, train_size=30, dev_size=10, test_size=10,
                synonym_usage=0.7, seed=0)
    base.update(overrides)
    return SynthConfig(**base)


class TestDictionary:
    def test_shape_of_entries(self):
        entries = build_dictionary(small_config(), Rng(0))
        assert len(entries) == 8
        for e in entries:
            assert len(e.synonyms) == 2
            assert 1 <= len(e.description.split()) <= 2
            for s in e.synonyms:
                assert 2 <= len(s.split()) <= 3

    def test_no_token_shared_between_surfaces(self):
        entries = build_dictionary(small_config(num_codes=20), Rng(1))
        seen = set()
        for e in entries:
            for term in e.pool:
                for tok in term.split():
                    assert tok not in seen
                    seen.add(tok)

    def test_tokens_survive_tokenizer(self):
        entries = build_dictionary(small_config(), Rng(2))
        for e in entries:
            for term in e.pool:
                assert tokenize(term) == term.split()


class TestGenerate:
    def test_gold_equals_planted_and_recovered(self):
        corpus = generate(small_config())
        for split in (corpus.train, corpus.dev, corpus.test):
            for rec in split:
                assert oracle_labels(rec.text, corpus.entries) == set(rec.codes)

    def test_split_sizes(self):
        corpus = generate(small_config())
        assert (len(corpus.train), len(corpus.dev), len(corpus.test)) == (30, 10, 10)

    def test_same_seed_identical_bytes(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        write_corpus_files(generate(small_config(seed=7)), a_dir)
        write_corpus_files(generate(small_config(seed=7)), b_dir)
        for name in ("dictionary.jsonl", "train.jsonl", "dev.jsonl", "test.jsonl"):
            assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()

    def test_different_seeds_differ(self):
        a = generate(small_config(seed=1))
        b = generate(small_config(seed=2))
        assert a.train[0].text != b.train[0].text

    def test_lengths_and_codes_within_ranges(self):
        config = small_config(train_size=100)
        corpus = generate(config)
        lengths = [len(tokenize(r.text)) for r in corpus.train]
        n_codes = [len(r.codes) for r in corpus.train]
        # mentions can push a few tokens past the target; bound loosely above
        assert min(lengths) >= config.doc_len_min - 1
        assert max(lengths) <= config.doc_len_max + 3 * config.codes_per_doc_max
        assert min(n_codes) >= config.codes_per_doc_min
        assert max(n_codes) <= config.codes_per_doc_max
        assert config.doc_len_min <= np.mean(lengths) <= config.doc_len_max

    def test_description_only_usage(self):
        # usage 0 => no synonym string ever appears; descriptions carry all info
        corpus = generate(small_config(synonym_usage=0.0, train_size=40))
        syn_tokens = {tok for e in corpus.entries for s in e.synonyms
                      for tok in s.split()}
        for rec in corpus.train:
            assert not syn_tokens.intersection(tokenize(rec.text))

    def test_mostly_synonym_usage(self):
        corpus = generate(small_config(synonym_usage=1.0, train_size=40))
        desc_tokens = {tok for e in corpus.entries for tok in e.description.split()}
        hits = sum(bool(desc_tokens.intersection(tokenize(r.text)))
                   for r in corpus.train)
        # only codes without synonyms would fall back to the description
        assert hits == 0

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError, match="codes_per_doc_max"):
            generate(small_config(codes_per_doc_max=50))
        with pytest.raises(ValueError):
            generate(small_config(doc_len_min=0))
        with pytest.raises(ValueError):
            generate(small_config(synonym_usage=1.5))


class TestOracle:
    def test_empty_text_empty_set(self):
        entries = [CodeEntry("C1", "fever chills")]
        assert oracle_labels("", entries) == set()

    def test_planted_synonym_recovers_code(self):
        entries = [CodeEntry("244.9", "Unspecified hypothyroidism", ["low t4"])]
        assert oracle_labels("patient shows low t4 today", entries) == {"244.9"}

    def test_overlapping_mentions_both_found(self):
        entries = [CodeEntry("A", "chronic kidney disease"),
                   CodeEntry("B", "kidney disease")]
        text = "history of chronic kidney disease noted"
        assert oracle_labels(text, entries) == {"A", "B"}

    def test_partial_phrase_not_matched(self):
        entries = [CodeEntry("A", "chronic kidney disease")]
        assert oracle_labels("chronic kidney problems", entries) == set()

    def test_oracle_is_superset_of_gold_on_generated_corpus(self):
        corpus = generate(small_config(seed=3))
        for rec in corpus.train:
            assert oracle_labels(rec.text, corpus.entries) >= set(rec.codes)
