"""Synthetic corpus generator with exact ground truth.

Documents are filler tokens with planted code mentions spliced in; a
document's gold label set is exactly the set of planted codes. Concept
vocabulary (description/synonym tokens) is disjoint from the filler
vocabulary, and no token appears in two different surface forms, so exact
string matching recovers the gold labels with no noise: the learnability
ceiling is 100%.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

from .errors import DataError
from .rng import Rng
from .synonyms import CodeEntry, write_dictionary
from .text import RawRecord, tokenize, write_corpus

_SYLLABLES = [
    "ba", "ce", "di", "fo", "gu", "ka", "lem", "mir", "nox", "pra",
    "qui", "rov", "sal", "tez", "ul", "vor", "wex", "yin", "zor", "hyl",
]


@dataclass
class SynthConfig:
    num_codes: int = 20
    synonyms_per_code: int = 3
    filler_vocab: int = 500
    doc_len_min: int = 80
    doc_len_max: int = 150
    codes_per_doc_min: int = 1
    codes_per_doc_max: int = 4
    train_size: int = 2000
    dev_size: int = 200
    test_size: int = 400
    synonym_usage: float = 0.7  # probability a mention uses a non-description synonym
    seed: int = 0

    def validate(self):
        if self.synonyms_per_code < 1 or self.num_codes < 1 or self.filler_vocab < 1:
            raise ValueError(f"invalid synthetic config: {self}")
        if not (0 < self.doc_len_min <= self.doc_len_max):
            raise ValueError(f"empty document length range: {self}")
        if not (1 <= self.codes_per_doc_min <= self.codes_per_doc_max):
            raise ValueError(f"empty codes-per-doc range: {self}")
        if self.codes_per_doc_max > self.num_codes:
            raise ValueError(
                f"codes_per_doc_max {self.codes_per_doc_max} exceeds num_codes {self.num_codes}")
        if min(self.train_size, self.dev_size, self.test_size) < 1:
            raise ValueError("split sizes must be positive")
        if not 0.0 <= self.synonym_usage <= 1.0:
            raise ValueError(f"synonym_usage must be in [0, 1], got {self.synonym_usage}")


@dataclass
class SynthCorpus:
    entries: list[CodeEntry]
    train: list[RawRecord]
    dev: list[RawRecord]
    test: list[RawRecord]
    config: SynthConfig


def _concept_word(rng: Rng, used: set[str]) -> str:
    while True:
        n = int(rng.integers(2, 4))
        word = "".join(_SYLLABLES[int(rng.integers(0, len(_SYLLABLES)))] for _ in range(n))
        if word not in used:
            used.add(word)
            return word


def build_dictionary(config: SynthConfig, rng: Rng) -> list[CodeEntry]:
    """One description (1-2 tokens) plus K synonyms (2-3 tokens) per code.

    Every token belongs to exactly one surface form of one code.
    """
    used: set[str] = set()
    entries = []
    for c in range(config.num_codes):
        desc_len = int(rng.integers(1, 3))
        description = " ".join(_concept_word(rng, used) for _ in range(desc_len))
        synonyms = []
        for _ in range(config.synonyms_per_code):
            syn_len = int(rng.integers(2, 4))
            synonyms.append(" ".join(_concept_word(rng, used) for _ in range(syn_len)))
        entries.append(CodeEntry(f"C{c:03d}", description, synonyms))
    return entries


def _filler_tokens(config: SynthConfig, entries) -> list[str]:
    fillers = [f"w{i:03d}" for i in range(config.filler_vocab)]
    concept = {tok for e in entries for term in e.pool for tok in term.split()}
    clash = concept.intersection(fillers)
    if clash:
        raise DataError(f"filler tokens collide with concept vocabulary: {sorted(clash)[:5]}")
    return fillers


def _make_document(doc_id: str, config: SynthConfig, entries, fillers, rng: Rng) -> RawRecord:
    n_codes = int(rng.integers(config.codes_per_doc_min, config.codes_per_doc_max + 1))
    picked = rng.choice(len(entries), size=n_codes, replace=False)
    mentions = []
    for idx in sorted(int(i) for i in picked):
        entry = entries[idx]
        if entry.synonyms and float(rng.uniform()) < config.synonym_usage:
            surface = entry.synonyms[int(rng.integers(0, len(entry.synonyms)))]
        else:
            surface = entry.description
        mentions.append((entry.code, surface.split()))

    target_len = int(rng.integers(config.doc_len_min, config.doc_len_max + 1))
    mention_tokens = sum(len(toks) for _, toks in mentions)
    n_filler = max(4, target_len - mention_tokens)
    body = [fillers[int(i)] for i in rng.integers(0, len(fillers), size=n_filler)]

    # mentions go into gaps between filler tokens so each stays contiguous
    by_gap: dict[int, list[list[str]]] = {}
    for _, toks in mentions:
        by_gap.setdefault(int(rng.integers(0, n_filler + 1)), []).append(toks)
    tokens: list[str] = []
    for pos in range(n_filler + 1):
        for toks in by_gap.get(pos, ()):
            tokens.extend(toks)
        if pos < n_filler:
            tokens.append(body[pos])
    return RawRecord(doc_id, " ".join(tokens), [code for code, _ in mentions])


def oracle_labels(text: str, entries) -> set[str]:
    """Codes whose description or any synonym occurs verbatim in the text.

    Exact contiguous token matching, independent of the model: used to
    validate generated gold labels and as a performance ceiling reference.
    """
    tokens = tokenize(text)
    index: dict[str, list[tuple[str, tuple]]] = {}
    for entry in entries:
        for term in entry.pool:
            toks = tuple(tokenize(term))
            if toks:
                index.setdefault(toks[0], []).append((entry.code, toks))
    found = set()
    for i, tok in enumerate(tokens):
        for code, toks in index.get(tok, ()):
            if code not in found and tuple(tokens[i:i + len(toks)]) == toks:
                found.add(code)
    return found


def generate(config: SynthConfig) -> SynthCorpus:
    """Build dictionary and train/dev/test splits; deterministic per seed."""
    config.validate()
    root = Rng(config.seed)
    entries = build_dictionary(config, root.child("dictionary"))
    fillers = _filler_tokens(config, entries)
    splits = {}
    for name, size in (("train", config.train_size), ("dev", config.dev_size),
                       ("test", config.test_size)):
        rng = root.child(f"split/{name}")
        records = [_make_document(f"{name}-{i:05d}", config, entries, fillers, rng)
                   for i in range(size)]
        for rec in records:
            recovered = oracle_labels(rec.text, entries)
            if recovered != set(rec.codes):
                raise DataError(
                    f"generated document {rec.id} is inconsistent: gold {sorted(rec.codes)} "
                    f"vs recovered {sorted(recovered)}")
        splits[name] = records
    return SynthCorpus(entries, splits["train"], splits["dev"], splits["test"], config)


def write_corpus_files(corpus: SynthCorpus, out_dir) -> dict[str, str]:
    """Write dictionary.jsonl, train/dev/test.jsonl and the generator config."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    paths["dictionary"] = os.path.join(out_dir, "dictionary.jsonl")
    write_dictionary(corpus.entries, paths["dictionary"])
    for split in ("train", "dev", "test"):
        paths[split] = os.path.join(out_dir, f"{split}.jsonl")
        write_corpus(getattr(corpus, split), paths[split])
    paths["config"] = os.path.join(out_dir, "generator.json")
    with open(paths["config"], "w", encoding="utf-8") as fh:
        json.dump(asdict(corpus.config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
