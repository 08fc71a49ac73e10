"""Code dictionary: load entries, expand surface-form variants, sample synonyms.

Dictionary file format: one JSON record per line with fields "code"
(string), "description" (string) and "synonyms" (array of strings).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .text import tokenize, truncate

SYNONYM_MAX_TOKENS = 32

_WS_RE = re.compile(r"\s+")


@dataclass
class CodeEntry:
    """A code with its canonical description and alternative surface forms.

    Synonyms are deduplicated case-insensitively and never repeat the
    description.
    """

    code: str
    description: str
    synonyms: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.description or not self.description.strip():
            raise DataError(f"code {self.code!r} has an empty description")
        seen = {self.description.lower()}
        deduped = []
        for s in self.synonyms:
            key = s.lower()
            if s.strip() and key not in seen:
                seen.add(key)
                deduped.append(s)
        self.synonyms = deduped

    @property
    def pool(self) -> list[str]:
        """Description plus synonyms: every surface form a sample may use."""
        return [self.description] + self.synonyms


def _collapse_ws(s: str) -> str:
    return _WS_RE.sub(" ", s).strip()


def _hyphen_variant(term: str):
    v = _collapse_ws(term.replace("-", " "))
    return v if v and v != term else None


def _nos_variant(term: str):
    kept = [w for w in term.split() if w.lower() != "nos"]
    v = _collapse_ws(" ".join(kept))
    return v if v and v != term else None


def normalize_entry(entry: CodeEntry) -> CodeEntry:
    """Expand each surface form with hyphen-free and NOS-free variants.

    For every term (description included), adds the variant with hyphens
    replaced by spaces, the variant with standalone "NOS" tokens dropped,
    and the combination, whenever they differ from the term itself.
    Idempotent: variants of variants are already present.
    """
    expanded = list(entry.synonyms)
    for term in entry.pool:
        for variant in _term_variants(term):
            expanded.append(variant)
    return CodeEntry(entry.code, entry.description, expanded)


def _term_variants(term: str) -> list[str]:
    variants = []
    hy = _hyphen_variant(term)
    if hy:
        variants.append(hy)
    nos = _nos_variant(term)
    if nos:
        variants.append(nos)
    if hy:
        both = _nos_variant(hy)
        if both:
            variants.append(both)
    return variants


@dataclass
class SynonymSample:
    """Exactly M surface forms drawn for a code (repeats allowed), tokenized."""

    code: str
    chosen: list[str]
    token_ids: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.chosen)


def sample_synonyms(entry: CodeEntry, m: int, rng, vocab=None,
                    max_tokens: int = SYNONYM_MAX_TOKENS) -> SynonymSample:
    """Draw M surface forms for a code.

    The description is always included. The remaining M-1 slots are drawn
    uniformly without replacement from the synonyms when the pool is large
    enough; otherwise the whole pool repeats round-robin until M forms are
    collected. With a fixed rng the choice is reproducible.
    """
    if m < 1:
        raise ValueError(f"synonym count must be >= 1, got {m}")
    pool = entry.pool
    if len(pool) >= m:
        picked = rng.choice(len(entry.synonyms), size=m - 1, replace=False) if m > 1 else []
        chosen = [entry.description] + [entry.synonyms[i] for i in picked]
    else:
        chosen = [pool[i % len(pool)] for i in range(m)]
    token_ids = []
    if vocab is not None:
        for term in chosen:
            toks = truncate(tokenize(term), max_tokens)
            token_ids.append(vocab.encode(toks))
    return SynonymSample(entry.code, chosen, token_ids)


def load_dictionary(path, normalize: bool = True) -> list[CodeEntry]:
    """Read a dictionary file; entries come back sorted by code id."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or not {"code", "description"} <= obj.keys():
                raise DataError(f"{path}:{lineno}: record needs 'code' and 'description'")
            code = str(obj["code"])
            if code in entries:
                raise DataError(f"{path}:{lineno}: duplicate code {code!r}")
            entry = CodeEntry(code, str(obj["description"]),
                              [str(s) for s in obj.get("synonyms", [])])
            entries[code] = normalize_entry(entry) if normalize else entry
    return [entries[c] for c in sorted(entries)]


def write_dictionary(entries, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(
                {"code": e.code, "description": e.description, "synonyms": e.synonyms}))
            fh.write("\n")
