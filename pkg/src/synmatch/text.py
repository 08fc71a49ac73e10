"""Corpus ingestion: tokenization, vocabulary, pretrained embeddings, documents.

File formats (all UTF-8):
  corpus     one JSON record per line with fields "id" (string), "text"
             (string) and "codes" (array of strings).
  embeddings word2vec text format: a "count dim" header line followed by
             "token v1 ... v_dim" lines.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
NUM_TOKEN = "NUM"

_TOKEN_RE = re.compile(r"[0-9a-z]+")

DEFAULT_MAX_LEN = 4000


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs; digit runs become NUM.

    The literal token "num" also maps to NUM so that re-tokenizing the
    joined output reproduces it (idempotence). Mixed tokens like "t4"
    survive as-is.
    """
    out = []
    for match in _TOKEN_RE.finditer(text.lower()):
        tok = match.group()
        out.append(NUM_TOKEN if tok.isdigit() or tok == "num" else tok)
    return out


def truncate(tokens: list, max_len: int = DEFAULT_MAX_LEN) -> list:
    """Keep the first ``max_len`` tokens."""
    if max_len <= 0:
        raise ValueError(f"max_len must be positive, got {max_len}")
    return tokens[:max_len]


class Vocabulary:
    """Bidirectional token<->id map with fixed PAD=0 and UNK=1 entries."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens passed to Vocabulary")

    @classmethod
    def from_token_lists(cls, token_lists) -> "Vocabulary":
        """Build from an iterable of token lists, ids ordered by (-count, token)."""
        counts: dict[str, int] = {}
        for toks in token_lists:
            for tok in toks:
                counts[tok] = counts.get(tok, 0) + 1
        counts.pop(PAD_TOKEN, None)
        counts.pop(UNK_TOKEN, None)
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(ordered)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self.id_to_token[idx]

    def encode(self, tokens: list[str]) -> np.ndarray:
        return np.array([self.id_of(t) for t in tokens], dtype=np.int64)

    def to_list(self) -> list[str]:
        return list(self.id_to_token[2:])

    @classmethod
    def from_list(cls, tokens: list[str]) -> "Vocabulary":
        return cls(tokens)


@dataclass
class Document:
    """One ingested document: truncated token ids plus its gold code set."""

    id: str
    token_ids: np.ndarray
    gold_codes: frozenset = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class EmbeddingMatrix:
    """|V| x e lookup table for word vectors; row ids match the Vocabulary."""

    matrix: np.ndarray
    trainable: bool = True

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def init_embeddings(vocab: Vocabulary, dim: int, rng, scale: float = 0.05) -> np.ndarray:
    """uniform(-scale, scale) init for every row except PAD (zeros)."""
    matrix = rng.uniform(-scale, scale, size=(len(vocab), dim))
    matrix[vocab.pad_id] = 0.0
    return matrix


def load_embeddings(path, vocab: Vocabulary, dim: int, rng) -> EmbeddingMatrix:
    """Load word2vec-text vectors for the vocabulary.

    Tokens present in the file get their stored vector; missing tokens get
    uniform(-0.05, 0.05) rows. PAD stays zero. A dimension mismatch with
    ``dim`` is rejected.
    """
    matrix = init_embeddings(vocab, dim, rng)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}: embedding header must be 'count dim', got {header!r}")
        try:
            count, file_dim = int(header[0]), int(header[1])
        except ValueError:
            raise DataError(f"{path}: non-integer embedding header {header!r}") from None
        if file_dim != dim:
            raise DataError(f"{path}: embedding dim {file_dim} != configured dim {dim}")
        found = 0
        n_lines = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            n_lines += 1
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise DataError(
                    f"{path}:{lineno}: expected token plus {dim} values, got {len(parts) - 1}"
                )
            token = parts[0]
            if token in vocab:
                try:
                    matrix[vocab.id_of(token)] = [float(v) for v in parts[1:]]
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric vector component") from None
                found += 1
        if n_lines != count:
            raise DataError(f"{path}: header promises {count} vectors, file has {n_lines}")
    if found == 0:
        logger.warning("no overlap between %s and the vocabulary; all rows random", path)
    return EmbeddingMatrix(matrix)


@dataclass
class RawRecord:
    id: str
    text: str
    codes: list[str]
    lineno: int = 0


def read_corpus(path) -> list[RawRecord]:
    """Read a JSONL corpus; malformed lines and duplicate ids are rejected."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or not {"id", "text", "codes"} <= obj.keys():
                raise DataError(f"{path}:{lineno}: record needs 'id', 'text' and 'codes'")
            doc_id = str(obj["id"])
            if doc_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
            seen.add(doc_id)
            codes = obj["codes"]
            if not isinstance(codes, list):
                raise DataError(f"{path}:{lineno}: 'codes' must be an array")
            records.append(RawRecord(doc_id, str(obj["text"]), [str(c) for c in codes], lineno))
    return records


def write_corpus(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"id": rec.id, "text": rec.text, "codes": list(rec.codes)}))
            fh.write("\n")


def ingest_corpus(path, vocab: Vocabulary, known_codes, max_len: int = DEFAULT_MAX_LEN) -> list[Document]:
    """Turn a corpus file into Documents; codes absent from the dictionary are rejected."""
    known = set(known_codes)
    docs = []
    for rec in read_corpus(path):
        for code in rec.codes:
            if code not in known:
                raise DataError(f"{path}:{rec.lineno}: unknown code {code!r} (not in dictionary)")
        ids = vocab.encode(truncate(tokenize(rec.text), max_len))
        docs.append(Document(rec.id, ids, frozenset(rec.codes)))
    return docs
