"""Model assembly: parameters, batched forward pass, checkpoint round-trip."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .attention import AttentionParams, batched_attention, init_attention_params
from .encoder import Encoder, EncoderConfig, init_lstm_params, masked_time_max
from .errors import DataError
from .rng import Rng
from .scoring import ScorerParams, batched_logits, code_repr, init_scorer
from .text import EmbeddingMatrix, Vocabulary, init_embeddings

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Every dimension and knob that defines the network itself."""

    emb_dim: int = 100
    lstm_layers: int = 1
    lstm_hidden: int = 512
    output_dim: int = 512
    num_synonyms: int = 8
    scorer: str = "biaffine"
    emb_dropout: float = 0.2
    rep_dropout: float = 0.2
    precision: int = 64
    trainable_embeddings: bool = True

    @property
    def dtype(self):
        if self.precision == 64:
            return np.float64
        if self.precision == 32:
            return np.float32
        raise ValueError(f"precision must be 32 or 64, got {self.precision}")

    def validate(self):
        if self.output_dim % self.num_synonyms != 0:
            raise ValueError(
                f"output_dim {self.output_dim} must be divisible by synonym count "
                f"{self.num_synonyms}")
        _ = self.dtype

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.emb_dim, self.lstm_layers, self.lstm_hidden,
                             self.output_dim, self.emb_dropout)


class Model:
    """Encoder + multi-synonyms attention + scorer over a fixed code set."""

    def __init__(self, vocab: Vocabulary, codes: list[str], config: ModelConfig,
                 params: dict[str, Tensor]):
        config.validate()
        self.vocab = vocab
        self.codes = list(codes)
        self.code_index = {c: i for i, c in enumerate(self.codes)}
        self.config = config
        self.params = params
        self.encoder = Encoder(config.encoder_config(), params["embedding"],
                               params)
        self.attn = AttentionParams(params["attn.w_q"], params["attn.b_q"],
                                    params["attn.w_h"], params["attn.b_h"])
        weight = params.get("scorer.weight")
        self.scorer = ScorerParams(config.scorer, weight, params["scorer.bias"])

    # -- construction ----------------------------------------------------

    @classmethod
    def build(cls, vocab: Vocabulary, codes: list[str], config: ModelConfig,
              rng: Rng, pretrained: EmbeddingMatrix | None = None) -> "Model":
        config.validate()
        dtype = config.dtype
        if pretrained is not None:
            if pretrained.matrix.shape != (len(vocab), config.emb_dim):
                raise DataError(
                    f"embedding matrix {pretrained.matrix.shape} does not match "
                    f"vocab {len(vocab)} x dim {config.emb_dim}")
            emb = pretrained.matrix.astype(dtype)
            trainable = pretrained.trainable
        else:
            emb = init_embeddings(vocab, config.emb_dim, rng.child("embeddings")).astype(dtype)
            trainable = config.trainable_embeddings
        params: dict[str, Tensor] = {}
        params["embedding"] = ad.parameter(emb)
        params["embedding"].requires_grad = trainable
        params.update(init_lstm_params(config.encoder_config(), rng.child("lstm"), dtype))
        attn = init_attention_params(config.output_dim, config.num_synonyms,
                                     rng.child("attention"), dtype)
        params.update(attn.tensors())
        scorer = init_scorer(config.scorer, config.output_dim, len(codes),
                             rng.child("scorer"), dtype)
        params.update(scorer.tensors())
        cfg = ModelConfig(**{**asdict(config), "trainable_embeddings": trainable})
        return cls(vocab, codes, cfg, params)

    def parameters(self) -> list[tuple[str, Tensor]]:
        """Trainable parameters in a fixed, deterministic order."""
        return [(name, t) for name, t in sorted(self.params.items()) if t.requires_grad]

    def zero_grad(self):
        for _, t in self.parameters():
            t.zero_grad()

    # -- forward ----------------------------------------------------------

    def synonym_queries(self, syn_ids: np.ndarray, syn_mask: np.ndarray,
                        training: bool = False, rng=None) -> Tensor:
        """Encode all C*M synonym phrases. syn_ids, syn_mask: (C*M, T) -> (C, M, h)."""
        states = self.encoder.encode_batch(syn_ids, syn_mask, training=training, rng=rng)
        pooled = masked_time_max(states, syn_mask)  # (C*M, h)
        c = len(self.codes)
        m = self.config.num_synonyms
        return ad.reshape(pooled, (c, m, self.config.output_dim))

    def forward(self, doc_ids: np.ndarray, doc_mask: np.ndarray, syn_ids: np.ndarray,
                syn_mask: np.ndarray, training: bool = False, rng=None,
                return_internals: bool = False):
        """Logits for a padded document batch against every code.

        doc_ids, doc_mask: (B, T); syn_ids, syn_mask: (C*M, Ts).
        Returns (B, C) logits, plus internals (v, alphas, queries, code_queries)
        when asked.
        """
        h_docs = self.encoder.encode_batch(doc_ids, doc_mask, training=training, rng=rng)
        queries = self.synonym_queries(syn_ids, syn_mask, training=training, rng=rng)
        v, alphas = batched_attention(h_docs, queries, self.attn, doc_mask)
        v_dropped = ad.dropout(v, self.config.rep_dropout, rng, training)
        code_queries = code_repr(queries)  # (C, h)
        logits = batched_logits(v_dropped, code_queries, self.scorer)
        if return_internals:
            return logits, {"v": v, "alphas": alphas, "queries": queries,
                            "code_queries": code_queries}
        return logits

    def forward_twice(self, doc_ids: np.ndarray, doc_mask: np.ndarray,
                      syn_ids: np.ndarray, syn_mask: np.ndarray, rng) -> tuple[Tensor, Tensor]:
        """Two training-mode passes of the same batch with independent dropout.

        Implemented as one pass over the duplicated batch (documents and
        synonyms both duplicated) so the recurrence loop runs once.
        """
        b = doc_ids.shape[0]
        s = syn_ids.shape[0]
        ids2 = np.concatenate([doc_ids, doc_ids], axis=0)
        mask2 = np.concatenate([doc_mask, doc_mask], axis=0)
        sids2 = np.concatenate([syn_ids, syn_ids], axis=0)
        smask2 = np.concatenate([syn_mask, syn_mask], axis=0)

        h_all = self.encoder.encode_batch(ids2, mask2, training=True, rng=rng)
        states = self.encoder.encode_batch(sids2, smask2, training=True, rng=rng)
        pooled = masked_time_max(states, smask2)  # (2*C*M, h)
        c, m, h = len(self.codes), self.config.num_synonyms, self.config.output_dim

        logits = []
        for half in range(2):
            h_docs = ad.slice_axis(h_all, 0, half * b, (half + 1) * b)
            queries = ad.reshape(ad.slice_axis(pooled, 0, half * s, (half + 1) * s),
                                 (c, m, h))
            v, _ = batched_attention(h_docs, queries, self.attn, doc_mask)
            v_dropped = ad.dropout(v, self.config.rep_dropout, rng, True)
            logits.append(batched_logits(v_dropped, code_repr(queries), self.scorer))
        return logits[0], logits[1]

    # -- persistence -------------------------------------------------------

    def save(self, path, extra: dict | None = None):
        """Write a self-describing checkpoint; 64-bit values round-trip exactly."""
        payload = {
            "version": np.array(CHECKPOINT_VERSION),
            "config_json": np.array(json.dumps(asdict(self.config))),
            "vocab_json": np.array(json.dumps(self.vocab.to_list())),
            "codes_json": np.array(json.dumps(self.codes)),
            "extra_json": np.array(json.dumps(extra or {})),
        }
        for name, t in self.params.items():
            payload["param/" + name] = t.data
        np.savez(path, **payload)

    @classmethod
    def load(cls, path) -> tuple["Model", dict]:
        try:
            blob = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read checkpoint {path}: {e}") from None
        if "version" not in blob or int(blob["version"]) != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version")
        config = ModelConfig(**json.loads(str(blob["config_json"])))
        vocab = Vocabulary.from_list(json.loads(str(blob["vocab_json"])))
        codes = json.loads(str(blob["codes_json"]))
        extra = json.loads(str(blob["extra_json"]))
        params = {}
        for key in blob.files:
            if key.startswith("param/"):
                params[key[len("param/"):]] = ad.parameter(blob[key])
        if not config.trainable_embeddings:
            params["embedding"].requires_grad = False
        return cls(vocab, codes, config, params), extra

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for name, t in self.params.items():
            t.data = snap[name].copy()
