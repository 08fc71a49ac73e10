"""Shared sequence encoder: embedding -> stacked bi-LSTM -> linear projection.

One parameter set encodes both documents and synonym phrases, so synonym
query vectors live in the same space as document hidden states. Documents
come back as per-position hidden matrices H (N x h); synonym phrases are
max-pooled over positions into a single vector q (h).

The LSTM recurrence is a fused graph primitive: the time loop runs in plain
numpy and its backward implements truncation-free BPTT directly. Gate order
inside the fused 4H axis is (input, forget, cell, output). Padding is
handled by carrying h and c through masked steps unchanged, which makes one
code path serve both directions (the reversed pass simply iterates T-1..0,
consuming trailing pads first while the state is still zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_NEG = 1e30


@dataclass
class EncoderConfig:
    """Dimensions and dropout of the shared encoder."""

    emb_dim: int = 100
    lstm_layers: int = 1
    lstm_hidden: int = 512
    output_dim: int = 512
    emb_dropout: float = 0.2

    def validate(self):
        if min(self.emb_dim, self.lstm_layers, self.lstm_hidden, self.output_dim) <= 0:
            raise ValueError(f"all encoder dimensions must be positive: {self}")


GATE_ORDER = ("input", "forget", "cell", "output")


def init_lstm_params(config: EncoderConfig, rng, dtype=np.float64) -> dict[str, Tensor]:
    """uniform(-1/sqrt(hidden), 1/sqrt(hidden)) weights, zero biases except
    forget-gate bias 1.0; plus the 2*hidden -> output_dim projection."""
    config.validate()
    hidden = config.lstm_hidden
    bound = 1.0 / np.sqrt(hidden)
    params: dict[str, Tensor] = {}
    in_dim = config.emb_dim
    for layer in range(config.lstm_layers):
        for direction in ("fw", "bw"):
            prefix = f"lstm.l{layer}.{direction}"
            params[f"{prefix}.w_x"] = ad.parameter(
                rng.uniform(-bound, bound, size=(in_dim, 4 * hidden), dtype=dtype))
            params[f"{prefix}.w_h"] = ad.parameter(
                rng.uniform(-bound, bound, size=(hidden, 4 * hidden), dtype=dtype))
            bias = np.zeros(4 * hidden, dtype=dtype)
            bias[hidden:2 * hidden] = 1.0  # forget gate
            params[f"{prefix}.bias"] = ad.parameter(bias)
        in_dim = 2 * hidden
    params["proj.w"] = ad.parameter(
        rng.uniform(-bound, bound, size=(2 * hidden, config.output_dim), dtype=dtype))
    params["proj.b"] = ad.parameter(np.zeros(config.output_dim, dtype=dtype))
    return params


def gate_slices(params: dict[str, Tensor], prefix: str) -> dict[str, dict[str, np.ndarray]]:
    """Per-gate views into the fused weight matrices of one LSTM direction."""
    hidden = params[f"{prefix}.w_h"].shape[0]
    out = {}
    for i, gate in enumerate(GATE_ORDER):
        sl = slice(i * hidden, (i + 1) * hidden)
        out[gate] = {
            "w_x": params[f"{prefix}.w_x"].data[:, sl],
            "w_h": params[f"{prefix}.w_h"].data[:, sl],
            "bias": params[f"{prefix}.bias"].data[sl],
        }
    return out


def lstm_recurrence(gates_x: Tensor, w_h: Tensor, bias: Tensor,
                    mask: np.ndarray, reverse: bool = False) -> Tensor:
    """Masked LSTM over precomputed input activations.

    gates_x: (T, B, 4H) holding x_t @ W_x for every step.
    w_h: (H, 4H) recurrent weights, bias: (4H,).
    mask: (T, B) with 1.0 at real tokens, 0.0 at padding; masked steps carry
    h and c through unchanged. reverse=True runs steps T-1..0 while keeping
    outputs aligned with input positions.
    """
    T, B, four_h = gates_x.shape
    hidden = four_h // 4
    gx = gates_x.data
    wh = w_h.data
    b = bias.data
    h = np.zeros((B, hidden), dtype=gx.dtype)
    c = np.zeros((B, hidden), dtype=gx.dtype)
    hs = np.empty((T, B, hidden), dtype=gx.dtype)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    cache = [None] * T
    for t in steps:
        gates = gx[t] + h @ wh + b
        i = ad.stable_sigmoid(gates[:, :hidden])
        f = ad.stable_sigmoid(gates[:, hidden:2 * hidden])
        g = np.tanh(gates[:, 2 * hidden:3 * hidden])
        o = ad.stable_sigmoid(gates[:, 3 * hidden:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        m = mask[t][:, None]
        keep = 1.0 - m
        h_prev, c_prev = h, c
        h = m * (o * tc) + keep * h_prev
        c = m * c_new + keep * c_prev
        hs[t] = h
        cache[t] = (i, f, g, o, tc, c_prev, h_prev, m, keep)

    def _bw(gout):
        dgx = np.zeros_like(gx)
        dwh = np.zeros_like(wh)
        db = np.zeros_like(b)
        dh = np.zeros((B, hidden), dtype=gx.dtype)
        dc = np.zeros((B, hidden), dtype=gx.dtype)
        for t in reversed(list(steps)):
            i, f, g, o, tc, c_prev, h_prev, m, keep = cache[t]
            dht = dh + gout[t]
            dh_new = m * dht
            dc_new = m * dc
            do = dh_new * tc
            dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
            di = dc_new * g
            df = dc_new * c_prev
            dg = dc_new * i
            dgates = np.concatenate(
                [di * i * (1.0 - i), df * f * (1.0 - f),
                 dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1)
            dgx[t] = dgates
            dwh += h_prev.T @ dgates
            db += dgates.sum(axis=0)
            dh = dgates @ wh.T + keep * dht
            dc = dc_new * f + keep * dc
        if gates_x.requires_grad:
            gates_x.accumulate_grad(dgx)
        if w_h.requires_grad:
            w_h.accumulate_grad(dwh)
        if bias.requires_grad:
            bias.accumulate_grad(db)

    return ad.make_op(hs, (gates_x, w_h, bias), _bw, "lstm")


def _run_direction(x: Tensor, params: dict[str, Tensor], prefix: str,
                   mask: np.ndarray, reverse: bool) -> Tensor:
    T, B, in_dim = x.shape
    gx = ad.matmul(ad.reshape(x, (T * B, in_dim)), params[f"{prefix}.w_x"])
    gx = ad.reshape(gx, (T, B, params[f"{prefix}.w_x"].shape[1]))
    return lstm_recurrence(gx, params[f"{prefix}.w_h"], params[f"{prefix}.bias"],
                           mask, reverse=reverse)


def bilstm_project(x: Tensor, params: dict[str, Tensor], config: EncoderConfig,
                   mask: np.ndarray) -> Tensor:
    """Stacked bi-LSTM plus the output projection. x: (T, B, e) -> (T, B, h)."""
    out = x
    for layer in range(config.lstm_layers):
        fw = _run_direction(out, params, f"lstm.l{layer}.fw", mask, reverse=False)
        bw = _run_direction(out, params, f"lstm.l{layer}.bw", mask, reverse=True)
        out = ad.concat([fw, bw], axis=2)
    T, B, two_h = out.shape
    flat = ad.add(ad.matmul(ad.reshape(out, (T * B, two_h)), params["proj.w"]),
                  params["proj.b"])
    return ad.reshape(flat, (T, B, config.output_dim))


def masked_time_max(states: Tensor, mask: np.ndarray) -> Tensor:
    """Max over positions, ignoring padding. states: (S, T, h), mask: (S, T) -> (S, h)."""
    penalty = ad.tensor(((mask - 1.0) * MASK_NEG)[:, :, None].astype(states.dtype))
    return ad.reduce_max(ad.add(states, penalty), axis=1)


class Encoder:
    """Document/synonym encoder sharing one parameter set.

    ``encode_text`` and ``encode_synonym`` both read the same embedding and
    LSTM tensors: mutating a parameter through one path is visible through
    the other.
    """

    def __init__(self, config: EncoderConfig, embedding: Tensor, params: dict[str, Tensor]):
        config.validate()
        self.config = config
        self.embedding = embedding
        self.params = params

    def encode_batch(self, ids: np.ndarray, mask: np.ndarray,
                     training: bool = False, rng=None) -> Tensor:
        """Encode padded sequences. ids, mask: (S, T) -> hidden states (S, T, h)."""
        emb = ad.embedding(self.embedding, ids)  # (S, T, e)
        emb = ad.dropout(emb, self.config.emb_dropout, rng, training)
        states = bilstm_project(ad.transpose(emb, (1, 0, 2)), self.params,
                                self.config, mask.T.astype(emb.dtype))
        return ad.transpose(states, (1, 0, 2))

    def encode_text(self, token_ids: np.ndarray, training: bool = False, rng=None) -> Tensor:
        """Encode one document into its hidden matrix H (N x h)."""
        token_ids = np.asarray(token_ids)
        if token_ids.size == 0:
            raise ValueError("cannot encode an empty document")
        states = self.encode_batch(token_ids[None, :], np.ones((1, token_ids.size)),
                                   training=training, rng=rng)
        return ad.reshape(states, (token_ids.size, self.config.output_dim))

    def encode_synonym(self, token_ids: np.ndarray, training: bool = False, rng=None) -> Tensor:
        """Encode one synonym phrase into its query vector q (h)."""
        token_ids = np.asarray(token_ids)
        if token_ids.size == 0:
            raise ValueError("cannot encode an empty synonym")
        if token_ids.size > 32:
            raise ValueError(f"synonym too long ({token_ids.size} tokens, max 32)")
        states = self.encode_batch(token_ids[None, :], np.ones((1, token_ids.size)),
                                   training=training, rng=rng)
        pooled = masked_time_max(states, np.ones((1, token_ids.size)))
        return ad.reshape(pooled, (self.config.output_dim,))
