"""Multi-synonyms attention: head-sliced scoring, full-width contexts, max-pool.

For a document with hidden states H (N x h) and M synonym queries q^j, the
j-th attention distribution scores the j-th contiguous column slice H^j
(width h/M) against the transformed query:

    alpha^j = softmax((W_q q^j + b_q) . tanh(W_h H^j + b_h))

The context for synonym j applies alpha^j to the FULL-width H, and the
code-wise text representation is the elementwise max over the M contexts:

    v = max_j (H^T alpha^j)

Scores use the head slice; contexts use all h columns. No 1/sqrt(d) score
scaling. W_q and W_h are shared across codes, synonyms and heads.

The batched path computes every (batch, code, position, synonym) score in
one contraction to a (B, C, N, M) tensor and the contexts in a second
contraction to (B, C, h, M); memory grows linearly in M.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

from .encoder import MASK_NEG


@dataclass
class AttentionParams:
    """Shared attention transforms: w_q maps h -> h/M, w_h maps h/M -> h/M."""

    w_q: Tensor  # (h/M, h)
    b_q: Tensor  # (h/M,)
    w_h: Tensor  # (h/M, h/M)
    b_h: Tensor  # (h/M,)

    def tensors(self) -> dict[str, Tensor]:
        return {"attn.w_q": self.w_q, "attn.b_q": self.b_q,
                "attn.w_h": self.w_h, "attn.b_h": self.b_h}


def init_attention_params(h: int, m: int, rng, dtype=np.float64) -> AttentionParams:
    if h % m != 0:
        raise ValueError(f"hidden width {h} not divisible by synonym count {m}")
    p = h // m
    bq = 1.0 / np.sqrt(h)
    bh = 1.0 / np.sqrt(p)
    return AttentionParams(
        w_q=ad.parameter(rng.uniform(-bq, bq, size=(p, h), dtype=dtype)),
        b_q=ad.parameter(np.zeros(p, dtype=dtype)),
        w_h=ad.parameter(rng.uniform(-bh, bh, size=(p, p), dtype=dtype)),
        b_h=ad.parameter(np.zeros(p, dtype=dtype)),
    )


def split_heads(h_states: Tensor, m: int) -> list[Tensor]:
    """Split H (N x h) into M contiguous column slices of width h/M."""
    n, h = h_states.shape
    if h % m != 0:
        raise ValueError(f"hidden width {h} not divisible by head count {m}")
    p = h // m
    return [ad.slice_axis(h_states, 1, j * p, (j + 1) * p) for j in range(m)]


def attend(h_states: Tensor, query: Tensor, head: int, params: AttentionParams,
           num_heads: int) -> tuple[Tensor, Tensor]:
    """One synonym's attention over one document.

    h_states: (N, h); query: (h,). Returns (alpha (N,), context (h,)):
    scores come from head slice ``head``, the context from full H.
    """
    n, h = h_states.shape
    p = h // num_heads
    h_slice = split_heads(h_states, num_heads)[head]  # (N, p)
    keys = ad.tanh(ad.add(ad.matmul(h_slice, ad.transpose(params.w_h)), params.b_h))
    u = ad.add(ad.matmul(params.w_q, ad.reshape(query, (h, 1))),
               ad.reshape(params.b_q, (p, 1)))  # (p, 1)
    scores = ad.reshape(ad.matmul(keys, u), (n,))
    alpha = ad.softmax(scores, axis=0)
    context = ad.reshape(ad.matmul(ad.transpose(h_states), ad.reshape(alpha, (n, 1))), (h,))
    return alpha, context


def codewise_repr(h_states: Tensor, queries, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Code-wise text representation for one document and one code.

    queries: list of M query vectors (h,). Returns (v (h,), alphas (M, N)):
    v is the elementwise max over the M per-synonym contexts.
    """
    queries = list(queries)
    m = len(queries)
    alphas, contexts = [], []
    for j, q in enumerate(queries):
        alpha, ctx = attend(h_states, q, j, params, m)
        alphas.append(alpha)
        contexts.append(ctx)
    return ad.maxpool(contexts), ad.stack(alphas, axis=0)


def batched_attention(h_docs: Tensor, queries: Tensor, params: AttentionParams,
                      doc_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """All codes and synonyms at once via contractions.

    h_docs: (B, N, h); queries: (C, M, h); doc_mask: (B, N) with 1.0 at real
    tokens. Returns (v (B, C, h), alphas (B, C, N, M)). Padding positions
    get -inf scores so their attention mass is exactly zero.
    """
    b, n, h = h_docs.shape
    c, m, hq = queries.shape
    if hq != h:
        raise ValueError(f"query width {hq} != hidden width {h}")
    p = h // m
    heads = ad.reshape(h_docs, (b, n, m, p))
    keys = ad.tanh(ad.add(ad.contract("bnmp,qp->bnmq", heads, params.w_h), params.b_h))
    u = ad.add(ad.contract("cmh,ph->cmp", queries, params.w_q), params.b_q)
    scores = ad.contract("cmp,bnmp->bcnm", u, keys)
    if doc_mask is not None:
        penalty = ad.tensor(
            ((doc_mask - 1.0) * MASK_NEG)[:, None, :, None].astype(scores.dtype))
        scores = ad.add(scores, penalty)
    alphas = ad.softmax(scores, axis=2)
    contexts = ad.contract("bnh,bcnm->bchm", h_docs, alphas)
    v = ad.reduce_max(contexts, axis=3)
    return v, alphas
