"""Code representation pooling and the three scoring variants.

biaffine:  logit_l = v_l^T W q_l + b          (parameters independent of |C|)
dot:       logit_l = v_l^T q_l + b
per_label: logit_l = v_l^T w_l + b_l          (parameters linear in |C|)

q_l is the elementwise max over the code's M synonym query vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

VARIANTS = ("biaffine", "dot", "per_label")


@dataclass
class ScorerParams:
    variant: str
    weight: Tensor | None  # biaffine: (h, h); per_label: (C, h); dot: None
    bias: Tensor           # scalar for biaffine/dot, (C,) for per_label

    def tensors(self) -> dict[str, Tensor]:
        out = {"scorer.bias": self.bias}
        if self.weight is not None:
            out["scorer.weight"] = self.weight
        return out


def init_scorer(variant: str, h: int, num_codes: int, rng, dtype=np.float64) -> ScorerParams:
    if variant not in VARIANTS:
        raise ValueError(f"unknown scorer {variant!r}; choose from {VARIANTS}")
    if variant == "biaffine":
        # identity plus small noise: early training behaves like dot scoring
        w = np.eye(h, dtype=dtype) + rng.uniform(-0.01, 0.01, size=(h, h), dtype=dtype)
        return ScorerParams("biaffine", ad.parameter(w), ad.parameter(np.zeros((), dtype=dtype)))
    if variant == "dot":
        return ScorerParams("dot", None, ad.parameter(np.zeros((), dtype=dtype)))
    bound = 1.0 / np.sqrt(h)
    w = rng.uniform(-bound, bound, size=(num_codes, h), dtype=dtype)
    return ScorerParams("per_label", ad.parameter(w), ad.parameter(np.zeros(num_codes, dtype=dtype)))


def code_repr(queries) -> Tensor:
    """Pool M synonym query vectors into one code vector by elementwise max."""
    if isinstance(queries, Tensor):
        return ad.reduce_max(queries, axis=-2)  # (..., M, h) -> (..., h)
    return ad.maxpool(list(queries))


def score(v: Tensor, code_query, params: ScorerParams, label: int | None = None
          ) -> tuple[Tensor, Tensor]:
    """Score one (document representation, code) pair -> (logit, probability).

    v: (h,). For biaffine/dot pass the pooled code vector q_l (h,); for
    per_label pass the label index.
    """
    h = v.shape[0]
    if params.variant == "biaffine":
        row = ad.matmul(ad.reshape(v, (1, h)), params.weight)
        logit = ad.add(ad.reshape(ad.matmul(row, ad.reshape(code_query, (h, 1))), ()),
                       params.bias)
    elif params.variant == "dot":
        logit = ad.add(ad.reshape(ad.matmul(ad.reshape(v, (1, h)),
                                            ad.reshape(code_query, (h, 1))), ()),
                       params.bias)
    else:
        if label is None or not 0 <= label < params.weight.shape[0]:
            raise ValueError(f"per_label scorer needs a valid label index, got {label}")
        w_l = ad.reshape(ad.slice_axis(params.weight, 0, label, label + 1), (h, 1))
        b_l = ad.reshape(ad.slice_axis(params.bias, 0, label, label + 1), ())
        logit = ad.add(ad.reshape(ad.matmul(ad.reshape(v, (1, h)), w_l), ()), b_l)
    return logit, ad.sigmoid(logit)


def batched_logits(v: Tensor, code_queries: Tensor, params: ScorerParams) -> Tensor:
    """Score every document against every code. v: (B, C, h), code_queries: (C, h) -> (B, C)."""
    if params.variant == "biaffine":
        mixed = ad.contract("bch,hk->bck", v, params.weight)
        return ad.add(ad.contract("bck,ck->bc", mixed, code_queries), params.bias)
    if params.variant == "dot":
        return ad.add(ad.contract("bch,ch->bc", v, code_queries), params.bias)
    return ad.add(ad.contract("bch,ch->bc", v, params.weight), params.bias)


def parameter_count(variant: str, h: int, num_codes: int) -> int:
    """Learnable scalar count of each scoring head.

    biaffine and dot are constant in the code-set size; per_label grows
    linearly with it, which is what starves rare codes of updates.
    """
    if variant == "biaffine":
        return h * h + 1
    if variant == "dot":
        return 1
    if variant == "per_label":
        return num_codes * (h + 1)
    raise ValueError(f"unknown scorer {variant!r}; choose from {VARIANTS}")
