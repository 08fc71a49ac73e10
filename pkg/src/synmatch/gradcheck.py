"""Finite-difference verification of analytic gradients.

The numeric side only ever calls the forward pass (graph recording off), so
it stays independent of the backward implementation it checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import VerificationError
from .model import Model, ModelConfig
from .rng import Rng
from .synonyms import CodeEntry
from .text import Document, Vocabulary
from .training import bce_loss, make_batch, pad_synonym_ids, draw_synonym_samples

DEFAULT_EPS = 1e-4
TOLERANCE = {64: 1e-3, 32: 1e-2}
REL_FLOOR = 1e-4


def numeric_gradient(value_fn, arr: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. every entry of arr.

    ``value_fn`` re-reads ``arr`` (mutated in place and restored).
    """
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = value_fn()
        flat[i] = orig - eps
        f_minus = value_fn()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = REL_FLOOR) -> float:
    """max |a - n| / max(|a|, |n|, floor); the floor makes near-zero entries
    compare absolutely."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(loss_fn, named_params, eps: float = DEFAULT_EPS,
                    floor: float = REL_FLOOR) -> dict[str, float]:
    """Compare backward() gradients against finite differences per parameter.

    ``loss_fn`` builds the forward graph and returns the scalar loss tensor;
    it must be deterministic (no dropout).
    """
    for _, p in named_params:
        p.zero_grad()
    loss = loss_fn()
    ad.backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in named_params}

    def value():
        with ad.no_grad():
            return loss_fn().item()

    errors = {}
    for name, p in named_params:
        numeric = numeric_gradient(value, p.data, eps)
        errors[name] = max_relative_error(analytic[name], numeric, floor)
    return errors


# -- micro model fixture -------------------------------------------------------


MICRO_TOKENS = [
    "fever", "cough", "rash", "ache", "chill", "dizzy", "weak", "numb",
    "pale", "sore", "stiff", "swollen",
]


def micro_fixture(precision: int = 64, scorer: str = "biaffine", seed: int = 0):
    """Tiny model plus a 3-document batch: e=8, hidden=6, h=8, M=2, C=3, N<=5.

    Dropout rates are zero so the loss is deterministic for finite
    differences.
    """
    rng = Rng(seed)
    vocab = Vocabulary(MICRO_TOKENS)
    entries = [
        CodeEntry("C0", "fever chill", ["cough sore"]),
        CodeEntry("C1", "rash swollen", ["numb pale"]),
        CodeEntry("C2", "dizzy weak", ["stiff ache"]),
    ]
    config = ModelConfig(emb_dim=8, lstm_layers=1, lstm_hidden=6, output_dim=8,
                         num_synonyms=2, scorer=scorer, emb_dropout=0.0,
                         rep_dropout=0.0, precision=precision)
    model = Model.build(vocab, [e.code for e in entries], config, rng.child("model"))

    doc_rng = rng.child("docs")
    lengths = [5, 3, 4]
    docs = []
    for i, n in enumerate(lengths):
        ids = doc_rng.integers(2, len(vocab), size=n)
        codes = [entries[int(c)].code
                 for c in doc_rng.choice(3, size=int(doc_rng.integers(1, 3)), replace=False)]
        docs.append(Document(f"d{i}", np.asarray(ids, dtype=np.int64), frozenset(codes)))

    samples = draw_synonym_samples(entries, config.num_synonyms, rng.child("synonyms"), vocab)
    syn_ids, syn_mask = pad_synonym_ids(samples, config.dtype)
    ids, mask, labels = make_batch(docs, model.code_index, config.dtype)
    return model, (ids, mask, labels, syn_ids, syn_mask)


@dataclass
class GradCheckReport:
    precision: int
    tolerance: float
    eps: float
    group_errors: dict[str, float] = field(default_factory=dict)
    corrupted: str | None = None

    @property
    def max_error(self) -> float:
        return max(self.group_errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def failing_groups(self) -> list[str]:
        return [n for n, e in self.group_errors.items() if e >= self.tolerance]

    def lines(self) -> list[str]:
        width = max(len(n) for n in self.group_errors)
        out = [f"gradient check: eps={self.eps:g}, tolerance={self.tolerance:g} "
               f"({self.precision}-bit)"]
        if self.precision == 32:
            out.append("note: 32-bit mode uses the relaxed 1e-2 tolerance")
        for name in sorted(self.group_errors):
            err = self.group_errors[name]
            flag = "ok" if err < self.tolerance else "FAIL"
            out.append(f"  {name:<{width}s}  max rel err {err:.3e}  {flag}")
        out.append("PASS" if self.passed else
                   f"FAIL: {', '.join(self.failing_groups())}")
        return out


def run_model_gradcheck(precision: int = 64, scorer: str = "biaffine",
                        seed: int = 0, eps: float = DEFAULT_EPS,
                        corrupt: str | None = None) -> GradCheckReport:
    """Check every parameter group of the micro model against finite differences.

    ``corrupt`` names a parameter group whose analytic gradient is
    deliberately perturbed, as a negative control for the checker itself.
    """
    model, (ids, mask, labels, syn_ids, syn_mask) = micro_fixture(precision, scorer, seed)
    params = model.parameters()

    def loss_fn():
        logits = model.forward(ids, mask, syn_ids, syn_mask, training=False)
        return bce_loss(ad.sigmoid(logits), labels)

    if corrupt is not None and corrupt not in dict(params):
        raise VerificationError(f"unknown parameter group {corrupt!r}")

    for _, p in params:
        p.zero_grad()
    loss = loss_fn()
    ad.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params}
    if corrupt is not None:
        analytic[corrupt] = analytic[corrupt] + 1.0

    def value():
        with ad.no_grad():
            return loss_fn().item()

    tol = TOLERANCE[precision]
    report = GradCheckReport(precision=precision, tolerance=tol, eps=eps, corrupted=corrupt)
    for name, p in params:
        numeric = numeric_gradient(value, p.data, eps)
        report.group_errors[name] = max_relative_error(analytic[name], numeric)
    return report
