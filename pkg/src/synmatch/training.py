"""Losses, AdamW with linear decay, threshold tuning, and the training loop.

Loss is summed binary cross-entropy over codes, averaged over the batch.
Training regularizes with a two-pass consistency term: the same batch runs
twice with independent dropout masks and the symmetric Bernoulli KL between
the two predicted probabilities is added to the averaged BCE.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .metrics import EvalReport, compute_report, f1
from .model import Model, ModelConfig
from .rng import Rng
from .synonyms import sample_synonyms
from .text import Document

PROB_EPS = 1e-12

THRESHOLD_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)
MAX_MIDPOINT_CANDIDATES = 10_000


@dataclass
class TrainConfig:
    """Optimization settings; defaults follow the reference training recipe."""

    epochs: int = 20
    peak_lr: float = 5e-4
    batch_size: int = 16
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    rdrop_weight: float = 5.0
    seed: int = 0
    resample_synonyms: bool = False
    max_len: int = 4000
    p_at_k: tuple = (5,)

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.peak_lr <= 0 or self.clip_norm <= 0:
            raise ValueError("peak_lr and clip_norm must be positive")
        if self.rdrop_weight < 0 or self.weight_decay < 0:
            raise ValueError("rdrop_weight and weight_decay must be nonnegative")


# -- losses -----------------------------------------------------------------


def bce_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Sum over codes of binary cross-entropy, mean over the batch.

    Probabilities are clamped to [1e-12, 1 - 1e-12], so exact-hit
    predictions give loss -> 0 instead of NaN.
    """
    labels = np.asarray(labels, dtype=probs.dtype)
    if labels.shape != probs.shape:
        raise ValueError(f"labels shape {labels.shape} != probs shape {probs.shape}")
    if np.isnan(probs.data).any():
        raise ValueError("bce_loss got NaN probabilities")
    p = ad.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    y = ad.tensor(labels)
    term = ad.add(ad.mul(y, ad.log(p)), ad.mul(1.0 - y, ad.log(1.0 - p)))
    total = ad.scale(ad.reduce_sum(term), -1.0)
    batch = probs.shape[0] if probs.ndim == 2 else 1
    return ad.scale(total, 1.0 / batch)


def _log_odds(p: Tensor) -> Tensor:
    return ad.add(ad.log(p), ad.scale(ad.log(1.0 - p), -1.0))


def symmetric_kl(probs_a: Tensor, probs_b: Tensor) -> Tensor:
    """Elementwise 0.5*(KL(p||q) + KL(q||p)) for Bernoulli pairs.

    Equal to 0.5 * (p - q) * (logit(p) - logit(q)); nonnegative, zero
    exactly when p == q.
    """
    pa = ad.clip(probs_a, PROB_EPS, 1.0 - PROB_EPS)
    pb = ad.clip(probs_b, PROB_EPS, 1.0 - PROB_EPS)
    return ad.scale(ad.mul(ad.add(pa, ad.scale(pb, -1.0)),
                           ad.add(_log_odds(pa), ad.scale(_log_odds(pb), -1.0))), 0.5)


def rdrop_loss(logits_a: Tensor, logits_b: Tensor, labels: np.ndarray,
               alpha: float) -> Tensor:
    """Averaged BCE of two dropout-perturbed passes plus alpha times the mean
    (over batch and codes) symmetric Bernoulli KL between their predictions."""
    if logits_a.shape != logits_b.shape:
        raise ValueError(f"logit shapes differ: {logits_a.shape} vs {logits_b.shape}")
    probs_a = ad.sigmoid(logits_a)
    probs_b = ad.sigmoid(logits_b)
    bce = ad.scale(ad.add(bce_loss(probs_a, labels), bce_loss(probs_b, labels)), 0.5)
    if alpha == 0.0:
        return bce
    return ad.add(bce, ad.scale(ad.mean(symmetric_kl(probs_a, probs_b)), alpha))


# -- optimizer ----------------------------------------------------------------


class AdamW:
    """Decoupled weight decay Adam with global-norm clipping and linear decay.

    The k-th of T updates uses lr = peak * (T - 1 - k) / (T - 1): the first
    update runs at peak_lr and the final one at exactly zero. beta1=0.9,
    beta2=0.999, bias-corrected moments; update is
    lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta).
    """

    BETA1 = 0.9
    BETA2 = 0.999

    def __init__(self, named_params, peak_lr: float, total_steps: int,
                 weight_decay: float = 0.01, clip_norm: float = 1.0, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.peak_lr = peak_lr
        self.total_steps = max(int(total_steps), 1)
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.eps = eps
        self.step_count = 0
        self.moments = {name: (np.zeros_like(t.data), np.zeros_like(t.data))
                        for name, t in self.named_params}

    def lr_at(self, k: int) -> float:
        if self.total_steps <= 1:
            return self.peak_lr if k == 0 else 0.0
        return max(0.0, self.peak_lr * (self.total_steps - 1 - k) / (self.total_steps - 1))

    def step(self):
        grads = []
        for name, t in self.named_params:
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if np.isnan(g).any():
                raise RuntimeError(f"NaN gradient in parameter {name!r}")
            grads.append(g)
        sq = sum(float((g * g).sum()) for g in grads)
        norm = np.sqrt(sq)
        factor = self.clip_norm / norm if norm > self.clip_norm else 1.0
        lr = self.lr_at(self.step_count)
        self.step_count += 1
        t_step = self.step_count
        bc1 = 1.0 - self.BETA1 ** t_step
        bc2 = 1.0 - self.BETA2 ** t_step
        for (name, p), g in zip(self.named_params, grads):
            g = g * factor
            m, v = self.moments[name]
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)


def adamw_step(optimizer: AdamW):
    """Apply one optimizer update (gradients must already be populated)."""
    optimizer.step()


# -- threshold tuning ---------------------------------------------------------


@dataclass
class Threshold:
    value: float
    metric: str = "micro_f1"
    score: float = 0.0


def _micro_f1_sweep(probs: np.ndarray, labels: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Micro-F1 of `probs >= t` for every candidate t, without re-thresholding."""
    order = np.argsort(probs, kind="mergesort")
    sorted_probs = probs[order]
    pos_cum = np.concatenate([[0], np.cumsum(labels[order[::-1]])])
    n = len(probs)
    total_pos = int(labels.sum())
    counts = n - np.searchsorted(sorted_probs, candidates, side="left")
    tp = pos_cum[counts]
    fp = counts - tp
    fn = total_pos - tp
    denom = 2 * tp + fp + fn
    out = np.zeros(len(candidates))
    nz = denom > 0
    out[nz] = 2 * tp[nz] / denom[nz]
    return out


def tune_threshold(probs: np.ndarray, labels: np.ndarray) -> Threshold:
    """Grid search (0.05 steps) plus midpoints of observed probabilities.

    Maximizes micro-F1 of ``prob >= t``; ties pick the smallest t. With no
    positive labels at all the highest grid point wins (predict nothing).
    """
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(int).ravel()
    if probs.size == 0:
        raise ValueError("cannot tune a threshold on an empty set")
    if labels.sum() == 0:
        top = float(THRESHOLD_GRID[-1])
        return Threshold(top, score=0.0)
    candidates = list(THRESHOLD_GRID)
    uniq = np.unique(probs)
    if len(uniq) <= MAX_MIDPOINT_CANDIDATES:
        candidates.extend((uniq[1:] + uniq[:-1]) / 2.0)
    cand = np.array(sorted({float(t) for t in candidates if 0.0 < t < 1.0}))
    scores = _micro_f1_sweep(probs, labels, cand)
    best = int(np.argmax(scores))  # first max: smallest t on ties
    return Threshold(float(cand[best]), score=float(scores[best]))


# -- batching / evaluation ----------------------------------------------------


def make_batch(docs: list[Document], code_index: dict[str, int], dtype=np.float64):
    """Pad documents to a common length. Returns (ids, mask, labels)."""
    b = len(docs)
    t = max(len(d) for d in docs)
    ids = np.zeros((b, t), dtype=np.int64)
    mask = np.zeros((b, t), dtype=dtype)
    labels = np.zeros((b, len(code_index)), dtype=dtype)
    for i, doc in enumerate(docs):
        n = len(doc)
        ids[i, :n] = doc.token_ids
        mask[i, :n] = 1.0
        for code in doc.gold_codes:
            labels[i, code_index[code]] = 1.0
    return ids, mask, labels


def pad_synonym_ids(samples, dtype=np.float64):
    """Stack per-code synonym token id lists into (C*M, T) ids plus mask."""
    seqs = [ids for sample in samples for ids in sample.token_ids]
    t = max(1, max(len(s) for s in seqs))
    ids = np.zeros((len(seqs), t), dtype=np.int64)
    mask = np.zeros((len(seqs), t), dtype=dtype)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


def predict_probs(model: Model, docs: list[Document], syn_ids, syn_mask,
                  batch_size: int) -> np.ndarray:
    """Evaluation-mode probabilities, (len(docs), C)."""
    chunks = []
    with ad.no_grad():
        for start in range(0, len(docs), batch_size):
            batch = docs[start:start + batch_size]
            ids, mask, _ = make_batch(batch, model.code_index, dtype=model.config.dtype)
            logits = model.forward(ids, mask, syn_ids, syn_mask, training=False)
            chunks.append(ad.stable_sigmoid(logits.data))
    return np.concatenate(chunks, axis=0)


def labels_matrix(docs: list[Document], code_index: dict[str, int]) -> np.ndarray:
    out = np.zeros((len(docs), len(code_index)), dtype=np.int64)
    for i, doc in enumerate(docs):
        for code in doc.gold_codes:
            out[i, code_index[code]] = 1
    return out


# -- training loop -------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    threshold: Threshold
    history: list[dict] = field(default_factory=list)
    test_report: EvalReport | None = None
    best_epoch: int = -1
    synonym_sample: list[list[str]] = field(default_factory=list)

    def config_dict(self) -> dict:
        return {"model": asdict(self.model.config)}


def draw_synonym_samples(entries, m: int, rng: Rng, vocab):
    return [sample_synonyms(entry, m, rng, vocab) for entry in entries]


def train(model: Model, entries, train_docs: list[Document], dev_docs: list[Document],
          train_cfg: TrainConfig, test_docs: list[Document] | None = None,
          log=None) -> TrainResult:
    """Full training run: epochs of AdamW updates, per-epoch dev evaluation
    with threshold tuning, best-dev checkpointing, final test report."""
    train_cfg.validate()
    say = log or (lambda *_: None)
    rng = Rng(train_cfg.seed)
    dtype = model.config.dtype
    m = model.config.num_synonyms

    sample_rng = rng.child("synonyms")
    samples = draw_synonym_samples(entries, m, sample_rng, model.vocab)
    syn_ids, syn_mask = pad_synonym_ids(samples, dtype)

    batches_per_epoch = (len(train_docs) + train_cfg.batch_size - 1) // train_cfg.batch_size
    total_steps = train_cfg.epochs * batches_per_epoch
    opt = AdamW([(n, t) for n, t in model.parameters()], train_cfg.peak_lr,
                total_steps, train_cfg.weight_decay, train_cfg.clip_norm,
                train_cfg.adam_eps)
    dropout_rng = rng.child("dropout")

    dev_labels = labels_matrix(dev_docs, model.code_index)
    best_f1 = -1.0
    best_state = None
    best_threshold = Threshold(0.5)
    best_epoch = -1
    best_samples = samples
    best_syn = (syn_ids, syn_mask)
    history = []

    for epoch in range(train_cfg.epochs):
        t0 = time.time()
        if train_cfg.resample_synonyms and epoch > 0:
            samples = draw_synonym_samples(entries, m, sample_rng, model.vocab)
            syn_ids, syn_mask = pad_synonym_ids(samples, dtype)
        order = rng.child(f"epoch{epoch}").permutation(len(train_docs))
        epoch_loss = 0.0
        lr_now = opt.lr_at(opt.step_count)
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [train_docs[i] for i in order[start:start + train_cfg.batch_size]]
            ids, mask, labels = make_batch(batch, model.code_index, dtype)
            if train_cfg.rdrop_weight > 0.0:
                logits_a, logits_b = model.forward_twice(ids, mask, syn_ids, syn_mask,
                                                         dropout_rng)
                loss = rdrop_loss(logits_a, logits_b, labels, train_cfg.rdrop_weight)
            else:
                logits = model.forward(ids, mask, syn_ids, syn_mask, training=True,
                                       rng=dropout_rng)
                loss = bce_loss(ad.sigmoid(logits), labels)
            model.zero_grad()
            ad.backward(loss)
            opt.step()
            epoch_loss += loss.item()
        epoch_loss /= batches_per_epoch

        dev_probs = predict_probs(model, dev_docs, syn_ids, syn_mask, train_cfg.batch_size)
        thr = tune_threshold(dev_probs, dev_labels)
        dev_report = compute_report(dev_probs, dev_labels, model.codes, thr.value,
                                    train_cfg.p_at_k)
        entry = {
            "epoch": epoch,
            "train_loss": epoch_loss,
            "lr": lr_now,
            "dev_micro_f1": dev_report.micro_f1,
            "dev_macro_f1": dev_report.macro_f1,
            "dev_micro_auc": dev_report.micro_auc,
            "dev_macro_auc": dev_report.macro_auc,
            "threshold": thr.value,
            "seconds": round(time.time() - t0, 3),
        }
        history.append(entry)
        say(entry)
        if dev_report.micro_f1 > best_f1:
            best_f1 = dev_report.micro_f1
            best_state = model.snapshot()
            best_threshold = thr
            best_epoch = epoch
            best_samples = samples
            best_syn = (syn_ids, syn_mask)

    if best_state is not None:
        model.restore(best_state)

    test_report = None
    if test_docs:
        test_probs = predict_probs(model, test_docs, best_syn[0], best_syn[1],
                                   train_cfg.batch_size)
        test_report = compute_report(test_probs, labels_matrix(test_docs, model.code_index),
                                     model.codes, best_threshold.value, train_cfg.p_at_k)

    return TrainResult(model=model, threshold=best_threshold, history=history,
                       test_report=test_report, best_epoch=best_epoch,
                       synonym_sample=[list(s.chosen) for s in best_samples])
