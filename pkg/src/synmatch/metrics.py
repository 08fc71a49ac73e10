"""Multi-label evaluation: macro/micro AUC, macro/micro F1, precision@k.

Conventions, fixed for comparability:
  - AUC is the Mann-Whitney statistic P(score_pos > score_neg) + 0.5 P(tie),
    computed from average ranks. Labels with a single class are excluded
    from the macro mean and recorded in the report; a single-class micro
    problem is an error.
  - F1 uses 2*tp / (2*tp + fp + fn) with 0/0 -> 0. Macro averages over all
    labels.
  - precision@k ranks per document by (-score, code index): score ties break
    toward the lower code id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged (midrank)."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    bounds = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1], True])
    ranks_sorted = np.empty(len(x), dtype=np.float64)
    for s, e in zip(bounds[:-1], bounds[1:]):
        ranks_sorted[s:e] = 0.5 * (s + e - 1) + 1.0
    out = np.empty(len(x), dtype=np.float64)
    out[order] = ranks_sorted
    return out


def _binary_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: only one class present")
    ranks = _average_ranks(scores)
    return (ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def auc(scores: np.ndarray, labels: np.ndarray, mode: str) -> float:
    """scores, labels: (docs, codes). mode 'micro' pools every (doc, code) pair;
    'macro' averages per-code AUCs over codes that have both classes."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if mode == "micro":
        return _binary_auc(scores.ravel(), labels.ravel())
    if mode == "macro":
        vals = []
        for c in range(labels.shape[1]):
            col = labels[:, c]
            if 0 < col.sum() < len(col):
                vals.append(_binary_auc(scores[:, c], col))
        if not vals:
            raise ValueError("macro AUC undefined: no label has both classes")
        return float(np.mean(vals))
    raise ValueError(f"mode must be 'macro' or 'micro', got {mode!r}")


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1(predictions: np.ndarray, labels: np.ndarray, mode: str) -> float:
    """predictions: thresholded binary matrix, same shape as labels."""
    preds = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    if mode == "micro":
        tp = int((preds & labels).sum())
        fp = int((preds & ~labels).sum())
        fn = int((~preds & labels).sum())
        return _f1_from_counts(tp, fp, fn)
    if mode == "macro":
        vals = []
        for c in range(labels.shape[1]):
            tp = int((preds[:, c] & labels[:, c]).sum())
            fp = int((preds[:, c] & ~labels[:, c]).sum())
            fn = int((~preds[:, c] & labels[:, c]).sum())
            vals.append(_f1_from_counts(tp, fp, fn))
        return float(np.mean(vals))
    raise ValueError(f"mode must be 'macro' or 'micro', got {mode!r}")


def precision_at_k(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Mean over documents of (gold codes among the k best-scored) / k."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    n_codes = scores.shape[1]
    if not 1 <= k <= n_codes:
        raise ValueError(f"k must be in [1, {n_codes}], got {k}")
    fractions = []
    idx = np.arange(n_codes)
    for d in range(scores.shape[0]):
        top = np.lexsort((idx, -scores[d]))[:k]
        fractions.append(labels[d, top].sum() / k)
    return float(np.mean(fractions))


@dataclass
class LabelStats:
    code: str
    tp: int
    fp: int
    fn: int
    auc: float | None


@dataclass
class EvalReport:
    """Aggregate and per-label evaluation results at a fixed threshold."""

    macro_auc: float
    micro_auc: float
    macro_f1: float
    micro_f1: float
    p_at_k: dict[int, float]
    threshold: float
    per_label: list[LabelStats] = field(default_factory=list)
    excluded_labels: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "macro_auc": self.macro_auc,
            "micro_auc": self.micro_auc,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "p_at_k": {str(k): v for k, v in self.p_at_k.items()},
            "threshold": self.threshold,
            "excluded_labels": list(self.excluded_labels),
            "per_label": [
                {"code": s.code, "tp": s.tp, "fp": s.fp, "fn": s.fn, "auc": s.auc}
                for s in self.per_label
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        ks = sorted(self.p_at_k)
        head = f"{'':8s}{'AUC':>14s}{'':4s}{'F1':>12s}"
        cols = f"{'':8s}{'Macro':>7s}{'Micro':>7s}{'':4s}{'Macro':>6s}{'Micro':>6s}"
        vals = (f"{'model':8s}{self.macro_auc:7.4f}{self.micro_auc:7.4f}{'':4s}"
                f"{self.macro_f1:6.4f}{self.micro_f1:6.4f}")
        for k in ks:
            cols += f"{'P@' + str(k):>8s}"
            vals += f"{self.p_at_k[k]:8.4f}"
        lines = [head, cols, vals, f"threshold = {self.threshold:.4f}"]
        if self.excluded_labels:
            lines.append(
                f"macro AUC excluded single-class labels: {', '.join(self.excluded_labels)}")
        return "\n".join(lines)


def compute_report(scores: np.ndarray, labels: np.ndarray, codes: list[str],
                   threshold: float, ks=(5,)) -> EvalReport:
    """Evaluate scores against gold labels at one decision threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    preds = scores >= threshold
    per_label = []
    excluded = []
    macro_vals = []
    for c, code in enumerate(codes):
        col = labels[:, c]
        tp = int((preds[:, c] & (col == 1)).sum())
        fp = int((preds[:, c] & (col == 0)).sum())
        fn = int((~preds[:, c] & (col == 1)).sum())
        if 0 < col.sum() < len(col):
            label_auc = _binary_auc(scores[:, c], col)
            macro_vals.append(label_auc)
        else:
            label_auc = None
            excluded.append(code)
        per_label.append(LabelStats(code, tp, fp, fn, label_auc))
    if not macro_vals:
        raise ValueError("macro AUC undefined: no label has both classes")
    return EvalReport(
        macro_auc=float(np.mean(macro_vals)),
        micro_auc=auc(scores, labels, "micro"),
        macro_f1=f1(preds, labels, "macro"),
        micro_f1=f1(preds, labels, "micro"),
        p_at_k={int(k): precision_at_k(scores, labels, int(k)) for k in ks},
        threshold=float(threshold),
        per_label=per_label,
        excluded_labels=excluded,
    )
