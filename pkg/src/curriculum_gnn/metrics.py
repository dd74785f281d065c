"""Evaluation metrics (accuracy, macro-F1, macro one-vs-rest AUC,
per-class precision/recall, confusion counts) and the gradient-stability
diagnostics computed from a training history.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    auc: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    confusion: np.ndarray          # [C, C], rows = true class
    support: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "auc": self.auc,
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "confusion": self.confusion.tolist(),
            "support": self.support.tolist(),
        }


def _rank_with_ties(x: np.ndarray) -> np.ndarray:
    """1-based average ranks (ties share the mean rank)."""
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Probability a positive outranks a negative; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = _rank_with_ties(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(probs: np.ndarray, labels: np.ndarray, idx: np.ndarray,
                    num_classes: int) -> Metrics:
    """Metrics over the rows ``idx``; classes without support are excluded
    from the macro averages (with a warning)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("metrics over an empty node set")
    p = probs[idx]
    y = labels[idx]
    pred = np.argmax(p, axis=1)

    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    support = confusion.sum(axis=1)
    present = support > 0
    absent = [int(c) for c in np.where(~present)[0]]
    if absent:
        warnings.warn(f"classes {absent} absent from node set; excluded from "
                      "macro averages", stacklevel=2)

    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), 0.0)

    aucs = []
    for c in range(num_classes):
        if not present[c]:
            continue
        pos = y == c
        if pos.all():
            continue   # no negatives: undefined, skip like an absent class
        aucs.append(binary_auc(p[:, c], pos))

    return Metrics(
        accuracy=float(np.mean(pred == y)),
        macro_f1=float(np.mean(f1[present])),
        auc=float(np.mean(aucs)) if aucs else 0.0,
        per_class_precision=precision,
        per_class_recall=recall,
        confusion=confusion,
        support=support,
    )


def evaluate(model, graph: Graph, node_set) -> Metrics:
    """Run the model without dropout and score it on ``node_set``."""
    out = model.forward(graph, training=False)
    return compute_metrics(out.probs.data, graph.labels,
                           np.asarray(sorted(node_set), dtype=np.int64),
                           graph.num_classes)


def per_class_accuracy(model, graph: Graph, train_set) -> np.ndarray:
    """Fraction correct per class on the training nodes; empty classes 0."""
    out = model.forward(graph, training=False)
    idx = np.asarray(sorted(train_set), dtype=np.int64)
    pred = np.argmax(out.probs.data[idx], axis=1)
    y = graph.labels[idx]
    acc = np.zeros(graph.num_classes)
    missing = []
    for c in range(graph.num_classes):
        mask = y == c
        if np.any(mask):
            acc[c] = float(np.mean(pred[mask] == c))
        else:
            missing.append(c)
    if missing:
        warnings.warn(f"classes {missing} have no training nodes; accuracy 0",
                      stacklevel=2)
    return acc


@dataclass
class PhaseStats:
    phase: int
    epochs: int
    grad_norm_mean: float
    grad_norm_var: float
    pearson_r: float | None
    pearson_note: str | None
    slope: float | None
    intercept: float | None
    r_squared: float | None

    def to_dict(self) -> dict:
        return {
            "phase": self.phase, "epochs": self.epochs,
            "grad_norm_mean": self.grad_norm_mean,
            "grad_norm_var": self.grad_norm_var,
            "pearson_r": self.pearson_r, "pearson_note": self.pearson_note,
            "slope": self.slope, "intercept": self.intercept,
            "r_squared": self.r_squared,
        }


@dataclass
class StabilityReport:
    per_phase: list[PhaseStats] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"per_phase": [p.to_dict() for p in self.per_phase]}


def pearson_r(x: np.ndarray, y: np.ndarray) -> tuple[float | None, str | None]:
    if x.size < 2:
        return None, "fewer than two points"
    if np.std(x) == 0 or np.std(y) == 0:
        return None, "constant series"
    r = float(np.corrcoef(x, y)[0, 1])
    return r, None


def linear_fit(x: np.ndarray, y: np.ndarray):
    """Least-squares slope/intercept plus R^2; None for degenerate input."""
    if x.size < 2 or np.std(x) == 0:
        return None, None, None
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else None
    return float(slope), float(intercept), r2


def stability_report(grad_norms: np.ndarray, stage_score_means: np.ndarray,
                     total_epochs: int) -> StabilityReport:
    """Per-phase correlation of the phase's stage-attention score with the
    gradient norm, plus the linear trend and norm variance.

    ``stage_score_means`` is [epochs, 3]; phase i uses stage i+1's score.
    """
    grad_norms = np.asarray(grad_norms, dtype=np.float64)
    stage_score_means = np.asarray(stage_score_means, dtype=np.float64)
    epochs = grad_norms.shape[0]
    if epochs <= total_epochs / 3:
        raise ValueError("stability report needs history spanning at least 2 phases")
    bounds = [0, int(np.ceil(total_epochs / 3)), int(np.ceil(2 * total_epochs / 3)), epochs]
    report = StabilityReport()
    for phase in range(3):
        lo, hi = bounds[phase], min(bounds[phase + 1], epochs)
        if hi <= lo:
            continue
        y = grad_norms[lo:hi]
        x = stage_score_means[lo:hi, phase]
        r, note = pearson_r(x, y)
        slope, intercept, r2 = linear_fit(x, y)
        report.per_phase.append(PhaseStats(
            phase=phase + 1, epochs=hi - lo,
            grad_norm_mean=float(np.mean(y)), grad_norm_var=float(np.var(y)),
            pearson_r=r, pearson_note=note,
            slope=slope, intercept=intercept, r_squared=r2,
        ))
    return report
