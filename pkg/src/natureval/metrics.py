"""Confusion matrices, macro P/R/F1, per-class recall and Spearman's rho."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from natureval.errors import NumericError, ValidationError

LABELS = (1, 2, 3, 4, 5, 6)
K = len(LABELS)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = gold label, columns = predicted label (index = label - 1)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (K, K):
            raise ValidationError(f"confusion matrix must be {K}x{K}, got {c.shape}")
        if (c < 0).any():
            raise ValidationError("confusion matrix has negative entries")
        object.__setattr__(self, "counts", c)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    __hash__ = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, gold_pred: tuple[int, int]) -> int:
        g, p = gold_pred
        return int(self.counts[g - 1, p - 1])

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion(preds: Sequence[int], golds: Sequence[int]) -> ConfusionMatrix:
    p = np.asarray(preds, dtype=np.int64)
    g = np.asarray(golds, dtype=np.int64)
    if p.shape != g.shape or p.ndim != 1:
        raise ValidationError(f"preds and golds differ in length ({p.shape} vs {g.shape})")
    for name, arr in (("pred", p), ("gold", g)):
        bad = (arr < 1) | (arr > K)
        if bad.any():
            raise ValidationError(f"{name} label {arr[bad][0]} outside 1..{K}")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (g - 1, p - 1), 1)
    return ConfusionMatrix(counts)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def per_class_prf(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class precision, recall, F1; zero denominators give 0."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    precision = _safe_div(tp, c.sum(axis=0))
    recall = _safe_div(tp, c.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return precision, recall, f1


def macro_prf(cm: ConfusionMatrix) -> tuple[float, float, float, float]:
    """(precision, recall, f1, accuracy), macro-averaged unweighted over all six classes."""
    if cm.total == 0:
        raise ValidationError("empty confusion matrix")
    precision, recall, f1 = per_class_prf(cm)
    accuracy = np.trace(cm.counts) / cm.total
    return float(precision.mean()), float(recall.mean()), float(f1.mean()), float(accuracy)


def per_class_recall(cm: ConfusionMatrix) -> dict[int, float]:
    """Recall for each gold label with support; zero-support labels are omitted."""
    if cm.total == 0:
        raise ValidationError("empty confusion matrix")
    support = cm.counts.sum(axis=1)
    return {lab: float(cm.counts[i, i] / support[i]) for i, lab in enumerate(LABELS) if support[i] > 0}


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"spearman needs equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ValidationError("spearman needs at least two observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("spearman input contains non-finite values")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0:
        raise NumericError("correlation undefined for a constant sequence")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_recall: dict[int, float]
    confusion: ConfusionMatrix
    n: int

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class_recall": {str(k): v for k, v in self.per_class_recall.items()},
            "confusion": self.confusion.to_list(),
            "n": self.n,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(
            accuracy=obj["accuracy"],
            macro_precision=obj["macro_precision"],
            macro_recall=obj["macro_recall"],
            macro_f1=obj["macro_f1"],
            per_class_recall={int(k): v for k, v in obj["per_class_recall"].items()},
            confusion=ConfusionMatrix(np.asarray(obj["confusion"])),
            n=obj["n"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def evaluate(preds: Sequence[int], golds: Sequence[int]) -> EvalReport:
    cm = confusion(preds, golds)
    precision, recall, f1, accuracy = macro_prf(cm)
    return EvalReport(accuracy, precision, recall, f1, per_class_recall(cm), cm, cm.total)


def format_report(report: EvalReport, name: str = "model") -> str:
    """Plain-text table: overall rows first, then per-class support/correct/recall."""
    w = max(len(name), 8) + 2
    lines = [
        f"{'':<12}{name:>{w}}",
        f"{'F1_score':<12}{report.macro_f1:>{w}.2f}",
        f"{'recall':<12}{report.macro_recall:>{w}.2f}",
        f"{'precision':<12}{report.macro_precision:>{w}.2f}",
        f"{'accuracy':<12}{report.accuracy:>{w}.2f}",
        "",
    ]
    support = report.confusion.counts.sum(axis=1)
    correct = np.diag(report.confusion.counts)
    lines.append(f"{'naturalness':<16}" + "".join(f"{lab:>7}" for lab in LABELS))
    lines.append(f"{'test size':<16}" + "".join(f"{s:>7}" for s in support))
    lines.append(f"{'correct':<16}" + "".join(f"{c:>7}" for c in correct))
    lines.append(f"{'recall':<16}" + "".join(
        f"{report.per_class_recall[lab]:>7.2f}" if lab in report.per_class_recall else f"{'-':>7}" for lab in LABELS))
    return "\n".join(lines)
