"""Confusion matrix, per-class report, and ROC-AUC."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from vitforge.errors import DimensionError, LabelError, UndefinedMetricError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # int64 (C, C); rows = true class, cols = predicted
    class_names: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return int(np.trace(self.counts)) / self.total

    def to_list(self) -> list[list[int]]:
        return self.counts.astype(int).tolist()


@dataclass
class ScoredPrediction:
    truth: int
    predicted: int
    score: float  # positive-class probability


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False


@dataclass
class Averages:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    classes: list[ClassMetrics]
    accuracy: float
    macro_avg: Averages
    weighted_avg: Averages
    roc_auc: float | None = None
    confusion: list[list[int]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(c.support for c in self.classes)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ClassificationReport":
        return cls(
            classes=[ClassMetrics(**c) for c in d["classes"]],
            accuracy=d["accuracy"],
            macro_avg=Averages(**d["macro_avg"]),
            weighted_avg=Averages(**d["weighted_avg"]),
            roc_auc=d.get("roc_auc"),
            confusion=d.get("confusion", []),
        )


def confusion_matrix(truth, pred, num_classes: int, class_names=None) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise DimensionError(f"truth {truth.shape} and predictions {pred.shape} differ in length")
    if truth.size == 0:
        raise DimensionError("confusion matrix needs at least one sample")
    for arr, what in ((truth, "truth"), (pred, "prediction")):
        bad = np.flatnonzero((arr < 0) | (arr >= num_classes))
        if bad.size:
            raise LabelError(f"{what} label {int(arr[bad[0]])} at index {int(bad[0])} out of range")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    names = list(class_names) if class_names else [str(i) for i in range(num_classes)]
    return ConfusionMatrix(counts, names)


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def classification_report(cm: ConfusionMatrix, roc_auc: float | None = None) -> ClassificationReport:
    """Per-class precision/recall/F1; 0/0 rates become 0.0 with ``degenerate`` set."""
    counts = cm.counts
    total = cm.total
    if total <= 0:
        raise DimensionError("classification report over zero samples")
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    classes = []
    for c, name in enumerate(cm.class_names):
        tp = int(counts[c, c])
        precision, d1 = _ratio(tp, int(cols[c]))
        recall, d2 = _ratio(tp, int(rows[c]))
        f1, d3 = _ratio(2 * precision * recall, precision + recall) if precision + recall else (0.0, True)
        classes.append(ClassMetrics(name, precision, recall, f1, int(rows[c]), d1 or d2 or d3))
    n = len(classes)
    macro = Averages(
        sum(c.precision for c in classes) / n,
        sum(c.recall for c in classes) / n,
        sum(c.f1 for c in classes) / n,
        total,
    )
    # recall_c * support_c == tp_c, so summing tp directly keeps weighted recall == accuracy exactly
    weighted = Averages(
        sum(c.precision * c.support for c in classes) / total,
        int(np.trace(counts)) / total,
        sum(c.f1 * c.support for c in classes) / total,
        total,
    )
    return ClassificationReport(classes, cm.accuracy, macro, weighted, roc_auc, cm.to_list())


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank, returned doubled (always integers)."""
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks2 = np.empty(len(scores), dtype=np.int64)
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # mean of ranks (i+1 .. j+1), doubled
        ranks2[order[i:j + 1]] = (i + 1) + (j + 1)
        i = j + 1
    return ranks2


def roc_auc(truth, scores, positive: int = 0) -> float:
    """Mann-Whitney AUC of ``scores`` for class ``positive``; ties count one half."""
    truth = np.asarray(truth)
    scores = np.asarray(scores, dtype=np.float64)
    if truth.shape != scores.shape:
        raise DimensionError(f"truth {truth.shape} and scores {scores.shape} differ in length")
    if np.isnan(scores).any():
        raise UndefinedMetricError("NaN score")
    pos = truth == positive
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs at least one positive and one negative sample")
    ranks2 = _average_ranks(scores)
    u2 = int(ranks2[pos].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


def roc_auc_scored(preds: list[ScoredPrediction], positive: int = 0) -> float:
    return roc_auc([p.truth for p in preds], [p.score for p in preds], positive)


def roc_curve(truth, scores, positive: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) swept over every distinct score threshold, from (0, 0) to (1, 1)."""
    truth = np.asarray(truth)
    scores = np.asarray(scores, dtype=np.float64)
    pos = truth == positive
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC curve needs both classes")
    fpr, tpr = [0.0], [0.0]
    for thr in np.unique(scores)[::-1]:
        sel = scores >= thr
        tpr.append(int((sel & pos).sum()) / n_pos)
        fpr.append(int((sel & ~pos).sum()) / n_neg)
    return np.array(fpr), np.array(tpr)


def trapezoid_auc(fpr, tpr) -> float:
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(tpr, fpr))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render_report(report: ClassificationReport, digits: int = 2) -> str:
    """Text table in the familiar sklearn layout."""
    headers = ["precision", "recall", "f1-score", "support"]
    names = [c.name for c in report.classes] + ["weighted avg"]
    width = max(len(n) for n in names)
    head_fmt = "{:>{width}s} " + " {:>9}" * len(headers)
    lines = [head_fmt.format("", *headers, width=width), ""]
    row_fmt = "{:>{width}s} " + " {:>9.{digits}f}" * 3 + " {:>9}"
    for c in report.classes:
        lines.append(row_fmt.format(c.name, c.precision, c.recall, c.f1, c.support,
                                    width=width, digits=digits))
    lines.append("")
    total = report.total
    lines.append(
        "{:>{width}s} ".format("accuracy", width=width)
        + " {:>9}".format("") * 2
        + " {:>9.{digits}f}".format(report.accuracy, digits=digits)
        + " {:>9}".format(total)
    )
    for label, avg in (("macro avg", report.macro_avg), ("weighted avg", report.weighted_avg)):
        lines.append(row_fmt.format(label, avg.precision, avg.recall, avg.f1, avg.support,
                                    width=width, digits=digits))
    return "\n".join(lines) + "\n"


def render_confusion(cm: ConfusionMatrix) -> str:
    width = max(max(len(n) for n in cm.class_names), len(str(int(cm.counts.max()))), 4)
    lines = ["Confusion Matrix (rows = true, cols = predicted):",
             " " * width + "".join(f" {n:>{width}}" for n in cm.class_names)]
    for name, row in zip(cm.class_names, cm.counts):
        lines.append(f"{name:>{width}}" + "".join(f" {int(v):>{width}}" for v in row))
    return "\n".join(lines) + "\n"


def report_json(report: ClassificationReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True)
