"""Multi-class evaluation: confusion matrix, per-class and macro-averaged
precision/recall/F1/specificity, accuracy, and the multi-class Matthews
correlation coefficient.

Per-class metrics with a zero denominator contribute 0 to the macro average
and are flagged as undefined rather than producing NaN.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "mcc", "specificity")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray          # (k, k) int64; rows = true class, cols = predicted
    class_names: list

    @property
    def k(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    name: str
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    specificity: float
    undefined: tuple

    def to_dict(self):
        return {
            "name": self.name, "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "specificity": self.specificity, "undefined": list(self.undefined),
        }


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    specificity: float
    n_samples: int
    per_class: list

    def to_dict(self):
        return {
            "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
            "f1": self.f1, "mcc": self.mcc, "specificity": self.specificity,
            "n_samples": self.n_samples,
            "per_class": [c.to_dict() for c in self.per_class],
        }

    @classmethod
    def from_dict(cls, d):
        per_class = [ClassMetrics(name=c["name"], tp=c["tp"], fp=c["fp"], fn=c["fn"],
                                  tn=c["tn"], precision=c["precision"], recall=c["recall"],
                                  f1=c["f1"], specificity=c["specificity"],
                                  undefined=tuple(c["undefined"]))
                     for c in d["per_class"]]
        return cls(accuracy=d["accuracy"], precision=d["precision"], recall=d["recall"],
                   f1=d["f1"], mcc=d["mcc"], specificity=d["specificity"],
                   n_samples=d["n_samples"], per_class=per_class)


def confusion(labels, predictions, k, class_names=None):
    """Count (true, predicted) pairs into a k-by-k matrix."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise ValueError(
            f"labels {labels.shape} and predictions {predictions.shape} must be equal-length vectors")
    if labels.size == 0:
        raise ValueError("cannot build a confusion matrix from empty inputs")
    for name, arr in (("label", labels), ("prediction", predictions)):
        bad = (arr < 0) | (arr >= k)
        if bad.any():
            idx = int(np.argmax(bad))
            raise ValueError(f"{name} out of range at index {idx}: {arr[idx]} not in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    if class_names is None:
        class_names = [str(c) for c in range(k)]
    if len(class_names) != k:
        raise ValueError(f"expected {k} class names, got {len(class_names)}")
    return ConfusionMatrix(counts=counts, class_names=list(class_names))


def multiclass_mcc(counts):
    """Matthews correlation from the full matrix (covariance form).

    Reduces to the familiar 2x2 formula at k=2; returns 0 when either
    marginal has zero variance.
    """
    c = counts.astype(np.float64)
    s = c.sum()
    trace = np.trace(c)
    t_k = c.sum(axis=1)  # true-class marginals
    p_k = c.sum(axis=0)  # predicted-class marginals
    num = trace * s - float(t_k @ p_k)
    den = np.sqrt((s * s - float(p_k @ p_k)) * (s * s - float(t_k @ t_k)))
    if den == 0.0:
        return 0.0
    return float(num / den)


def compute_metrics(cm):
    """Macro-averaged report over all classes of a confusion matrix."""
    counts = cm.counts
    total = counts.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    k = counts.shape[0]
    tp = np.diag(counts)
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    fn = row - tp
    fp = col - tp
    tn = total - tp - fn - fp

    per_class = []
    for c in range(k):
        undefined = []
        if tp[c] + fp[c] > 0:
            precision = float(tp[c] / (tp[c] + fp[c]))
        else:
            precision = 0.0
            undefined.append("precision")
        if tp[c] + fn[c] > 0:
            recall = float(tp[c] / (tp[c] + fn[c]))
        else:
            recall = 0.0
            undefined.append("recall")
        if precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        if tn[c] + fp[c] > 0:
            specificity = float(tn[c] / (tn[c] + fp[c]))
        else:
            specificity = 0.0
            undefined.append("specificity")
        per_class.append(ClassMetrics(
            name=cm.class_names[c], tp=int(tp[c]), fp=int(fp[c]), fn=int(fn[c]), tn=int(tn[c]),
            precision=precision, recall=recall, f1=f1, specificity=specificity,
            undefined=tuple(undefined)))

    return MetricReport(
        accuracy=float(np.trace(counts) / total),
        precision=float(np.mean([c.precision for c in per_class])),
        recall=float(np.mean([c.recall for c in per_class])),
        f1=float(np.mean([c.f1 for c in per_class])),
        mcc=multiclass_mcc(counts),
        specificity=float(np.mean([c.specificity for c in per_class])),
        n_samples=int(total),
        per_class=per_class)


def render_report(report, cm, out_dir):
    """Write metrics.json, confusion_matrix.csv, and report.txt into a directory."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out_dir}")
    json_path = out_dir / "metrics.json"
    csv_path = out_dir / "confusion_matrix.csv"
    txt_path = out_dir / "report.txt"

    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")

    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\predicted"] + list(cm.class_names))
        for i, name in enumerate(cm.class_names):
            writer.writerow([name] + [int(v) for v in cm.counts[i]])

    header = ["Accuracy", "Precision", "Recall", "F1-score", "MCC", "Specificity"]
    values = [report.accuracy, report.precision, report.recall, report.f1,
              report.mcc, report.specificity]
    lines = [
        "  ".join(f"{h:>11s}" for h in header),
        "  ".join(f"{v:11.4f}" for v in values),
        "",
        f"samples: {report.n_samples}",
        "",
        "per-class:",
    ]
    for c in report.per_class:
        flags = f"  (undefined: {', '.join(c.undefined)})" if c.undefined else ""
        lines.append(f"  {c.name}: precision={c.precision:.4f} recall={c.recall:.4f} "
                     f"f1={c.f1:.4f} specificity={c.specificity:.4f}{flags}")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return json_path, csv_path, txt_path
