"""Confusion matrices, per-class recall/precision/F1 and report rendering."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

CSV_HEADER = ("class", "count", "recall", "precision", "f1")
OVERALL_ROW = "__overall__"


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    """Confusion matrix (rows = true class, columns = predicted) and derived scores."""

    confusion: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        cm = np.array(self.confusion, dtype=np.int64, copy=True)
        m = len(self.class_names)
        if cm.shape != (m, m):
            raise ValueError(f"confusion matrix shape {cm.shape} does not match {m} classes")
        cm.setflags(write=False)
        object.__setattr__(self, "confusion", cm)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def per_class_accuracy(self) -> np.ndarray:
        """Per-class recall: diagonal over row sums."""
        return _safe_div(np.diag(self.confusion), self.confusion.sum(axis=1))

    recall = per_class_accuracy

    @property
    def precision(self) -> np.ndarray:
        return _safe_div(np.diag(self.confusion), self.confusion.sum(axis=0))

    @property
    def per_class_f1(self) -> np.ndarray:
        p, r = self.precision, self.recall
        return _safe_div(2 * p * r, p + r)

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    def __add__(self, other: "EvaluationReport") -> "EvaluationReport":
        if self.class_names != other.class_names:
            raise ValueError("cannot merge reports over different classes")
        return EvaluationReport(self.confusion + other.confusion, self.class_names)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def report_from_labels(y_true, y_pred, class_names) -> EvaluationReport:
    return EvaluationReport(confusion_matrix(y_true, y_pred, len(class_names)), tuple(class_names))


def evaluate(predict_fn, testset) -> EvaluationReport:
    """Run ``predict_fn`` (feature matrix -> class indices) over ``testset``."""
    if len(testset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    y_pred = np.asarray(predict_fn(testset.X)).reshape(-1)
    return report_from_labels(testset.y, y_pred, testset.catalog.names)


def to_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for name, n, r, p, f in zip(
        report.class_names, report.support, report.recall, report.precision, report.per_class_f1
    ):
        w.writerow([name, int(n), f"{r:.4f}", f"{p:.4f}", f"{f:.4f}"])
    w.writerow([OVERALL_ROW, report.total, f"{report.accuracy:.4f}", "", ""])
    return buf.getvalue()


def to_table(report: EvaluationReport, extra_lines=()) -> str:
    width = max([len(n) for n in report.class_names] + [len("accuracy")])
    lines = [f"{'class':<{width}}  {'count':>6}  {'recall':>7}  {'precis':>7}  {'f1':>7}"]
    lines.append("-" * len(lines[0]))
    for name, n, r, p, f in zip(
        report.class_names, report.support, report.recall, report.precision, report.per_class_f1
    ):
        lines.append(f"{name:<{width}}  {int(n):>6d}  {r:>7.4f}  {p:>7.4f}  {f:>7.4f}")
    lines.append("-" * len(lines[0]))
    lines.append(f"{'accuracy':<{width}}  {report.total:>6d}  {report.accuracy:>7.4f}")
    lines.extend(extra_lines)
    return "\n".join(lines) + "\n"


def emit_report(report: EvaluationReport, fmt: str = "csv", extra_lines=()) -> str:
    """Render as ``"csv"`` (machine readable) or ``"table"`` (aligned text)."""
    if fmt == "csv":
        return to_csv(report)
    if fmt == "table":
        return to_table(report, extra_lines)
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report_csv(text: str) -> dict:
    """Inverse of :func:`to_csv`; returns per-class rows and the overall row."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("not a report CSV: bad header")
    classes, overall = [], None
    for row in rows[1:]:
        if row[0] == OVERALL_ROW:
            overall = {"total": int(row[1]), "accuracy": float(row[2])}
        else:
            classes.append({
                "class": row[0],
                "count": int(row[1]),
                "recall": float(row[2]),
                "precision": float(row[3]),
                "f1": float(row[4]),
            })
    if overall is None:
        raise ValueError("report CSV lacks the overall row")
    return {"classes": classes, "overall": overall}
