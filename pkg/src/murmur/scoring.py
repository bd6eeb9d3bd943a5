"""Challenge weighted accuracy, plain accuracy, per-class accuracies, reports.

Correct Present / Unknown / Absent classifications weigh 5 / 3 / 1. All
metric arithmetic is exact (integer counts, one final division); rounding
to three decimals happens only when a report is rendered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from murmur.errors import EmptyEvaluation, UnknownLabelValue
from murmur.ingestion import LABEL_ORDER, MurmurLabel

CLASS_WEIGHTS = (5, 3, 1)  # Present, Unknown, Absent


@dataclass
class ConfusionMatrix:
    """3x3 counts, rows = true label, columns = predicted, order (Present, Unknown, Absent)."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        assert self.counts.shape == (3, 3)
        assert (self.counts >= 0).all()

    @property
    def totals(self) -> tuple[int, int, int]:
        """Per-class true totals (t_p, t_u, t_a)."""
        return tuple(int(v) for v in self.counts.sum(axis=1))

    @property
    def correct(self) -> tuple[int, int, int]:
        """Per-class correct counts (c_p, c_u, c_a)."""
        return tuple(int(v) for v in self.counts.diagonal())

    @property
    def n_total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ScoreReport:
    weighted_accuracy: float
    accuracy: float
    per_class: tuple[float | None, float | None, float | None]
    confusion: ConfusionMatrix
    n_patients: int


def tally_confusion(
    pairs: Iterable[tuple[MurmurLabel, MurmurLabel]],
) -> ConfusionMatrix:
    """Count (true, predicted) pairs into the canonical 3x3 layout."""
    index = {label: i for i, label in enumerate(LABEL_ORDER)}
    counts = np.zeros((3, 3), dtype=np.int64)
    for true, pred in pairs:
        if true not in index or pred not in index:
            raise UnknownLabelValue(f"labels must be murmur labels, got ({true!r}, {pred!r})")
        counts[index[true], index[pred]] += 1
    return ConfusionMatrix(counts=counts)


def weighted_correct_totals(
    cm: ConfusionMatrix,
    weights: Sequence[int] = CLASS_WEIGHTS,
) -> tuple[int, int]:
    """(numerator, denominator) of the generalized class-weighted accuracy, as integers."""
    num = sum(w * c for w, c in zip(weights, cm.correct))
    den = sum(w * t for w, t in zip(weights, cm.totals))
    return int(num), int(den)


def weighted_accuracy_exact(cm: ConfusionMatrix) -> Fraction:
    num, den = weighted_correct_totals(cm)
    if den == 0:
        raise EmptyEvaluation("all class totals are zero")
    return Fraction(num, den)


def weighted_accuracy(cm: ConfusionMatrix) -> float:
    """(5 c_p + 3 c_u + c_a) / (5 t_p + 3 t_u + t_a)."""
    num, den = weighted_correct_totals(cm)
    if den == 0:
        raise EmptyEvaluation("all class totals are zero")
    return num / den


def score_report(pairs: Sequence[tuple[MurmurLabel, MurmurLabel]]) -> ScoreReport:
    """Weighted accuracy, accuracy, and per-class accuracy for a set of predictions.

    A class with no true cases gets an explicit None marker, never a
    substituted 0 or 1.
    """
    cm = tally_confusion(pairs)
    num, den = weighted_correct_totals(cm)
    if den == 0:
        raise EmptyEvaluation("no patients to score")
    per_class = tuple(
        (c / t) if t > 0 else None for c, t in zip(cm.correct, cm.totals)
    )
    return ScoreReport(
        weighted_accuracy=num / den,
        accuracy=sum(cm.correct) / sum(cm.totals),
        per_class=per_class,
        confusion=cm,
        n_patients=cm.n_total,
    )


def report_to_dict(report: ScoreReport) -> dict:
    """Machine-readable report with the fixed key set."""
    names = ("per_class_present", "per_class_unknown", "per_class_absent")
    out: dict = {
        "weighted_accuracy": report.weighted_accuracy,
        "accuracy": report.accuracy,
        "n_patients": report.n_patients,
    }
    for name, value in zip(names, report.per_class):
        out[name] = value
    return out


def render_report_text(report: ScoreReport, title: str = "score report") -> str:
    """Human-readable report; values rounded to 3 decimals at render time only."""

    def fmt(v: float | None) -> str:
        return "undefined" if v is None else f"{v:.3f}"

    lines = [
        title,
        "=" * len(title),
        f"patients:          {report.n_patients}",
        f"weighted accuracy: {fmt(report.weighted_accuracy)}",
        f"accuracy:          {fmt(report.accuracy)}",
        "per-class accuracy:",
    ]
    for label, value in zip(LABEL_ORDER, report.per_class):
        lines.append(f"  {label.value:8s} {fmt(value)}")
    lines.append("confusion (rows true, cols predicted; order Present/Unknown/Absent):")
    for row in report.confusion.counts:
        lines.append("  " + " ".join(f"{int(v):6d}" for v in row))
    return "\n".join(lines) + "\n"


def write_report(report: ScoreReport, json_path: str | Path, text_path: str | Path, title: str = "score report") -> None:
    Path(json_path).write_text(json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")
    Path(text_path).write_text(render_report_text(report, title=title))
