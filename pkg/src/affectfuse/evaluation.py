"""Accuracy and unweighted average recall, the keyword baseline, and the
result tables.

UAR is the mean of the per-class recalls, which equals accuracy on balanced
ground truth. The baseline classifies a verbose response by whole-token
presence of exactly one of the two answer keywords; responses containing both
keywords or neither are excluded from evaluation and tallied separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .corpus import TRAITS, TaskSpec
from .errors import DegenerateClass, EmptyEvaluation, LengthMismatch
from .features import tokenize
from .fusion import DEFAULT_PLAN_STRINGS

BASELINE_ROW = "baseline"


class BaselineOutcome(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    uar: float
    n_evaluated: int
    n_excluded: int
    per_class_recall: tuple[float, float]  # (positive, negative)

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "uar": self.uar,
            "n_evaluated": self.n_evaluated,
            "n_excluded": self.n_excluded,
            "per_class_recall": list(self.per_class_recall),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(
            accuracy=obj["accuracy"],
            uar=obj["uar"],
            n_evaluated=obj["n_evaluated"],
            n_excluded=obj["n_excluded"],
            per_class_recall=tuple(obj["per_class_recall"]),
        )


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise EmptyEvaluation("no examples to evaluate")
    return (c.tp + c.tn) / c.total


def uar(c: ConfusionCounts) -> float:
    """Mean of the two per-class recalls."""
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise DegenerateClass("a class is absent from the ground truth")
    return 0.5 * (c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp))


def baseline_classify(response: str, task: TaskSpec) -> BaselineOutcome:
    """Keyword vote over whole tokens; both keywords or neither means excluded."""
    tokens = set(tokenize(response))
    has_positive = task.positive_keyword.lower() in tokens
    has_negative = task.negative_keyword.lower() in tokens
    if has_positive and not has_negative:
        return BaselineOutcome.POSITIVE
    if has_negative and not has_positive:
        return BaselineOutcome.NEGATIVE
    return BaselineOutcome.EXCLUDED


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    tp = fp = tn = fn = 0
    for pred, label in zip(predictions, labels):
        if label == 1:
            tp, fn = (tp + 1, fn) if pred == 1 else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if pred == 1 else (fp, tn + 1)
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def evaluate(predictions, labels, threshold: float = 0.5) -> EvalReport:
    """Score probabilities or baseline outcomes against (possibly real) labels.

    Probabilities and real-valued labels binarize at the threshold with ties
    going to the positive class. Excluded baseline outcomes are dropped from
    the counts and reported in n_excluded.
    """
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise LengthMismatch(
            f"{len(predictions)} predictions but {len(labels)} labels"
        )
    pairs: list[tuple[int, int]] = []
    n_excluded = 0
    for pred, label in zip(predictions, labels):
        truth = 1 if float(label) >= 0.5 else 0
        if isinstance(pred, BaselineOutcome):
            if pred is BaselineOutcome.EXCLUDED:
                n_excluded += 1
                continue
            pairs.append((1 if pred is BaselineOutcome.POSITIVE else 0, truth))
        else:
            pairs.append((1 if float(pred) >= threshold else 0, truth))
    if not pairs:
        raise EmptyEvaluation("every example was excluded")
    counts = confusion([p for p, _ in pairs], [t for _, t in pairs])
    recall_pos = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else float("nan")
    recall_neg = counts.tn / (counts.tn + counts.fp) if counts.tn + counts.fp else float("nan")
    return EvalReport(
        accuracy=accuracy(counts),
        uar=uar(counts),
        n_evaluated=counts.total,
        n_excluded=n_excluded,
        per_class_recall=(recall_pos, recall_neg),
    )


# -- result tables -----------------------------------------------------------

_PROBLEM_COLUMNS = [
    ("sentiment", "Sentiment"),
    ("suicide", "Suicide"),
    ("personality_avg", "Pers. Avg"),
] + [(f"personality_{t}", t) for t in TRAITS]


def _metric_value(report: EvalReport, metric: str) -> float:
    if metric == "accuracy":
        return report.accuracy
    if metric == "uar":
        return report.uar
    raise ValueError(f"unknown metric {metric!r}")


def _table_cells(
    results: Mapping[tuple[str, str], EvalReport], metric: str
) -> tuple[list[str], list[list[float | None]]]:
    rows = [BASELINE_ROW] + list(DEFAULT_PLAN_STRINGS)
    cells: list[list[float | None]] = []
    for plan in rows:
        row: list[float | None] = []
        for problem, _ in _PROBLEM_COLUMNS:
            if problem == "personality_avg":
                traits = [
                    _metric_value(results[(plan, f"personality_{t}")], metric)
                    for t in TRAITS
                    if (plan, f"personality_{t}") in results
                ]
                row.append(sum(traits) / len(traits) if traits else None)
            elif (plan, problem) in results:
                row.append(_metric_value(results[(plan, problem)], metric))
            else:
                row.append(None)
        cells.append(row)
    return rows, cells


def report_table(
    results: Mapping[tuple[str, str], EvalReport],
    metric: str = "accuracy",
    fmt: str = "markdown",
) -> str:
    """Render one metric's table over all plans and problems.

    Percentages use two decimals; missing cells show '--'; the Markdown
    variant bolds each column's best value.
    """
    if metric not in ("accuracy", "uar"):
        raise ValueError(f"unknown metric {metric!r}")
    rows, cells = _table_cells(results, metric)
    formatted = [[None if v is None else f"{100 * v:.2f}" for v in row] for row in cells]

    if fmt == "csv":
        lines = ["plan," + ",".join(key for key, _ in _PROBLEM_COLUMNS)]
        for plan, row in zip(rows, formatted):
            lines.append(plan + "," + ",".join(v if v is not None else "--" for v in row))
        return "\n".join(lines) + "\n"

    if fmt != "markdown":
        raise ValueError(f"unknown format {fmt!r}")
    best: list[float | None] = []
    for col in range(len(_PROBLEM_COLUMNS)):
        values = [row[col] for row in cells if row[col] is not None]
        best.append(max(values) if values else None)
    header = "| Plan | " + " | ".join(label for _, label in _PROBLEM_COLUMNS) + " |"
    sep = "|" + "---|" * (len(_PROBLEM_COLUMNS) + 1)
    lines = [f"## {metric.upper() if metric == 'uar' else metric.capitalize()} (%)", "", header, sep]
    for plan, row, raw in zip(rows, formatted, cells):
        rendered = []
        for col, value in enumerate(row):
            if value is None:
                rendered.append("--")
            elif best[col] is not None and raw[col] == best[col]:
                rendered.append(f"**{value}**")
            else:
                rendered.append(value)
        lines.append("| " + " | ".join([plan] + rendered) + " |")
    return "\n".join(lines) + "\n"
