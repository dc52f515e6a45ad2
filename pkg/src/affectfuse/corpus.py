"""Labeled text datasets: loading, filtering, and train/dev/test splits.

Three task families are supported: binary sentiment, binary suicide-tendency
detection, and big-five personality traits with real-valued labels in [0, 1].
Personality files carry all five trait labels per text; loading one with a
single-trait task materializes that trait's dataset.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, LabelError, ParseError, SizeError

TRAITS = ("O", "C", "E", "A", "N")

TRAIT_NAMES = {
    "O": "Openness to experience",
    "C": "Conscientiousness",
    "E": "Extraversion",
    "A": "Agreeableness",
    "N": "Neuroticism",
}


class TaskKind(str, Enum):
    SENTIMENT = "sentiment"
    SUICIDE = "suicide"
    PERSONALITY = "personality"


class LabelKind(str, Enum):
    BINARY = "binary"
    REAL = "real"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    label_kind: LabelKind
    positive_keyword: str
    negative_keyword: str
    trait: str | None = None

    @property
    def name(self) -> str:
        if self.kind is TaskKind.PERSONALITY:
            return f"personality_{self.trait}"
        return self.kind.value

    @property
    def trait_name(self) -> str:
        if self.trait is None:
            raise ValueError(f"task {self.name} has no personality trait")
        return TRAIT_NAMES[self.trait]


def sentiment_task() -> TaskSpec:
    return TaskSpec(TaskKind.SENTIMENT, LabelKind.BINARY, "positive", "negative")


def suicide_task() -> TaskSpec:
    return TaskSpec(TaskKind.SUICIDE, LabelKind.BINARY, "yes", "no")


def personality_task(trait: str) -> TaskSpec:
    if trait not in TRAITS:
        raise ValueError(f"unknown trait {trait!r}, expected one of {TRAITS}")
    return TaskSpec(TaskKind.PERSONALITY, LabelKind.REAL, "high", "low", trait=trait)


def task_from_name(name: str) -> TaskSpec:
    if name == "sentiment":
        return sentiment_task()
    if name == "suicide":
        return suicide_task()
    if name.startswith("personality_"):
        return personality_task(name.removeprefix("personality_"))
    raise ValueError(f"unknown task name {name!r}")


@dataclass(frozen=True)
class Example:
    id: str
    text: str
    label: float  # 0.0/1.0 for binary tasks, any value in [0, 1] for real tasks


@dataclass
class DatasetSplit:
    train: list[Example]
    dev: list[Example]
    test: list[Example]

    def require_trainable(self) -> None:
        for name in ("train", "dev", "test"):
            if not getattr(self, name):
                raise EmptyDataset(f"{name} split is empty")
        ids = [e.id for part in (self.train, self.dev, self.test) for e in part]
        if len(ids) != len(set(ids)):
            raise SizeError("train/dev/test splits share example ids")


def _parse_binary_label(raw, task: TaskSpec) -> float:
    if isinstance(raw, str):
        text = raw.strip().lower()
        if text == task.positive_keyword:
            return 1.0
        if text == task.negative_keyword:
            return 0.0
        try:
            raw = float(text)
        except ValueError:
            raise LabelError(f"cannot interpret {raw!r} as a binary label")
    value = float(raw)
    if value not in (0.0, 1.0):
        raise LabelError(f"binary label must be 0 or 1, got {value}")
    return value


def _parse_real_label(raw) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise LabelError(f"cannot interpret {raw!r} as a real label")
    if not (0.0 <= value <= 1.0):
        raise LabelError(f"real label must lie in [0, 1], got {value}")
    return value


def _extract_label(row: dict, task: TaskSpec, row_index: int) -> float:
    raw = None
    if task.kind is TaskKind.PERSONALITY:
        labels = row.get("labels")
        if isinstance(labels, dict):
            if task.trait not in labels:
                raise ParseError(f"missing trait {task.trait!r} in labels", row_index)
            raw = labels[task.trait]
        elif task.trait in row:  # CSV files carry one column per trait
            raw = row[task.trait]
        else:
            raw = row.get("label")
    else:
        raw = row.get("label")
    if raw is None or raw == "":
        raise ParseError("missing label", row_index)
    if task.label_kind is LabelKind.BINARY:
        return _parse_binary_label(raw, task)
    return _parse_real_label(raw)


def _rows_from_file(path: Path, fmt: str):
    if fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON ({exc.msg})", i)
                if not isinstance(row, dict):
                    raise ParseError("line is not a JSON object", i)
                yield i, row
    elif fmt == "csv":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ParseError("missing CSV header row", 0)
            for i, row in enumerate(reader):
                yield i, row
    else:
        raise ValueError(f"unknown format {fmt!r}, expected 'csv' or 'jsonl'")


def load_dataset(path: str | Path, fmt: str, task: TaskSpec) -> list[Example]:
    """Load one task's examples from a CSV or JSONL file.

    Missing ids are synthesized as zero-padded row indices. Binary labels
    accept 0/1 and the task's keyword strings case-insensitively.
    """
    path = Path(path)
    examples: list[Example] = []
    seen: set[str] = set()
    for i, row in _rows_from_file(path, fmt):
        text = row.get("text")
        if text is None:
            raise ParseError("missing text field", i)
        try:
            label = _extract_label(row, task, i)
        except LabelError as exc:
            raise LabelError(f"row {i}: {exc}") from None
        example_id = row.get("id") or f"{i:06d}"
        if example_id in seen:
            raise ParseError(f"duplicate id {example_id!r}", i)
        seen.add(example_id)
        examples.append(Example(id=str(example_id), text=str(text), label=label))
    if not examples:
        raise EmptyDataset(f"no examples in {path}")
    return examples


def save_jsonl(examples: list[Example], path: str | Path) -> None:
    """Write examples as JSONL; a reload reproduces every field exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(json.dumps({"id": e.id, "text": e.text, "label": e.label}) + "\n")


def filter_max_chars(examples: list[Example], max_chars: int = 512) -> list[Example]:
    """Keep examples whose text is at most max_chars characters long."""
    if max_chars < 1:
        raise ValueError("max_chars must be >= 1")
    return [e for e in examples if len(e.text) <= max_chars]


def split_dataset(
    examples: list[Example], sizes: tuple[int, int, int], seed: int
) -> DatasetSplit:
    """Shuffle with the given seed and slice off train/dev/test of the given sizes."""
    n_train, n_dev, n_test = sizes
    if min(sizes) < 0:
        raise SizeError(f"split sizes must be nonnegative, got {sizes}")
    if n_train + n_dev + n_test > len(examples):
        raise SizeError(
            f"requested {n_train + n_dev + n_test} examples but only {len(examples)} available"
        )
    order = np.random.default_rng(seed).permutation(len(examples))
    shuffled = [examples[i] for i in order]
    return DatasetSplit(
        train=shuffled[:n_train],
        dev=shuffled[n_train : n_train + n_dev],
        test=shuffled[n_train + n_dev : n_train + n_dev + n_test],
    )
