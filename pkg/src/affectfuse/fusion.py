"""Modalities and their fusion: early (feature concatenation into one model)
and late (uniform averaging of per-modality predicted probabilities).

Plan grammar: [("early:"|"late:")] MOD ("&" MOD)*, MOD = ("text"|"chat") "+"
("emb"|"bow"). No prefix means a single-modality plan.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import EmptyList, IdMismatch, LengthMismatch, MissingModality, PlanSyntaxError
from .features import FeatureMatrix
from .net import MLPConfig, predict_proba, train


class TextSource(str, Enum):
    ORIGINAL = "text"
    RESPONSE = "chat"


class FeaturizerKind(str, Enum):
    EMBEDDING = "emb"
    BOW = "bow"


@dataclass(frozen=True)
class Modality:
    source: TextSource
    featurizer: FeaturizerKind

    @property
    def key(self) -> str:
        return f"{self.source.value}+{self.featurizer.value}"


ALL_MODALITIES = tuple(
    Modality(s, f) for s in TextSource for f in FeaturizerKind
)


class FusionMode(str, Enum):
    SINGLE = "single"
    EARLY = "early"
    LATE = "late"


@dataclass(frozen=True)
class FusionPlan:
    modalities: tuple[Modality, ...]
    mode: FusionMode

    def __post_init__(self):
        if not self.modalities:
            raise ValueError("a plan needs at least one modality")
        if len(set(self.modalities)) != len(self.modalities):
            raise ValueError("plan modalities must be distinct")
        if self.mode is FusionMode.SINGLE and len(self.modalities) != 1:
            raise ValueError("a single plan has exactly one modality")
        if self.mode is not FusionMode.SINGLE and len(self.modalities) < 2:
            raise ValueError(f"{self.mode.value} fusion needs at least two modalities")

    @property
    def key(self) -> str:
        mods = "&".join(m.key for m in self.modalities)
        if self.mode is FusionMode.SINGLE:
            return mods
        return f"{self.mode.value}:{mods}"


_MOD_RE = re.compile(r"(text|chat)\+(emb|bow)")


def parse_plan(s: str) -> FusionPlan:
    """Parse a plan string, reporting the character position of any error."""
    pos = 0
    mode = FusionMode.SINGLE
    if s.startswith("early:"):
        mode, pos = FusionMode.EARLY, len("early:")
    elif s.startswith("late:"):
        mode, pos = FusionMode.LATE, len("late:")
    modalities: list[Modality] = []
    while True:
        match = _MOD_RE.match(s, pos)
        if match is None:
            raise PlanSyntaxError(
                "expected a modality like 'text+emb' or 'chat+bow'", pos
            )
        modality = Modality(TextSource(match.group(1)), FeaturizerKind(match.group(2)))
        if modality in modalities:
            raise PlanSyntaxError(f"duplicate modality '{modality.key}'", pos)
        modalities.append(modality)
        pos = match.end()
        if pos == len(s):
            break
        if s[pos] != "&":
            raise PlanSyntaxError("expected '&' between modalities", pos)
        pos += 1
    if mode is FusionMode.SINGLE and len(modalities) > 1:
        raise PlanSyntaxError(
            "multiple modalities need an 'early:' or 'late:' prefix", 0
        )
    if mode is not FusionMode.SINGLE and len(modalities) < 2:
        raise PlanSyntaxError(f"{mode.value} fusion needs at least two modalities", pos)
    return FusionPlan(modalities=tuple(modalities), mode=mode)


# The experiment grid: four single branches, five early combinations, five
# late combinations. A keyword baseline row is reported alongside.
DEFAULT_PLAN_STRINGS = (
    "text+emb",
    "text+bow",
    "chat+emb",
    "chat+bow",
    "early:text+emb&chat+emb",
    "early:text+bow&chat+bow",
    "early:text+emb&text+bow",
    "early:chat+emb&chat+bow",
    "early:text+emb&text+bow&chat+emb&chat+bow",
    "late:text+emb&chat+emb",
    "late:text+bow&chat+bow",
    "late:text+emb&text+bow",
    "late:chat+emb&chat+bow",
    "late:text+emb&text+bow&chat+emb&chat+bow",
)


def early_fuse(features: list[FeatureMatrix]) -> FeatureMatrix:
    """Concatenate feature columns; all inputs must share ids in the same order."""
    if not features:
        raise EmptyList("nothing to fuse")
    ids = features[0].ids
    for fm in features[1:]:
        if fm.ids != ids:
            raise IdMismatch("feature matrices disagree on example ids or order")
    return FeatureMatrix(ids=ids, data=np.hstack([fm.data for fm in features]))


def late_fuse(probability_vectors: list[np.ndarray]) -> np.ndarray:
    """Elementwise arithmetic mean of per-model probability vectors."""
    if not probability_vectors:
        raise EmptyList("nothing to fuse")
    arrays = [np.asarray(p, dtype=np.float64) for p in probability_vectors]
    length = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != length:
            raise LengthMismatch(f"probability vectors of shapes {length} and {a.shape}")
    return np.mean(arrays, axis=0)


def training_units(plan: FusionPlan) -> list[FusionPlan]:
    """The independently trained models a plan needs.

    Late fusion trains one single-modality model per member; single and early
    plans train exactly one model.
    """
    if plan.mode is FusionMode.LATE:
        return [FusionPlan((m,), FusionMode.SINGLE) for m in plan.modalities]
    return [plan]


SplitFeatures = tuple[FeatureMatrix, FeatureMatrix, FeatureMatrix]  # train, dev, test


def unit_features(
    unit: FusionPlan, features: Mapping[Modality, SplitFeatures]
) -> SplitFeatures:
    """Assemble the (train, dev, test) matrices one training unit consumes."""
    for modality in unit.modalities:
        if modality not in features:
            raise MissingModality(f"no features for modality '{modality.key}'")
    parts = [features[m] for m in unit.modalities]
    if len(parts) == 1:
        return parts[0]
    return tuple(early_fuse([p[i] for p in parts]) for i in range(3))  # type: ignore[return-value]


def run_plan(
    plan: FusionPlan,
    features: Mapping[Modality, SplitFeatures],
    y_train: np.ndarray,
    y_dev: np.ndarray,
    configs: Mapping[str, MLPConfig],
) -> np.ndarray:
    """Train the plan's models and return predicted probabilities on test."""
    units = training_units(plan)
    unit_inputs = [unit_features(u, features) for u in units]  # fail before training
    probs: list[np.ndarray] = []
    for unit, (tr, dv, te) in zip(units, unit_inputs):
        model = train(configs[unit.key], tr.data, y_train, dv.data, y_dev)
        probs.append(predict_proba(model, te.data))
    if plan.mode is FusionMode.LATE:
        return late_fuse(probs)
    return probs[0]
