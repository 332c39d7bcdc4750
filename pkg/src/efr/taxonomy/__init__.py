"""Instigator labels, their coarse groupings, polarity sets and output masks."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Dict, FrozenSet, Iterable, List, Mapping, Tuple

import numpy as np

from efr.corpus import EMOTIONS, Emotion, EfrInstance

POSITIVE = "positive"
NEGATIVE = "negative"
AMBIGUOUS = "ambiguous"

POSITIVE_EMOTIONS = frozenset({Emotion.JOY, Emotion.SURPRISE})
NEGATIVE_EMOTIONS = frozenset({Emotion.ANGER, Emotion.FEAR, Emotion.DISGUST, Emotion.SADNESS})

FINE27 = "fine27"
COARSE_DEFN14 = "coarse_defn14"
COARSE_COUNT14 = "coarse_count14"
SETUPS = (FINE27, COARSE_DEFN14, COARSE_COUNT14)

COUNT_THRESHOLD = 250
OTHER = "other"

_SPELLING = {"humour": "humor"}


@lru_cache(maxsize=None)
def _table() -> Tuple[dict, ...]:
    with resources.files(__name__).joinpath("fine27.json").open("r", encoding="utf-8") as f:
        return tuple(json.load(f))


FINE_LABELS: Tuple[str, ...] = tuple(row["label"] for row in _table())
COARSE_LABELS: Tuple[str, ...] = tuple(dict.fromkeys(row["coarse"] for row in _table()))
_COARSE = {row["label"]: row["coarse"] for row in _table()}
_POLARITY = {row["label"]: row["polarity"] for row in _table()}
DEFINITIONS = {row["label"]: row["definition"] for row in _table()}


def canonical_label(name: str) -> str:
    """Normalize a fine instigator label; accepts any case and the ``humour`` spelling."""
    if not isinstance(name, str):
        raise ValueError(f"instigator label must be a string, got {type(name).__name__}")
    key = name.strip().lower()
    key = _SPELLING.get(key, key)
    if key not in _COARSE:
        raise ValueError(f"unknown instigator label {name!r}")
    return key


def coarse_of(label: str) -> str:
    return _COARSE[canonical_label(label)]


def label_polarity(label: str) -> str:
    return _POLARITY[canonical_label(label)]


def labels_with_polarity(polarity: str) -> FrozenSet[str]:
    return frozenset(l for l in FINE_LABELS if _POLARITY[l] == polarity)


def flip_polarity(source: Emotion, target: Emotion) -> str:
    """Classify a flip as positive or negative by where it lands.

    Cross-polarity and neutral-involving flips follow the usual reading;
    intra-polarity flips (joy->surprise, anger->sadness, ...) take the
    polarity of the target emotion.
    """
    source, target = Emotion.parse(source), Emotion.parse(target)
    if source == target:
        raise ValueError(f"not a flip: {source} -> {target}")
    if target in POSITIVE_EMOTIONS:
        return POSITIVE
    if target in NEGATIVE_EMOTIONS:
        return NEGATIVE
    # target is neutral
    return POSITIVE if source in NEGATIVE_EMOTIONS else NEGATIVE


def emotion_polarity(emotion: Emotion) -> str:
    emotion = Emotion.parse(emotion)
    if emotion in POSITIVE_EMOTIONS:
        return POSITIVE
    if emotion in NEGATIVE_EMOTIONS:
        return NEGATIVE
    return "neutral"


def is_intra_polarity(source: Emotion, target: Emotion) -> bool:
    sp, tp = emotion_polarity(source), emotion_polarity(target)
    return sp == tp and sp != "neutral"


@lru_cache(maxsize=None)
def pair_table() -> Dict[Tuple[Emotion, Emotion], FrozenSet[str]]:
    with resources.files(__name__).joinpath("pair_table.json").open("r", encoding="utf-8") as f:
        raw = json.load(f)
    out = {}
    for key, labels in raw.items():
        src, tgt = key.split("->")
        out[(Emotion.parse(src), Emotion.parse(tgt))] = frozenset(canonical_label(l) for l in labels)
    return out


@dataclass(frozen=True)
class LabelSpace:
    """An ordered output label set plus the projection from fine labels into it."""

    setup: str
    labels: Tuple[str, ...]
    projection: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "projection", dict(self.projection))
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in label space")
        missing = set(FINE_LABELS) - set(self.projection)
        if missing:
            raise ValueError(f"projection misses fine labels {sorted(missing)}")
        stray = set(self.projection.values()) - set(self.labels)
        if stray:
            raise ValueError(f"projection targets outside the space: {sorted(stray)}")

    @property
    def dim(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def project(self, fine_labels: Iterable[str]) -> FrozenSet[str]:
        return frozenset(self.projection[canonical_label(l)] for l in fine_labels)

    def members(self, label: str) -> FrozenSet[str]:
        return frozenset(f for f, c in self.projection.items() if c == label)

    def encode(self, fine_labels: Iterable[str]) -> np.ndarray:
        vec = np.zeros(self.dim)
        for l in self.project(fine_labels):
            vec[self.index(l)] = 1.0
        return vec

    def to_dict(self) -> dict:
        return {"setup": self.setup, "labels": list(self.labels),
                "projection": {k: self.projection[k] for k in FINE_LABELS}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabelSpace":
        return cls(d["setup"], tuple(d["labels"]), dict(d["projection"]))


def fine_space() -> LabelSpace:
    return LabelSpace(FINE27, FINE_LABELS, {l: l for l in FINE_LABELS})


def coarse_definition_space() -> LabelSpace:
    return LabelSpace(COARSE_DEFN14, COARSE_LABELS, dict(_COARSE))


def instigator_counts(instances: Iterable[EfrInstance]) -> Counter:
    """Occurrences of each fine label over all per-utterance gold label sets."""
    counts: Counter = Counter({l: 0 for l in FINE_LABELS})
    for inst in instances:
        for labels in inst.instigators:
            counts.update(labels)
    return counts


def build_count_based_space(train_instances: Iterable[EfrInstance],
                            threshold: int = COUNT_THRESHOLD) -> LabelSpace:
    """Keep labels seen at least ``threshold`` times; merge the rest into ``other``.

    When every label clears the threshold nothing is merged and the empty
    ``other`` bucket is dropped, giving 27 labels.
    """
    train_instances = list(train_instances)
    if not train_instances:
        raise ValueError("count-based label space needs a non-empty training set")
    counts = instigator_counts(train_instances)
    kept = [l for l in FINE_LABELS if counts[l] >= threshold]
    labels = kept + ([OTHER] if len(kept) < len(FINE_LABELS) else [])
    projection = {l: (l if l in kept else OTHER) for l in FINE_LABELS}
    return LabelSpace(COARSE_COUNT14, tuple(labels), projection)


def label_space(setup: str, train_instances: Iterable[EfrInstance] = ()) -> LabelSpace:
    if setup == FINE27:
        return fine_space()
    if setup == COARSE_DEFN14:
        return coarse_definition_space()
    if setup == COARSE_COUNT14:
        return build_count_based_space(train_instances)
    raise ValueError(f"unknown label setup {setup!r}; expected one of {SETUPS}")


def allowed_fine_labels(source: Emotion, target: Emotion, mode: str = "polarity") -> FrozenSet[str]:
    source, target = Emotion.parse(source), Emotion.parse(target)
    if mode == "off":
        return frozenset(FINE_LABELS)
    if mode == "polarity":
        pol = flip_polarity(source, target)
        return labels_with_polarity(pol) | labels_with_polarity(AMBIGUOUS)
    if mode == "pair_table":
        if source == target:
            raise ValueError(f"not a flip: {source} -> {target}")
        table = pair_table()
        if (source, target) not in table:
            raise ValueError(f"pair table has no cell for {source} -> {target}")
        return table[(source, target)]
    raise ValueError(f"unknown mask mode {mode!r}")


def allowed_mask(source: Emotion, target: Emotion, space: LabelSpace, mode: str = "polarity") -> np.ndarray:
    """Boolean vector over ``space``; a grouped label is allowed iff any member is."""
    allowed = allowed_fine_labels(source, target, mode)
    mask = np.zeros(space.dim, dtype=bool)
    for fine in allowed:
        mask[space.index(space.projection[fine])] = True
    return mask


def all_flip_pairs() -> List[Tuple[Emotion, Emotion]]:
    return [(s, t) for s in EMOTIONS for t in EMOTIONS if s != t]
