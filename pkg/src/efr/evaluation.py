"""Weighted precision/recall/F1 and the class-wise, directional and ablation reports."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from efr import taxonomy
from efr.corpus import EfrInstance
from efr.taxonomy import LabelSpace

SCOPES = ("all_utterances", "triggers_only")
DIRECTIONS = ("negative->positive", "positive->negative", "other")
ABLATION_ROWS: Tuple[Tuple[str, Tuple[str, ...]], ...] = (
    ("GUS", ("GUS",)),
    ("+GES", ("GUS", "GES")),
    ("+GSS", ("GUS", "GES", "GSS")),
    ("+SSES", ("GUS", "GES", "GSS", "SSES")),
)

LabelSets = Sequence[Sequence[FrozenSet[str]]]


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass(frozen=True)
class Metrics:
    labels: Tuple[str, ...]
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.tp + self.fn

    @property
    def precision(self) -> np.ndarray:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> np.ndarray:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> np.ndarray:
        p, r = self.precision, self.recall
        return _ratio(2 * p * r, p + r)

    def _weighted(self, values: np.ndarray) -> float:
        total = self.support.sum()
        return float((values * self.support).sum() / total) if total else 0.0

    @property
    def weighted_precision(self) -> float:
        return self._weighted(self.precision)

    @property
    def weighted_recall(self) -> float:
        return self._weighted(self.recall)

    @property
    def weighted_f1(self) -> float:
        return self._weighted(self.f1)

    def per_class(self) -> Dict[str, dict]:
        return {l: {"precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
                for l, p, r, f, s in zip(self.labels, self.precision, self.recall, self.f1, self.support)}

    def to_dict(self) -> dict:
        return {"weighted_precision": self.weighted_precision, "weighted_recall": self.weighted_recall,
                "weighted_f1": self.weighted_f1, "per_class": self.per_class()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self) -> str:
        width = max(len(l) for l in self.labels + ("weighted",))
        lines = [f"{'label':<{width}}  {'P':>6}  {'R':>6}  {'F1':>6}  support"]
        for l, row in self.per_class().items():
            lines.append(f"{l:<{width}}  {row['precision']:6.3f}  {row['recall']:6.3f}  {row['f1']:6.3f}  "
                         f"{row['support']:7d}")
        lines.append(f"{'weighted':<{width}}  {self.weighted_precision:6.3f}  {self.weighted_recall:6.3f}  "
                     f"{self.weighted_f1:6.3f}  {int(self.support.sum()):7d}")
        return "\n".join(lines)


def weighted_prf(gold: LabelSets, pred: LabelSets, space: LabelSpace, scope: str = "all_utterances",
                 triggers: Optional[Sequence[Sequence[bool]]] = None) -> Metrics:
    """Pool per-(utterance, class) decisions over instances and weight by gold support.

    ``gold`` and ``pred`` hold one label set per utterance per instance, in
    the labels of ``space``. Under ``triggers_only`` only gold trigger
    utterances are scored.
    """
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    if len(gold) != len(pred):
        raise ValueError(f"gold has {len(gold)} instances, predictions {len(pred)}")
    if scope == "triggers_only" and (triggers is None or len(triggers) != len(gold)):
        raise ValueError("triggers_only scope needs trigger flags for every instance")
    index = {l: i for i, l in enumerate(space.labels)}
    tp, fp, fn = (np.zeros(space.dim, dtype=np.int64) for _ in range(3))
    for k, (g_inst, p_inst) in enumerate(zip(gold, pred)):
        if len(g_inst) != len(p_inst):
            raise ValueError(f"instance {k}: {len(g_inst)} gold utterances vs {len(p_inst)} predicted")
        for u, (g, p) in enumerate(zip(g_inst, p_inst)):
            if scope == "triggers_only" and not triggers[k][u]:
                continue
            for label in set(g) | set(p):
                if label not in index:
                    raise ValueError(f"label {label!r} is not in the {space.setup} label space")
                i = index[label]
                if label in g and label in p:
                    tp[i] += 1
                elif label in p:
                    fp[i] += 1
                else:
                    fn[i] += 1
    return Metrics(space.labels, tp, fp, fn)


def gold_sets(instance: EfrInstance, space: LabelSpace) -> List[FrozenSet[str]]:
    return [space.project(s) for s in instance.instigators]


def evaluate(model, instances: Sequence[EfrInstance], scope: str = "all_utterances",
             predictions=None) -> Metrics:
    instances = list(instances)
    preds = predictions if predictions is not None else model.predict(instances)
    return weighted_prf([gold_sets(i, model.label_space) for i in instances], [p.predicted for p in preds],
                        model.label_space, scope, [i.trigger_flags for i in instances])


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ClasswiseReport:
    metrics: Metrics
    ranking: Tuple[str, ...]
    train_support: Mapping[str, int]
    top: Tuple[str, ...]
    bottom: Tuple[str, ...]

    def to_dict(self) -> dict:
        per = self.metrics.per_class()

        def rows(labels):
            return [{"label": l, "train_support": int(self.train_support.get(l, 0)), **per[l]} for l in labels]

        return {"ranking": list(self.ranking), "top": rows(self.top), "bottom": rows(self.bottom)}

    def to_table(self) -> str:
        lines = []
        for title, labels in (("top", self.top), ("bottom", self.bottom)):
            lines.append(f"{title}:")
            for row in self.to_dict()[title]:
                lines.append(f"  {row['label']:<16} train={row['train_support']:<6d} P={row['precision']:.3f} "
                             f"R={row['recall']:.3f} F1={row['f1']:.3f}")
        return "\n".join(lines)


def support_ranking(train_support: Mapping[str, int], labels: Iterable[str]) -> Tuple[str, ...]:
    """Labels by descending training support, ties broken lexicographically."""
    return tuple(sorted(labels, key=lambda l: (-int(train_support.get(l, 0)), l)))


def classwise_report(metrics: Metrics, train_support: Mapping[str, int], top_k: int = 3,
                     bottom_k: int = 3) -> ClasswiseReport:
    n = len(metrics.labels)
    if top_k > n or bottom_k > n or top_k < 0 or bottom_k < 0:
        raise ValueError(f"top_k/bottom_k must lie in [0, {n}]")
    ranking = support_ranking(train_support, metrics.labels)
    bottom = ranking[n - bottom_k:] if bottom_k else ()
    return ClasswiseReport(metrics, ranking, dict(train_support), ranking[:top_k], bottom)


def train_support(instances: Iterable[EfrInstance], space: LabelSpace) -> Dict[str, int]:
    counts = {l: 0 for l in space.labels}
    for inst in instances:
        for labels in inst.instigators:
            for l in space.project(labels):
                counts[l] += 1
    return counts


def direction_of(instance: EfrInstance) -> str:
    if taxonomy.is_intra_polarity(instance.source_emotion, instance.target_emotion):
        return "other"
    if taxonomy.flip_polarity(instance.source_emotion, instance.target_emotion) == taxonomy.POSITIVE:
        return "negative->positive"
    return "positive->negative"


@dataclass(frozen=True)
class DirectionalityReport:
    buckets: Mapping[str, Metrics]
    counts: Mapping[str, int]

    def to_dict(self) -> dict:
        return {b: {"instances": self.counts[b], "weighted_precision": m.weighted_precision,
                    "weighted_recall": m.weighted_recall, "weighted_f1": m.weighted_f1}
                for b, m in self.buckets.items()}

    def to_table(self) -> str:
        lines = [f"{'direction':<20} {'n':>5}  {'P':>6}  {'R':>6}  {'F1':>6}"]
        for b, row in self.to_dict().items():
            lines.append(f"{b:<20} {row['instances']:5d}  {row['weighted_precision']:6.3f}  "
                         f"{row['weighted_recall']:6.3f}  {row['weighted_f1']:6.3f}")
        return "\n".join(lines)


def directionality_report(instances: Sequence[EfrInstance], pred: LabelSets, space: LabelSpace,
                          scope: str = "all_utterances") -> DirectionalityReport:
    """Split scores by flip direction; intra-polarity flips fall in ``other``."""
    instances = list(instances)
    if len(instances) != len(pred):
        raise ValueError("one prediction per instance is required")
    groups: Dict[str, List[int]] = {b: [] for b in DIRECTIONS}
    for k, inst in enumerate(instances):
        groups[direction_of(inst)].append(k)
    buckets = {}
    for b, ks in groups.items():
        buckets[b] = weighted_prf([gold_sets(instances[k], space) for k in ks], [pred[k] for k in ks], space,
                                  scope, [instances[k].trigger_flags for k in ks])
    return DirectionalityReport(buckets, {b: len(ks) for b, ks in groups.items()})


# ---------------------------------------------------------------------------
# ablation


@dataclass(frozen=True)
class AblationTable:
    setups: Tuple[str, ...]
    rows: Mapping[str, Mapping[str, float]]

    def to_dict(self) -> dict:
        return {r: dict(v) for r, v in self.rows.items()}

    def to_table(self) -> str:
        lines = ["model   " + "".join(f"{s:>16}" for s in self.setups)]
        for r, v in self.rows.items():
            lines.append(f"{r:<8}" + "".join(f"{v[s]:16.4f}" for s in self.setups))
        return "\n".join(lines)


def _ablation_cell(job) -> Tuple[str, str, float]:
    from efr.training import train

    row, setup, train_set, dev_set, config, train_config, seed, epochs = job
    result = train(train_set, dev_set, config, train_config, seed=seed, epochs=epochs)
    return row, setup, evaluate(result.model, dev_set).weighted_f1


def ablation_report(train_set: Sequence[EfrInstance], dev_set: Sequence[EfrInstance], config, train_config,
                    seed: int = 0, setups: Sequence[str] = taxonomy.SETUPS, epochs: Optional[int] = None,
                    rows: Sequence[str] = tuple(r for r, _ in ABLATION_ROWS), jobs: int = 1) -> AblationTable:
    """Dev weighted F1 for each cumulative module set under each label setup."""
    modules = dict(ABLATION_ROWS)
    unknown = [r for r in rows if r not in modules]
    if unknown:
        raise ValueError(f"unknown ablation row {unknown[0]!r}")
    train_set, dev_set = list(train_set), list(dev_set)
    work = [(r, s, train_set, dev_set, config.replace(enabled_modules=modules[r], label_setup=s), train_config,
             seed, epochs) for r in rows for s in setups]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_ablation_cell, work))
    else:
        cells = [_ablation_cell(w) for w in work]
    table: Dict[str, Dict[str, float]] = {r: {} for r in rows}
    for r, s, score in cells:
        table[r][s] = score
    return AblationTable(tuple(setups), table)
