"""Flip detection, instance construction and corpus statistics."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Union

import numpy as np

from efr import taxonomy
from efr.corpus import (EMOTIONS, Annotation, AnnotationFile, CorpusError, Dialogue, EfrInstance, Emotion)


class Flip(NamedTuple):
    target_index: int
    target_speaker: str
    source_emotion: Emotion
    target_emotion: Emotion


def detect_flips(dialogue: Dialogue) -> List[Flip]:
    """Utterances whose emotion differs from the same speaker's previous utterance."""
    last: Dict[str, Emotion] = {}
    flips = []
    for u in dialogue.utterances:
        prev = last.get(u.speaker)
        if prev is not None and prev != u.emotion:
            flips.append(Flip(u.index, u.speaker, prev, u.emotion))
        last[u.speaker] = u.emotion
    return flips


def instance_id(dialogue_id: str, target_index: int) -> str:
    return f"{dialogue_id}#{target_index}"


def build_instances(dialogues: Iterable[Dialogue],
                    gold: Optional[Union[AnnotationFile, Mapping[str, Annotation]]] = None) -> List[EfrInstance]:
    """One instance per detected flip; the instance is the dialogue prefix up to the target.

    ``gold`` is keyed by instance id (``<dialogue_id>#<target_index>``).
    Instances without a gold record get all-false triggers.
    """
    records: Mapping[str, Annotation] = {}
    if gold is not None:
        records = gold.records if isinstance(gold, AnnotationFile) else gold
    used = set()
    out = []
    for d in dialogues:
        for flip in detect_flips(d):
            iid = instance_id(d.dialogue_id, flip.target_index)
            n = flip.target_index + 1
            ann = records.get(iid)
            flags = [False] * n
            labels = [frozenset()] * n
            if ann is not None:
                used.add(iid)
                for idx in sorted(set(ann.triggers) | set(ann.instigators)):
                    if idx > flip.target_index:
                        raise CorpusError(f"gold for {iid!r} references utterance {idx} beyond target "
                                          f"{flip.target_index}", field="triggers")
                for idx in ann.triggers:
                    flags[idx] = True
                for idx, labs in ann.instigators.items():
                    labels[idx] = labs
            out.append(EfrInstance(
                instance_id=iid, dialogue_id=d.dialogue_id, utterances=d.utterances[:n],
                target_index=flip.target_index, target_speaker=flip.target_speaker,
                source_emotion=flip.source_emotion, target_emotion=flip.target_emotion,
                trigger_flags=tuple(flags), instigators=tuple(labels)))
    unknown = sorted(set(records) - used)
    if unknown:
        raise CorpusError(f"gold annotation for {unknown[0]!r} matches no detected flip", field="instance_id")
    return out


# Row/column order of the flip-frequency table as usually printed.
TABLE_ORDER = (Emotion.DISGUST, Emotion.JOY, Emotion.SURPRISE, Emotion.ANGER,
               Emotion.FEAR, Emotion.NEUTRAL, Emotion.SADNESS)


@dataclass
class StatsReport:
    n_instances: int = 0
    n_dialogues: int = 0
    flip_matrix: np.ndarray = field(default_factory=lambda: np.zeros((7, 7), dtype=np.int64))
    fine_counts: Dict[str, int] = field(default_factory=dict)
    coarse_defn_counts: Dict[str, int] = field(default_factory=dict)
    coarse_count_counts: Dict[str, int] = field(default_factory=dict)
    triggers: int = 0
    positive_flips: int = 0
    negative_flips: int = 0

    def cell(self, source: Emotion, target: Emotion) -> int:
        return int(self.flip_matrix[Emotion.parse(source).index, Emotion.parse(target).index])

    def to_dict(self) -> dict:
        return {
            "n_instances": self.n_instances,
            "n_dialogues": self.n_dialogues,
            "flip_matrix": {s.value: {t.value: self.cell(s, t) for t in EMOTIONS} for s in EMOTIONS},
            "instigators": {"fine27": self.fine_counts, "coarse_defn14": self.coarse_defn_counts,
                            "coarse_count14": self.coarse_count_counts},
            "triggers": self.triggers,
            "positive_flips": self.positive_flips,
            "negative_flips": self.negative_flips,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        names = [e.value.capitalize() for e in TABLE_ORDER]
        width = max(len(n) for n in names) + 2
        head = "Source\\Target".ljust(width + 2) + "".join(n.rjust(width) for n in names)
        lines = [head, "-" * len(head)]
        for s in TABLE_ORDER:
            lines.append(s.value.capitalize().ljust(width + 2)
                         + "".join(str(self.cell(s, t)).rjust(width) for t in TABLE_ORDER))
        lines += [
            "",
            f"instances: {self.n_instances}   dialogues: {self.n_dialogues}   triggers: {self.triggers}",
            f"positive flips: {self.positive_flips}   negative flips: {self.negative_flips}",
        ]
        for title, counts in (("fine-grained", self.fine_counts), ("coarse (definition)", self.coarse_defn_counts),
                              ("coarse (count)", self.coarse_count_counts)):
            lines.append("")
            lines.append(f"instigators, {title}:")
            for label, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
                lines.append(f"  {label:<14}{c:>7}")
        return "\n".join(lines)


def corpus_stats(instances: Iterable[EfrInstance]) -> StatsReport:
    instances = list(instances)
    report = StatsReport()
    report.n_instances = len(instances)
    report.n_dialogues = len({i.dialogue_id for i in instances})
    fine = taxonomy.instigator_counts(instances)
    report.fine_counts = {l: fine[l] for l in taxonomy.FINE_LABELS}
    defn: Counter = Counter({c: 0 for c in taxonomy.COARSE_LABELS})
    for l, c in fine.items():
        defn[taxonomy.coarse_of(l)] += c
    report.coarse_defn_counts = dict(defn)
    if instances:
        space = taxonomy.build_count_based_space(instances)
        cnt: Counter = Counter({l: 0 for l in space.labels})
        for l, c in fine.items():
            cnt[space.projection[l]] += c
        report.coarse_count_counts = dict(cnt)
    for inst in instances:
        report.flip_matrix[inst.source_emotion.index, inst.target_emotion.index] += 1
        report.triggers += sum(inst.trigger_flags)
        if taxonomy.flip_polarity(inst.source_emotion, inst.target_emotion) == taxonomy.POSITIVE:
            report.positive_flips += 1
        else:
            report.negative_flips += 1
    return report
