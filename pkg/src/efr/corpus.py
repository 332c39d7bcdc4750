"""Dialogue data model, JSON-lines formats and validated ingestion.

Three record kinds share one line-oriented format:

* ``dialogues``   -- a raw emotion-annotated conversation
* ``instances``   -- a dialogue prefix ending at an emotion flip, with gold
                     trigger flags and instigator label sets
* ``annotations`` -- one annotator's trigger/instigator decisions per instance

Emotion one-hot order is alphabetical and fixed: see ``EMOTIONS``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np


class Emotion(str, Enum):
    ANGER = "anger"
    DISGUST = "disgust"
    FEAR = "fear"
    JOY = "joy"
    NEUTRAL = "neutral"
    SADNESS = "sadness"
    SURPRISE = "surprise"

    @classmethod
    def parse(cls, value: Any) -> "Emotion":
        if isinstance(value, Emotion):
            return value
        if not isinstance(value, str):
            raise ValueError(f"emotion must be a string, got {type(value).__name__}")
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown emotion {value!r}") from None

    @property
    def index(self) -> int:
        return EMOTION_INDEX[self]

    def one_hot(self) -> np.ndarray:
        v = np.zeros(len(EMOTIONS))
        v[self.index] = 1.0
        return v

    def __str__(self) -> str:
        return self.value


EMOTIONS: Tuple[Emotion, ...] = tuple(sorted(Emotion, key=lambda e: e.value))
EMOTION_INDEX: Dict[Emotion, int] = {e: i for i, e in enumerate(EMOTIONS)}


def emotion_from_one_hot(vec: Sequence[float]) -> Emotion:
    arr = np.asarray(vec)
    if arr.shape != (len(EMOTIONS),) or arr.sum() != 1 or arr.max() != 1:
        raise ValueError(f"not a one-hot emotion vector: {vec!r}")
    return EMOTIONS[int(arr.argmax())]


class CorpusError(ValueError):
    """A record failed to parse or validate; carries file/line/field context."""

    def __init__(self, message: str, path: Optional[Union[str, Path]] = None,
                 line: Optional[int] = None, field: Optional[str] = None):
        self.message = message
        self.path = str(path) if path is not None else None
        self.line = line
        self.field = field
        where = ""
        if self.path is not None:
            where += self.path
        if line is not None:
            where += f":{line}"
        if field is not None:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: str
    text: str
    emotion: Emotion

    def __post_init__(self):
        if not isinstance(self.index, int) or isinstance(self.index, bool) or self.index < 0:
            raise CorpusError(f"index must be a non-negative integer, got {self.index!r}", field="index")
        if not isinstance(self.speaker, str) or not self.speaker.strip():
            raise CorpusError("speaker must be a non-empty string", field="speaker")
        if not isinstance(self.text, str):
            raise CorpusError("text must be a string", field="text")
        object.__setattr__(self, "speaker", self.speaker.strip())
        object.__setattr__(self, "emotion", Emotion.parse(self.emotion))


def _check_indices(utterances: Sequence[Utterance]) -> None:
    for pos, u in enumerate(utterances):
        if u.index != pos:
            raise CorpusError(
                f"utterance indices must be contiguous 0..n-1; position {pos} has index {u.index}",
                field="utterances")


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    utterances: Tuple[Utterance, ...]
    split: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.dialogue_id, str) or not self.dialogue_id:
            raise CorpusError("dialogue_id must be a non-empty string", field="dialogue_id")
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if not self.utterances:
            raise CorpusError("a dialogue needs at least one utterance", field="utterances")
        _check_indices(self.utterances)

    @property
    def speakers(self) -> List[str]:
        """Distinct speakers in order of first appearance."""
        return list(dict.fromkeys(u.speaker for u in self.utterances))


@dataclass(frozen=True)
class EfrInstance:
    instance_id: str
    dialogue_id: str
    utterances: Tuple[Utterance, ...]
    target_index: int
    target_speaker: str
    source_emotion: Emotion
    target_emotion: Emotion
    trigger_flags: Tuple[bool, ...]
    instigators: Tuple[frozenset, ...]

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        object.__setattr__(self, "trigger_flags", tuple(bool(f) for f in self.trigger_flags))
        object.__setattr__(self, "instigators", tuple(frozenset(s) for s in self.instigators))
        object.__setattr__(self, "source_emotion", Emotion.parse(self.source_emotion))
        object.__setattr__(self, "target_emotion", Emotion.parse(self.target_emotion))
        n = len(self.utterances)
        if n == 0:
            raise CorpusError("an instance needs at least one utterance", field="utterances")
        _check_indices(self.utterances)
        if self.target_index != n - 1:
            raise CorpusError(f"target_index {self.target_index} is not the last utterance ({n - 1})",
                              field="target_index")
        target = self.utterances[-1]
        if target.speaker != self.target_speaker:
            raise CorpusError(f"target_speaker {self.target_speaker!r} != speaker of target "
                              f"utterance {target.speaker!r}", field="target_speaker")
        if target.emotion != self.target_emotion:
            raise CorpusError(f"target_emotion {self.target_emotion} != emotion of target utterance "
                              f"{target.emotion}", field="target_emotion")
        if self.source_emotion == self.target_emotion:
            raise CorpusError("source_emotion equals target_emotion; not a flip", field="source_emotion")
        previous = [u for u in self.utterances[:-1] if u.speaker == self.target_speaker]
        if not previous:
            raise CorpusError("target speaker has no earlier utterance", field="target_speaker")
        if previous[-1].emotion != self.source_emotion:
            raise CorpusError(f"source_emotion {self.source_emotion} does not match the target speaker's "
                              f"previous emotion {previous[-1].emotion}", field="source_emotion")
        if len(self.trigger_flags) != n:
            raise CorpusError("trigger_flags length differs from utterance count", field="triggers")
        if len(self.instigators) != n:
            raise CorpusError("instigators length differs from utterance count", field="instigators")
        for i, (flag, labels) in enumerate(zip(self.trigger_flags, self.instigators)):
            if labels and not flag:
                raise CorpusError(f"utterance {i} has instigators but is not marked as a trigger",
                                  field="instigators")

    @property
    def target(self) -> Utterance:
        return self.utterances[-1]

    @property
    def speakers(self) -> List[str]:
        return list(dict.fromkeys(u.speaker for u in self.utterances))

    @property
    def triggers(self) -> List[int]:
        return [i for i, f in enumerate(self.trigger_flags) if f]


@dataclass(frozen=True)
class Annotation:
    """One annotator's decisions for one instance."""
    instance_id: str
    triggers: frozenset
    instigators: Mapping[int, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "triggers", frozenset(self.triggers))
        object.__setattr__(self, "instigators",
                           {int(k): frozenset(v) for k, v in sorted(self.instigators.items()) if v})
        for idx in self.instigators:
            if idx not in self.triggers:
                raise CorpusError(f"utterance {idx} has instigators but is not a trigger", field="instigators")

    def labels_at(self, index: int) -> frozenset:
        return self.instigators.get(index, frozenset())


@dataclass(frozen=True)
class AnnotationFile:
    annotator_id: str
    records: Mapping[str, Annotation]

    @property
    def instance_ids(self) -> List[str]:
        return list(self.records)

    def check_coverage(self, instances: Iterable[EfrInstance]) -> None:
        known = {inst.instance_id: inst for inst in instances}
        for iid, rec in self.records.items():
            if iid not in known:
                raise CorpusError(f"annotator {self.annotator_id!r} references unknown instance {iid!r}",
                                  field="instance_id")
            n = len(known[iid].utterances)
            bad = [i for i in rec.triggers if i >= n]
            if bad:
                raise CorpusError(f"instance {iid!r}: trigger index {bad[0]} out of range (n={n})",
                                  field="triggers")


# ---------------------------------------------------------------------------
# record <-> object


def _canonical_labels(values: Any, where: str) -> frozenset:
    from efr.taxonomy import canonical_label

    if not isinstance(values, list):
        raise CorpusError(f"instigator labels must be a list, got {type(values).__name__}", field=where)
    try:
        return frozenset(canonical_label(v) for v in values)
    except ValueError as exc:
        raise CorpusError(str(exc), field=where) from None


def _require(rec: Mapping[str, Any], key: str, kind: type):
    if key not in rec:
        raise CorpusError(f"missing field {key!r}", field=key)
    value = rec[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise CorpusError(f"{key} must be an integer", field=key)
    if not isinstance(value, kind):
        raise CorpusError(f"{key} must be of type {kind.__name__}", field=key)
    return value


def _check_keys(rec: Mapping[str, Any], allowed: Iterable[str]) -> None:
    extra = sorted(set(rec) - set(allowed))
    if extra:
        raise CorpusError(f"unknown field {extra[0]!r}", field=extra[0])


_UTTERANCE_KEYS = ("index", "speaker", "text", "emotion")
_DIALOGUE_KEYS = ("dialogue_id", "utterances", "split")
_INSTANCE_KEYS = ("dialogue_id", "utterances", "instance_id", "target_index", "target_speaker",
                  "source_emotion", "target_emotion", "triggers", "instigators")
_ANNOTATION_KEYS = ("annotator_id", "instance_id", "triggers", "instigators")


def _utterances_from(raw: Any) -> List[Utterance]:
    if not isinstance(raw, list):
        raise CorpusError("utterances must be a list", field="utterances")
    out = []
    for pos, u in enumerate(raw):
        if not isinstance(u, dict):
            raise CorpusError(f"utterance {pos} is not an object", field="utterances")
        _check_keys(u, _UTTERANCE_KEYS)
        try:
            emotion = Emotion.parse(_require(u, "emotion", str))
        except ValueError as exc:
            if isinstance(exc, CorpusError):
                raise
            raise CorpusError(str(exc), field=f"utterances[{pos}].emotion") from None
        out.append(Utterance(_require(u, "index", int), _require(u, "speaker", str),
                             _require(u, "text", str), emotion))
    return out


def _index_list(raw: Any, key: str) -> List[int]:
    if not isinstance(raw, list) or any(isinstance(i, bool) or not isinstance(i, int) or i < 0 for i in raw):
        raise CorpusError(f"{key} must be a list of non-negative integers", field=key)
    if len(set(raw)) != len(raw):
        raise CorpusError(f"{key} contains duplicates", field=key)
    return list(raw)


def _instigator_map(raw: Any) -> Dict[int, frozenset]:
    if not isinstance(raw, dict):
        raise CorpusError("instigators must be an object keyed by utterance index", field="instigators")
    out = {}
    for k, v in raw.items():
        try:
            idx = int(k)
        except (TypeError, ValueError):
            raise CorpusError(f"instigator key {k!r} is not an utterance index", field="instigators") from None
        if idx < 0 or str(idx) != k:
            raise CorpusError(f"instigator key {k!r} is not an utterance index", field="instigators")
        out[idx] = _canonical_labels(v, f"instigators[{k}]")
    return out


def _emotion_field(rec: Mapping[str, Any], key: str) -> Emotion:
    try:
        return Emotion.parse(_require(rec, key, str))
    except CorpusError:
        raise
    except ValueError as exc:
        raise CorpusError(str(exc), field=key) from None


def dialogue_from_record(rec: Mapping[str, Any]) -> Dialogue:
    _check_keys(rec, _DIALOGUE_KEYS)
    split = rec.get("split")
    if split is not None and not isinstance(split, str):
        raise CorpusError("split must be a string", field="split")
    return Dialogue(_require(rec, "dialogue_id", str), tuple(_utterances_from(rec.get("utterances"))), split)


def instance_from_record(rec: Mapping[str, Any]) -> EfrInstance:
    _check_keys(rec, _INSTANCE_KEYS)
    utts = _utterances_from(_require(rec, "utterances", list))
    n = len(utts)
    triggers = _index_list(_require(rec, "triggers", list), "triggers")
    labels = _instigator_map(_require(rec, "instigators", dict))
    for i in list(triggers) + list(labels):
        if i >= n:
            raise CorpusError(f"utterance index {i} out of range (n={n})", field="triggers")
    flags = tuple(i in set(triggers) for i in range(n))
    inst = tuple(labels.get(i, frozenset()) for i in range(n))
    return EfrInstance(
        instance_id=_require(rec, "instance_id", str),
        dialogue_id=_require(rec, "dialogue_id", str),
        utterances=tuple(utts),
        target_index=_require(rec, "target_index", int),
        target_speaker=_require(rec, "target_speaker", str),
        source_emotion=_emotion_field(rec, "source_emotion"),
        target_emotion=_emotion_field(rec, "target_emotion"),
        trigger_flags=flags,
        instigators=inst,
    )


def annotation_from_record(rec: Mapping[str, Any]) -> Tuple[str, Annotation]:
    _check_keys(rec, _ANNOTATION_KEYS)
    annotator = _require(rec, "annotator_id", str)
    triggers = _index_list(_require(rec, "triggers", list), "triggers")
    labels = _instigator_map(rec.get("instigators", {}))
    return annotator, Annotation(_require(rec, "instance_id", str), frozenset(triggers), labels)


def _utterance_record(u: Utterance) -> Dict[str, Any]:
    return {"index": u.index, "speaker": u.speaker, "text": u.text, "emotion": u.emotion.value}


def dialogue_to_record(d: Dialogue) -> Dict[str, Any]:
    rec: Dict[str, Any] = {"dialogue_id": d.dialogue_id,
                           "utterances": [_utterance_record(u) for u in d.utterances]}
    if d.split is not None:
        rec["split"] = d.split
    return rec


def _instigators_record(labels: Mapping[int, frozenset]) -> Dict[str, List[str]]:
    return {str(i): sorted(v) for i, v in sorted(labels.items()) if v}


def instance_to_record(inst: EfrInstance) -> Dict[str, Any]:
    return {
        "dialogue_id": inst.dialogue_id,
        "utterances": [_utterance_record(u) for u in inst.utterances],
        "instance_id": inst.instance_id,
        "target_index": inst.target_index,
        "target_speaker": inst.target_speaker,
        "source_emotion": inst.source_emotion.value,
        "target_emotion": inst.target_emotion.value,
        "triggers": inst.triggers,
        "instigators": _instigators_record(dict(enumerate(inst.instigators))),
    }


def annotation_to_record(annotator_id: str, a: Annotation) -> Dict[str, Any]:
    return {"annotator_id": annotator_id, "instance_id": a.instance_id,
            "triggers": sorted(a.triggers), "instigators": _instigators_record(a.instigators)}


# ---------------------------------------------------------------------------
# files


def _dumps(rec: Mapping[str, Any]) -> str:
    return json.dumps(rec, sort_keys=True, ensure_ascii=False, separators=(", ", ": "))


def _write_lines(records: Iterable[Mapping[str, Any]], path: Union[str, Path]) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(_dumps(rec) + "\n")


def _iter_records(path: Path):
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON: {exc.msg}", path, lineno) from None
            if not isinstance(rec, dict):
                raise CorpusError("record is not a JSON object", path, lineno)
            yield lineno, rec


def parse_corpus(path: Union[str, Path], kind: str):
    """Read and validate a JSON-lines file of ``kind`` dialogues/instances/annotations.

    Returns a list for dialogues and instances, an :class:`AnnotationFile`
    for annotations. Every failure is a :class:`CorpusError` naming the file,
    line and field.
    """
    path = Path(path)
    if kind not in ("dialogues", "instances", "annotations"):
        raise ValueError(f"unknown corpus kind {kind!r}")
    if not path.exists():
        raise CorpusError("file does not exist", path)

    seen: Dict[str, int] = {}
    out: list = []
    annotator: Optional[str] = None
    records: Dict[str, Annotation] = {}
    for lineno, rec in _iter_records(path):
        try:
            if kind == "dialogues":
                obj = dialogue_from_record(rec)
                key = obj.dialogue_id
            elif kind == "instances":
                obj = instance_from_record(rec)
                key = obj.instance_id
            else:
                who, obj = annotation_from_record(rec)
                if annotator is None:
                    annotator = who
                elif who != annotator:
                    raise CorpusError(f"mixed annotator ids {annotator!r} and {who!r}", field="annotator_id")
                key = obj.instance_id
        except CorpusError as exc:
            raise CorpusError(exc.message, path, lineno, exc.field) from None
        if key in seen:
            raise CorpusError(f"duplicate id {key!r} (first seen on line {seen[key]})", path, lineno,
                              "instance_id" if kind != "dialogues" else "dialogue_id")
        seen[key] = lineno
        if kind == "annotations":
            records[key] = obj
        else:
            out.append(obj)
    if kind == "annotations":
        return AnnotationFile(annotator or path.stem, records)
    return out


def write_instances(instances: Iterable[EfrInstance], path: Union[str, Path]) -> None:
    _write_lines((instance_to_record(i) for i in instances), path)


def write_dialogues(dialogues: Iterable[Dialogue], path: Union[str, Path]) -> None:
    _write_lines((dialogue_to_record(d) for d in dialogues), path)


def write_annotations(annotations: AnnotationFile, path: Union[str, Path]) -> None:
    _write_lines((annotation_to_record(annotations.annotator_id, a) for a in annotations.records.values()),
                 path)


def annotations_from_instances(instances: Iterable[EfrInstance], annotator_id: str = "gold") -> AnnotationFile:
    """Extract the gold trigger/instigator layer of ``instances`` as an annotation file."""
    records = {}
    for inst in instances:
        records[inst.instance_id] = Annotation(
            inst.instance_id, frozenset(inst.triggers),
            {i: s for i, s in enumerate(inst.instigators) if s})
    return AnnotationFile(annotator_id, records)


def read_meld_csv(path: Union[str, Path], split: Optional[str] = None) -> List[Dialogue]:
    """Import MELD's CSV release (columns Utterance, Speaker, Emotion, Dialogue_ID, Utterance_ID)."""
    path = Path(path)
    if not path.exists():
        raise CorpusError("file does not exist", path)
    rows: Dict[str, List[Tuple[int, int, Dict[str, str]]]] = {}
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        needed = {"Utterance", "Speaker", "Emotion", "Dialogue_ID", "Utterance_ID"}
        missing = needed - set(reader.fieldnames or ())
        if missing:
            raise CorpusError(f"missing CSV columns {sorted(missing)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                uid = int(row["Utterance_ID"])
                did = str(int(row["Dialogue_ID"]))
            except ValueError:
                raise CorpusError("Dialogue_ID/Utterance_ID must be integers", path, lineno, "Utterance_ID") from None
            rows.setdefault(did, []).append((uid, lineno, row))
    dialogues = []
    for did in sorted(rows, key=int):
        utts = []
        for pos, (uid, lineno, row) in enumerate(sorted(rows[did], key=lambda r: r[0])):
            try:
                utts.append(Utterance(pos, row["Speaker"], row["Utterance"], Emotion.parse(row["Emotion"])))
            except CorpusError as exc:
                raise CorpusError(exc.message, path, lineno, exc.field) from None
            except ValueError as exc:
                raise CorpusError(str(exc), path, lineno, "Emotion") from None
        dialogues.append(Dialogue(did if split is None else f"{split}_{did}", tuple(utts), split))
    return dialogues
