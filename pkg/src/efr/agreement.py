"""Krippendorff's alpha over trigger decisions and instigator label sets.

The trigger layer uses the nominal metric on per-utterance yes/no
decisions. The instigator layer treats each utterance's label set as one
value and uses the MASI set distance.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple

from efr.corpus import AnnotationFile, EfrInstance


def nominal_distance(a: Hashable, b: Hashable) -> float:
    return 0.0 if a == b else 1.0


def masi_distance(a: frozenset, b: frozenset) -> float:
    """1 - Jaccard * monotonicity weight (1 equal, 2/3 subset, 1/3 overlap, 0 disjoint)."""
    a, b = frozenset(a), frozenset(b)
    if a == b:
        return 0.0
    union = len(a | b)
    inter = len(a & b)
    if a <= b or b <= a:
        weight = 2.0 / 3.0
    elif inter:
        weight = 1.0 / 3.0
    else:
        weight = 0.0
    return 1.0 - (inter / union) * weight


def alpha(units: Iterable[Sequence[Hashable]], distance: Callable[[Hashable, Hashable], float]) -> float:
    """Krippendorff's alpha for units given as lists of the values coders assigned.

    Units with fewer than two values are not pairable and are ignored. When
    every pairable value is identical the expected disagreement is zero and
    alpha is reported as 1.0.
    """
    pairable = [list(u) for u in units if len(u) >= 2]
    n = sum(len(u) for u in pairable)
    if n == 0:
        raise ValueError("no pairable values")
    observed = 0.0
    for values in pairable:
        counts = Counter(values)
        d = sum(ca * cb * distance(va, vb) for va, ca in counts.items() for vb, cb in counts.items())
        observed += d / (len(values) - 1)
    observed /= n
    totals = Counter(v for u in pairable for v in u)
    expected = sum(ca * cb * distance(va, vb) for va, ca in totals.items() for vb, cb in totals.items())
    expected /= n * (n - 1)
    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected


@dataclass(frozen=True)
class AgreementResult:
    layer: str
    pairwise: Dict[Tuple[str, str], float]
    average: float

    def to_dict(self) -> dict:
        return {"layer": self.layer, "average": self.average,
                "pairwise": {f"{a}|{b}": v for (a, b), v in self.pairwise.items()}}


_ID_TARGET = re.compile(r"#(\d+)$")


def _unit_count(iid: str, files: Sequence[AnnotationFile],
                lengths: Mapping[str, int]) -> int:
    if iid in lengths:
        return lengths[iid]
    m = _ID_TARGET.search(iid)
    if m:
        return int(m.group(1)) + 1
    seen = [i for f in files for i in f.records[iid].triggers]
    return max(seen, default=-1) + 1


def pair_units(a: AnnotationFile, b: AnnotationFile, layer: str,
               lengths: Optional[Mapping[str, int]] = None) -> List[Tuple[Hashable, Hashable]]:
    """Per-utterance value pairs for the instances both annotators covered."""
    lengths = lengths or {}
    shared = [iid for iid in a.records if iid in b.records]
    if not shared:
        raise ValueError(f"annotators {a.annotator_id!r} and {b.annotator_id!r} share no instances")
    units = []
    for iid in shared:
        ra, rb = a.records[iid], b.records[iid]
        for idx in range(_unit_count(iid, (a, b), lengths)):
            if layer == "trigger":
                units.append((idx in ra.triggers, idx in rb.triggers))
            else:
                units.append((ra.labels_at(idx), rb.labels_at(idx)))
    return units


def krippendorff_alpha(annotations: Sequence[AnnotationFile], layer: str = "trigger",
                       instances: Optional[Iterable[EfrInstance]] = None) -> AgreementResult:
    """Pairwise alpha for every annotator pair and their arithmetic mean.

    Utterance counts come from ``instances`` when given, otherwise from the
    ``#<target_index>`` suffix of the instance id.
    """
    if layer not in ("trigger", "instigator"):
        raise ValueError(f"unknown layer {layer!r}")
    if len(annotations) < 2:
        raise ValueError("agreement needs at least two annotation files")
    ids = [f.annotator_id for f in annotations]
    if len(set(ids)) != len(ids):
        raise ValueError("annotator ids must be distinct")
    lengths = {i.instance_id: len(i.utterances) for i in instances} if instances is not None else {}
    distance = nominal_distance if layer == "trigger" else masi_distance
    pairwise = {}
    for a, b in combinations(sorted(annotations, key=lambda f: f.annotator_id), 2):
        pairwise[(a.annotator_id, b.annotator_id)] = alpha(pair_units(a, b, layer, lengths), distance)
    average = sum(pairwise.values()) / len(pairwise)
    return AgreementResult(layer, pairwise, average)
