from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from efr import taxonomy
from efr.corpus import EMOTIONS, Annotation, CorpusError, Dialogue, Emotion, Utterance
from efr.instances import build_instances, corpus_stats, detect_flips
from tests._util import random_dialogue, random_instances, table1_dialogue, table1_gold

E = Emotion


def scan_oracle(dialogue):
    """For each utterance, walk backwards to the same speaker's previous turn."""
    out = []
    utts = dialogue.utterances
    for i in range(len(utts)):
        for j in range(i - 1, -1, -1):
            if utts[j].speaker == utts[i].speaker:
                if utts[j].emotion != utts[i].emotion:
                    out.append((i, utts[i].speaker, utts[j].emotion, utts[i].emotion))
                break
    return out


def test_table1_flips():
    flips = detect_flips(table1_dialogue())
    assert [tuple(f) for f in flips] == [(2, "Ross", E.FEAR, E.JOY), (4, "Ross", E.JOY, E.ANGER)]


def test_everyone_speaks_once_means_no_flips():
    d = Dialogue("x", tuple(Utterance(i, f"s{i}", "hi", EMOTIONS[i]) for i in range(5)))
    assert detect_flips(d) == [] and build_instances([d]) == []


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_flips_match_backward_scan(seed):
    d = random_dialogue(np.random.default_rng(seed))
    assert [tuple(f) for f in detect_flips(d)] == scan_oracle(d)


def test_table1_instances():
    insts = build_instances([table1_dialogue()], table1_gold())
    assert [len(i.utterances) for i in insts] == [3, 5]
    assert [i.instance_id for i in insts] == ["t1#2", "t1#4"]
    assert insts[0].instigators[1] == {"nervousness"} and insts[0].triggers == [1, 2]
    assert insts[1].triggers == [3] and insts[1].instigators[3] == {"annoyance", "challenge"}
    assert len(set(insts[1].speakers)) == 3


def test_gold_beyond_target_is_rejected():
    gold = {"t1#2": Annotation("t1#2", {4}, {})}
    with pytest.raises(CorpusError, match="beyond target"):
        build_instances([table1_dialogue()], gold)


def test_gold_for_unknown_flip_is_rejected():
    with pytest.raises(CorpusError, match="no detected flip"):
        build_instances([table1_dialogue()], {"t1#1": Annotation("t1#1", set(), {})})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_prefix_and_count_identities(seed):
    rng = np.random.default_rng(seed)
    dialogues = [random_dialogue(rng, f"d{k}") for k in range(10)]
    insts = build_instances(dialogues)
    assert len(insts) == sum(len(detect_flips(d)) for d in dialogues)
    by_id = {d.dialogue_id: d for d in dialogues}
    for inst in insts:
        d = by_id[inst.dialogue_id]
        assert inst.utterances == d.utterances[:len(inst.utterances)]
        assert inst.target.index == inst.target_index


def test_stats_table1():
    report = corpus_stats(build_instances([table1_dialogue()], table1_gold()))
    nonzero = {(s, t): report.cell(s, t) for s in EMOTIONS for t in EMOTIONS if report.cell(s, t)}
    assert nonzero == {(E.FEAR, E.JOY): 1, (E.JOY, E.ANGER): 1}
    assert report.positive_flips == 1 and report.negative_flips == 1
    assert report.triggers == 3


def test_stats_empty():
    report = corpus_stats([])
    assert report.n_instances == 0 and report.flip_matrix.sum() == 0
    assert sum(report.fine_counts.values()) == 0 and report.positive_flips == report.negative_flips == 0


def test_stats_match_brute_force_tally():
    insts = random_instances(np.random.default_rng(9), 50)
    report = corpus_stats(insts)
    fine = Counter()
    matrix = Counter()
    for inst in insts:
        matrix[(inst.source_emotion, inst.target_emotion)] += 1
        for labels in inst.instigators:
            for l in labels:
                fine[l] += 1
    assert {l: c for l, c in report.fine_counts.items() if c} == dict(fine)
    for s in EMOTIONS:
        for t in EMOTIONS:
            assert report.cell(s, t) == matrix[(s, t)]
    coarse = Counter()
    for l, c in fine.items():
        coarse[taxonomy.coarse_of(l)] += c
    assert {l: c for l, c in report.coarse_defn_counts.items() if c} == dict(coarse)
    assert report.triggers == sum(sum(i.trigger_flags) for i in insts)


def test_flip_matrix_margins_and_diagonal():
    insts = random_instances(np.random.default_rng(1), 200, with_labels=False)
    m = corpus_stats(insts).flip_matrix
    assert np.trace(m) == 0
    src = Counter(i.source_emotion for i in insts)
    tgt = Counter(i.target_emotion for i in insts)
    for e in EMOTIONS:
        assert m[e.index].sum() == src[e] and m[:, e.index].sum() == tgt[e]


def test_stats_serialisations():
    report = corpus_stats(build_instances([table1_dialogue()], table1_gold()))
    d = report.to_dict()
    assert d["flip_matrix"]["fear"]["joy"] == 1
    table = report.to_table()
    assert table.splitlines()[0].split()[1:] == ["Disgust", "Joy", "Surprise", "Anger", "Fear", "Neutral",
                                                 "Sadness"]
