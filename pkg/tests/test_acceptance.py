"""Acceptance gate. Each test prints one ``criterion N: PASS|FAIL|SKIP`` line."""
import json
import os
import time
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from efr import cli, demo, taxonomy as tx
from efr.agreement import krippendorff_alpha, nominal_distance
from efr.autograd import ParamStore, Tape, backward, grad_check
from efr.autograd import tensor as T
from efr.corpus import Annotation, AnnotationFile, Dialogue, Emotion, Utterance
from efr.evaluation import ablation_report, evaluate, weighted_prf
from efr.instances import build_instances, detect_flips
from efr.model import TgifConfig, TgifModel, build_vocab
from efr.training import TrainConfig, checkpoint_bytes, focal_loss, load_checkpoint, save_checkpoint, train
from tests._util import random_dialogue, tiny_config, tiny_model
from tests.test_agreement import coincidence_alpha
from tests.test_instances import scan_oracle


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def run(number, title, budget=None):
        notes = []
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield notes
            status = "PASS"
        finally:
            elapsed = time.perf_counter() - start
            over = budget is not None and elapsed > budget
            if over:
                status = "FAIL"
                notes.append(f"runtime {elapsed:.1f}s exceeds {budget}s")
            detail = "; ".join(notes)
            with capsys.disabled():
                print(f"\ncriterion {number}: {status} [{elapsed:.1f}s] {title}" + (f" ({detail})" if detail else ""))
        assert not over, detail

    return run


def flip_instance(source, target):
    """Three utterances, two speakers, target speaker flips from source to target."""
    d = Dialogue("pair", (Utterance(0, "A", "i knew it would happen", source),
                          Utterance(1, "B", "well look at that", Emotion.NEUTRAL),
                          Utterance(2, "A", "oh no way", target)))
    [inst] = build_instances([d])
    return inst


# 1 -------------------------------------------------------------------------

def test_criterion_1_gradient_fidelity(criterion):
    with criterion(1, "full TGIF grad_check < 1e-4 and primitives < 1e-6", budget=60) as notes:
        inst = flip_instance(Emotion.FEAR, Emotion.JOY)
        assert len(inst.utterances) == 3 and len(set(inst.speakers)) == 2
        model = tiny_model([inst], seed=3)
        assert model.config.enabled_modules == ("GUS", "GES", "SSES", "GSS")
        Y = np.zeros((3, model.label_space.dim))
        Y[1, model.label_space.index("relief")] = 1.0
        mask = model.mask(inst.source_emotion, inst.target_emotion)
        res = grad_check(lambda: focal_loss(model.probabilities(inst), Y, mask), model.params)
        notes.append(f"model max rel err {res.max_rel_error:.2e} at {res.worst_param}{res.worst_index}, {res.n_checked} coords")
        assert res.max_rel_error < 1e-4

        rng = np.random.default_rng(0)
        worst = 0.0
        unary = [T.sigmoid, T.tanh, T.relu, T.exp, lambda t: T.log(T.clip_min(t * t, 0.05)),
                 lambda t: T.softmax(t, axis=-1), lambda t: T.power(t, 2.0), lambda t: T.sum(t, axis=0),
                 lambda t: T.mean(t, axis=1), lambda t: T.transpose(t, (1, 0)), lambda t: t[1:, :2]]
        for _ in range(5):
            a = rng.uniform(0.1, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
            b = rng.normal(size=(4, 2))
            c = rng.uniform(0.5, 2.0, size=(3, 4))
            cases = [(f, (a,)) for f in unary] + [(T.matmul, (a, b)), (T.mul, (a, c)), (T.div, (a, c)),
                                                  (T.add, (a, c)), (T.sub, (a, c)),
                                                  (lambda x, y: T.concat([x, y], axis=0), (a, c))]
            for fn, arrays in cases:
                store = ParamStore()
                for i, arr in enumerate(arrays):
                    store[f"x{i}"] = arr
                w = rng.normal(size=fn(*[store[f"x{i}"] for i in range(len(arrays))]).shape)
                r = grad_check(lambda: T.sum(fn(*[store[f"x{i}"] for i in range(len(arrays))]) * w), store)
                worst = max(worst, r.max_rel_error)
        notes.append(f"primitive max rel err {worst:.2e}")
        assert worst < 1e-6


# 2 -------------------------------------------------------------------------

def test_criterion_2_mask_exactness(criterion):
    with criterion(2, "masked labels get zero probability and zero gradient; pair_table within polarity",
                   budget=30) as notes:
        pairs = tx.all_flip_pairs()
        assert len(pairs) == 42
        instances = {p: flip_instance(*p) for p in pairs}
        vocab = build_vocab(list(instances.values()))
        checked = 0
        for setup in (tx.FINE27, tx.COARSE_DEFN14):
            space = tx.label_space(setup)
            for mode in ("polarity", "pair_table"):
                model = TgifModel(tiny_config(label_setup=setup, mask_mode=mode), space, vocab, seed=2)
                for (s, t), inst in instances.items():
                    mask = model.mask(s, t)
                    Y = np.ones((len(inst.utterances), space.dim))
                    with Tape() as tape:
                        P = model.probabilities(inst)
                        loss = focal_loss(P, Y, mask)
                    grads = backward(loss, tape, model.params)
                    off = np.flatnonzero(~mask)
                    assert (P.data[:, off] == 0.0).all(), (setup, mode, s, t)
                    assert (grads["head.W"].data[:, off] == 0.0).all(), (setup, mode, s, t)
                    assert (grads["head.b"].data[off] == 0.0).all(), (setup, mode, s, t)
                    assert np.abs(grads["head.b"].data[mask]).max() > 0
                    checked += 1
        notes.append(f"{checked} pair/granularity/mode cases exact")

        violations = []
        for setup in (tx.FINE27, tx.COARSE_DEFN14):
            space = tx.label_space(setup)
            for s, t in pairs:
                strict = tx.allowed_mask(s, t, space, "pair_table")
                loose = tx.allowed_mask(s, t, space, "polarity")
                if (strict & ~loose).any():
                    violations.append(f"{setup}:{s}->{t}")
        if violations:
            notes.append(f"pair_table not within polarity for {len(violations)} of 84 cells, e.g. "
                         + ", ".join(violations[:3]))
        assert not violations


# 3 -------------------------------------------------------------------------

def test_criterion_3_instance_builder_oracle(criterion):
    with criterion(3, "detect_flips equals backward scan on 1000 random dialogues", budget=10) as notes:
        rng = np.random.default_rng(2024)
        dialogues = [random_dialogue(rng, f"r{k}", max_len=10, max_speakers=4) for k in range(1000)]
        flips = 0
        for d in dialogues:
            got = [tuple(f) for f in detect_flips(d)]
            assert got == scan_oracle(d), d.dialogue_id
            flips += len(got)
        instances = build_instances(dialogues)
        assert len(instances) == flips
        by_id = {d.dialogue_id: d for d in dialogues}
        for inst in instances:
            d = by_id[inst.dialogue_id]
            assert inst.utterances == d.utterances[:inst.target_index + 1]
            assert inst.instance_id == f"{inst.dialogue_id}#{inst.target_index}"
        notes.append(f"{flips} flips")


# 4 -------------------------------------------------------------------------

def exact_oracle(gold, pred, labels):
    """Confusion counts by enumerating every (utterance, label) cell, scores as exact fractions."""
    tp, fp, fn = ({l: 0 for l in labels} for _ in range(3))
    for gi, pi in zip(gold, pred):
        for g, p in zip(gi, pi):
            for l in labels:
                if l in g and l in p:
                    tp[l] += 1
                elif l in p:
                    fp[l] += 1
                elif l in g:
                    fn[l] += 1
    total = sum(tp[l] + fn[l] for l in labels)
    out = [Fraction(0)] * 3
    for l in labels:
        support = tp[l] + fn[l]
        prec = Fraction(tp[l], tp[l] + fp[l]) if tp[l] + fp[l] else Fraction(0)
        rec = Fraction(tp[l], support) if support else Fraction(0)
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
        for k, v in enumerate((prec, rec, f1)):
            out[k] += v * support
    scores = [float(v / total) if total else 0.0 for v in out]
    return ([tp[l] for l in labels], [fp[l] for l in labels], [fn[l] for l in labels]), scores


def test_criterion_4_metric_and_focal_oracles(criterion):
    with criterion(4, "weighted_prf vs brute-force oracle on 1000 cases; focal(0, .5) = BCE/2", budget=10) as notes:
        space = tx.fine_space()
        labels = space.labels
        rng = np.random.default_rng(99)
        worst = 0.0
        for _ in range(1000):
            shape = [int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 5)))]
            density = rng.uniform(0.0, 0.3)
            gold = [[frozenset(l for l in labels if rng.random() < density) for _ in range(n)] for n in shape]
            pred = [[frozenset(l for l in labels if rng.random() < density) for _ in range(n)] for n in shape]
            m = weighted_prf(gold, pred, space)
            (tp, fp, fn), scores = exact_oracle(gold, pred, labels)
            assert m.tp.tolist() == tp and m.fp.tolist() == fp and m.fn.tolist() == fn
            got = (m.weighted_precision, m.weighted_recall, m.weighted_f1)
            worst = max(worst, max(abs(a - b) for a, b in zip(got, scores)))
        notes.append(f"counts exact, max |score - exact rational| {worst:.1e}")
        assert worst <= 1e-12

        worst = 0.0
        for _ in range(200):
            shape = (int(rng.integers(1, 8)), int(rng.integers(1, 28)))
            P = rng.uniform(1e-9, 1 - 1e-9, size=shape)
            Y = (rng.random(shape) < 0.3).astype(float)
            bce = float(np.mean(-(Y * np.log(P) + (1 - Y) * np.log(1 - P))))
            got = focal_loss(P, Y, np.ones(shape[1], dtype=bool), gamma=0.0, alpha=0.5).item()
            worst = max(worst, abs(got - 0.5 * bce))
        notes.append(f"focal vs BCE max abs diff {worst:.1e}")
        assert worst <= 1e-12


# 5 -------------------------------------------------------------------------

def test_criterion_5_learnability(criterion):
    with criterion(5, "demo overfit to W-F1 >= 0.95 within 500 epochs; +GES beats GUS by >= 0.05",
                   budget=600) as notes:
        data = demo.load("demo_train")
        assert len(data) == 64
        result = train(data, data, TgifConfig(), TrainConfig(epochs=500), seed=7,
                       on_epoch=lambda rec: rec["dev_wf1"] >= 0.95)
        wf1 = evaluate(result.model, data).weighted_f1
        notes.append(f"train W-F1 {wf1:.3f} at epoch {result.best_epoch}")
        assert wf1 >= 0.95 and result.best_epoch <= 500

        table = ablation_report(demo.load("emotion_train"), demo.load("emotion_dev"), TgifConfig(),
                                TrainConfig(), seed=7, setups=(tx.FINE27,), epochs=40, rows=("GUS", "+GES"))
        gus, ges = table.rows["GUS"][tx.FINE27], table.rows["+GES"][tx.FINE27]
        notes.append(f"GUS {gus:.3f}, +GES {ges:.3f}")
        assert ges - gus >= 0.05


# 6 -------------------------------------------------------------------------

def test_criterion_6_determinism_and_persistence(criterion, tmp_path):
    with criterion(6, "bit-identical logs and checkpoints; save/load/forward identical") as notes:
        tr, dv = demo.load("demo_train")[:24], demo.load("demo_dev")[:8]
        runs = [train(tr, dv, TgifConfig(), TrainConfig(epochs=3), seed=7) for _ in range(2)]
        assert runs[0].log_lines() == runs[1].log_lines()
        assert checkpoint_bytes(runs[0].model) == checkpoint_bytes(runs[1].model)
        save_checkpoint(runs[0].model, tmp_path / "a.ckpt")
        loaded = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(loaded, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        for inst in dv:
            assert np.array_equal(runs[0].model.forward(inst).probs, loaded.forward(inst).probs)
        notes.append(f"{len(runs[0].log)} epochs, {len(dv)} forwards compared")


# 7 -------------------------------------------------------------------------

MELD_SPLITS = {"train": (834, 4001, 5262), "dev": (95, 427, 495), "test": (232, 1002, 1152)}


def test_criterion_7_meld_statistics(criterion, capsys, tmp_path):
    root = os.environ.get("EFR_MELD_I_DIR")
    if not root:
        with capsys.disabled():
            print("\ncriterion 7: SKIP (set EFR_MELD_I_DIR to a directory with "
                  "{train,dev,test}_dialogues.jsonl and {train,dev,test}_gold.jsonl)")
        pytest.skip("MELD-I files not supplied")
    root = Path(root)
    with criterion(7, "MELD-I corpus statistics reproduce exactly") as notes:
        totals = {"positive": 0, "negative": 0}
        matrix = None
        for split, (n_dialogues, n_flips, n_triggers) in MELD_SPLITS.items():
            out = tmp_path / f"{split}.jsonl"
            assert cli.main(["build-instances", "--dialogues", str(root / f"{split}_dialogues.jsonl"),
                             "--gold", str(root / f"{split}_gold.jsonl"), "--out", str(out)]) == 0
            capsys.readouterr()
            assert cli.main(["stats", "--instances", str(out), "--format", "json"]) == 0
            stats = json.loads(capsys.readouterr().out)
            dialogues = sum(1 for line in (root / f"{split}_dialogues.jsonl").read_text().splitlines() if line.strip())
            notes.append(f"{split}: {dialogues}/{stats['n_instances']}/{stats['triggers']}")
            assert (dialogues, stats["n_instances"], stats["triggers"]) == (n_dialogues, n_flips, n_triggers)
            totals["positive"] += stats["positive_flips"]
            totals["negative"] += stats["negative_flips"]
            if split == "train":
                matrix = stats["flip_matrix"]
                support = stats["fine_counts"]
        assert matrix["neutral"]["joy"] == 616
        assert all(matrix[e][e] == 0 for e in matrix)
        assert totals == {"positive": 2612, "negative": 2818}
        ranked = sorted(support, key=lambda l: (-support[l], l))
        assert set(ranked[:3]) == {"annoyance", "awkwardness", "excitement"}
        assert set(ranked[-3:]) == {"nostalgia", "pain", "boredom"}


# 8 -------------------------------------------------------------------------

def test_criterion_8_agreement(criterion):
    with criterion(8, "Krippendorff alpha: identical 1.0, independent ~0, 4-unit fixture") as notes:
        rng = np.random.default_rng(5)
        records = {}
        for k in range(200):
            n = int(rng.integers(3, 9))
            records[f"u{k}#{n - 1}"] = Annotation(f"u{k}#{n - 1}", {int(i) for i in
                                                                    np.flatnonzero(rng.random(n) < 0.3)}, {})
        a = AnnotationFile("A", records)
        assert krippendorff_alpha([a, AnnotationFile("B", dict(records))], "trigger").average == 1.0

        files = []
        for who in ("A", "B"):
            recs = {f"i{k}#9": Annotation(f"i{k}#9", {int(j) for j in np.flatnonzero(rng.random(10) < 0.3)}, {})
                    for k in range(150)}
            files.append(AnnotationFile(who, recs))
        independent = krippendorff_alpha(files, "trigger").average
        notes.append(f"independent alpha {independent:+.4f} over 1500 units")
        assert abs(independent) <= 0.05

        fixture = [AnnotationFile("A", {"x#3": Annotation("x#3", {0, 1}, {})}),
                   AnnotationFile("B", {"x#3": Annotation("x#3", {0}, {})})]
        got = krippendorff_alpha(fixture, "trigger").average
        want = coincidence_alpha([(True, True), (True, False), (False, False), (False, False)], nominal_distance)
        notes.append(f"fixture {got:.12f} vs oracle {want:.12f}")
        assert abs(got - want) <= 1e-10
