"""Rule-generated synthetic corpora that ship with the package.

Two generators:

``lexical_corpus``
    Every dialogue ends in exactly one flip. One or two utterances are
    triggers and their instigator labels are drawn from the labels the
    polarity mask allows for that flip. A trigger utterance contains one
    cue word per label; every other word is filler. Labels are therefore
    recoverable from text alone.

``emotion_corpus``
    Text is pure filler. The utterance just before the target is the only
    trigger and its label is a fixed function of (flip polarity, that
    utterance's emotion). Only a model that reads emotions can do better
    than a prior.

Regenerate the shipped files with ``python -m efr.demo``.
"""
from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from efr import taxonomy
from efr.corpus import (EMOTIONS, Annotation, AnnotationFile, Dialogue, EfrInstance, Emotion, Utterance,
                        parse_corpus, write_annotations, write_dialogues, write_instances)
from efr.instances import build_instances

CUES: Dict[str, str] = {
    "annoyance": "irritating", "pain": "hurts", "awkwardness": "awkward", "benefit": "promotion",
    "cheer": "congratulations", "humor": "hilarious", "confusion": "huh", "curiosity": "wonder",
    "calmness": "relax", "relief": "phew", "excitement": "amazing", "satisfaction": "perfect",
    "desire": "want", "adoration": "adorable", "impressed": "impressive", "loss": "gone",
    "nervousness": "scared", "scold": "shame", "guilt": "sorry", "shock": "unbelievable",
    "threat": "kill", "horror": "terrifying", "abuse": "idiot", "boredom": "boring",
    "sympathy": "poor", "challenge": "bet", "nostalgia": "remember",
}
FILLER = ("okay", "so", "the", "and", "i", "you", "we", "it", "just", "really", "well", "think", "know",
          "that", "this", "was", "is", "about", "yeah", "right", "there", "here", "then", "now", "maybe")
NAMES = ("Ross", "Rachel", "Monica", "Chandler", "Joey", "Phoebe")

DEMO_FILES = {
    "demo_train": "demo_train.jsonl",
    "demo_dev": "demo_dev.jsonl",
    "emotion_train": "emotion_train.jsonl",
    "emotion_dev": "emotion_dev.jsonl",
}


def _allowed(source: Emotion, target: Emotion) -> List[str]:
    ok = taxonomy.allowed_fine_labels(source, target, "polarity")
    return [l for l in taxonomy.FINE_LABELS if l in ok]


def _speaker_turns(rng: np.random.Generator, t: int, speakers: Sequence[str]) -> List[str]:
    """Speaker order with the first speaker last and at least once before."""
    turns = [str(rng.choice(speakers)) for _ in range(t - 1)]
    if speakers[0] not in turns:
        turns[int(rng.integers(t - 1))] = speakers[0]
    return turns + [speakers[0]]


def _emotions(rng: np.random.Generator, turns: Sequence[str], source: Emotion, target: Emotion) -> List[Emotion]:
    # one emotion per speaker so the final utterance is the only flip
    fixed = {s: EMOTIONS[int(rng.integers(len(EMOTIONS)))] for s in turns}
    fixed[turns[-1]] = source
    return [fixed[s] for s in turns[:-1]] + [target]


def _filler(rng: np.random.Generator, lo: int, hi: int) -> List[str]:
    return [str(w) for w in rng.choice(FILLER, size=int(rng.integers(lo, hi + 1)))]


def lexical_corpus(n: int = 64, seed: int = 0, prefix: str = "demo") -> Tuple[List[Dialogue], AnnotationFile]:
    rng = np.random.default_rng(seed)
    pairs = taxonomy.all_flip_pairs()
    dialogues, records = [], {}
    for d in range(n):
        source, target = pairs[(d + int(rng.integers(len(pairs)))) % len(pairs)]
        speakers = [str(s) for s in rng.choice(NAMES, size=int(rng.integers(2, 4)), replace=False)]
        t = int(rng.integers(3, 7))
        turns = _speaker_turns(rng, t, speakers)
        emotions = _emotions(rng, turns, source, target)
        allowed = _allowed(source, target)
        n_trig = 1 if rng.random() < 0.6 else 2
        triggers = sorted(int(i) for i in rng.choice(t, size=n_trig, replace=False))
        labels = {i: [str(l) for l in rng.choice(allowed, size=1 if rng.random() < 0.7 else 2, replace=False)]
                  for i in triggers}
        utts = []
        for i in range(t):
            words = _filler(rng, 3, 6)
            for l in labels.get(i, []):
                words.insert(int(rng.integers(len(words) + 1)), CUES[l])
            utts.append(Utterance(i, turns[i], " ".join(words), emotions[i]))
        did = f"{prefix}{d:03d}"
        dialogues.append(Dialogue(did, tuple(utts)))
        iid = f"{did}#{t - 1}"
        records[iid] = Annotation(iid, frozenset(triggers), {i: frozenset(v) for i, v in labels.items()})
    return dialogues, AnnotationFile("gold", records)


def emotion_label(source: Emotion, target: Emotion, emotion: Emotion) -> str:
    allowed = _allowed(source, target)
    return allowed[(2 * emotion.index) % len(allowed)]


def emotion_corpus(n: int = 128, seed: int = 0, prefix: str = "emo") -> Tuple[List[Dialogue], AnnotationFile]:
    rng = np.random.default_rng(seed)
    pairs = taxonomy.all_flip_pairs()
    dialogues, records = [], {}
    for d in range(n):
        source, target = pairs[int(rng.integers(len(pairs)))]
        speakers = [str(s) for s in rng.choice(NAMES, size=int(rng.integers(2, 4)), replace=False)]
        t = int(rng.integers(3, 7))
        turns = _speaker_turns(rng, t, speakers)
        emotions = _emotions(rng, turns, source, target)
        trig = t - 2
        utts = tuple(Utterance(i, turns[i], " ".join(_filler(rng, 3, 6)), emotions[i]) for i in range(t))
        did = f"{prefix}{d:03d}"
        dialogues.append(Dialogue(did, utts))
        iid = f"{did}#{t - 1}"
        records[iid] = Annotation(iid, frozenset({trig}),
                                  {trig: frozenset({emotion_label(source, target, emotions[trig])})})
    return dialogues, AnnotationFile("gold", records)


def generate() -> Dict[str, List[EfrInstance]]:
    out = {}
    for key, (fn, n, seed, prefix) in {
        "demo_train": (lexical_corpus, 64, 7, "demo"),
        "demo_dev": (lexical_corpus, 32, 8, "demodev"),
        "emotion_train": (emotion_corpus, 160, 11, "emo"),
        "emotion_dev": (emotion_corpus, 64, 12, "emodev"),
    }.items():
        dialogues, gold = fn(n, seed, prefix)
        out[key] = build_instances(dialogues, gold)
    return out


def data_path(name: str) -> Path:
    """Filesystem path of a shipped data file (``demo_train`` etc. or a file name)."""
    fname = DEMO_FILES.get(name, name)
    path = Path(str(resources.files("efr.data").joinpath(fname)))
    if not path.exists():
        raise FileNotFoundError(f"no shipped data file {fname!r}")
    return path


def load(name: str) -> List[EfrInstance]:
    return parse_corpus(data_path(name), "instances")


def write_all(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for key, instances in generate().items():
        write_instances(instances, directory / DEMO_FILES[key])
    dialogues, gold = lexical_corpus(64, 7, "demo")
    write_dialogues(dialogues, directory / "demo_dialogues.jsonl")
    write_annotations(gold, directory / "demo_gold.jsonl")


if __name__ == "__main__":  # pragma: no cover
    write_all(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "data")
