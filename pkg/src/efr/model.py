"""The TGIF network.

Four encoders run over one instance:

* GUS  -- utterance text, mean-pooled token embeddings through a Transformer
* GES  -- a GRU over the one-hot emotion sequence
* SSES -- one GRU per speaker (by first appearance) over that speaker's
          emotions, re-interleaved into dialogue order
* GSS  -- a Transformer over one-hot speaker ids

Fusion: g = FC_a(GUS ++ GSS), m = FC_b(GES ++ SSES), z = g ++ m; every row
gets the target row appended, x_i = z_i ++ z_T, and passes through ReLU
layers into one sigmoid unit per label. Labels ruled out by the flip's
mask have probability exactly zero.
"""
from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from efr import taxonomy
from efr.autograd import tensor as T
from efr.autograd.layers import (ParamStore, add_gru_params, add_transformer_params, gru_sequence, linear,
                                 transformer_encoder)
from efr.autograd.tensor import Tensor
from efr.corpus import EMOTIONS, EfrInstance, Emotion
from efr.taxonomy import LabelSpace

MODULES = ("GUS", "GES", "SSES", "GSS")
MASK_MODES = ("polarity", "pair_table", "off")
PAD, UNK = "<pad>", "<unk>"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TgifConfig:
    d_model: int = 64
    heads: int = 4
    transformer_layers: int = 1
    d_ff: int = 128
    gru_hidden: int = 64
    fusion_hidden: Tuple[int, ...] = (128, 64)
    vocab_size: Optional[int] = None
    max_tokens_per_utterance: int = 50
    max_speakers_per_instance: int = 8
    label_setup: str = taxonomy.FINE27
    mask_mode: str = "polarity"
    decision_threshold: float = 0.5
    enabled_modules: Tuple[str, ...] = MODULES
    positional_encoding: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "fusion_hidden", tuple(int(h) for h in self.fusion_hidden))
        mods = tuple(m.upper() for m in self.enabled_modules)
        object.__setattr__(self, "enabled_modules", tuple(m for m in MODULES if m in mods))
        unknown = set(mods) - set(MODULES)
        if unknown:
            raise ConfigError(f"unknown modules {sorted(unknown)}; expected a subset of {MODULES}")
        if "GUS" not in self.enabled_modules:
            raise ConfigError("GUS is the backbone and cannot be disabled")
        for name in ("d_model", "heads", "transformer_layers", "d_ff", "gru_hidden",
                     "max_tokens_per_utterance", "max_speakers_per_instance"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ConfigError("decision_threshold must lie in (0, 1)")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        if self.label_setup not in taxonomy.SETUPS:
            raise ConfigError(f"label_setup must be one of {taxonomy.SETUPS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fusion_hidden"] = list(self.fusion_hidden)
        d["enabled_modules"] = list(self.enabled_modules)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TgifConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config key {extra[0]!r}")
        kw = dict(d)
        for key in ("fusion_hidden", "enabled_modules"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def replace(self, **changes) -> "TgifConfig":
        return dataclasses.replace(self, **changes)


def tokenize(text: str, limit: int) -> List[str]:
    return text.lower().split()[:limit]


@dataclass(frozen=True)
class Vocab:
    tokens: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.tokens[:2] != (PAD, UNK):
            raise ValueError("vocabulary must start with the pad and unk tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, tokens: Sequence[str]) -> List[int]:
        index = self._index  # type: ignore[attr-defined]
        return [index.get(t, 1) for t in tokens] or [0]


def build_vocab(instances: Iterable[EfrInstance], max_tokens: int = 50, min_count: int = 1) -> Vocab:
    counts: Counter = Counter()
    seen = set()
    for inst in instances:
        for u in inst.utterances:
            key = (inst.dialogue_id, u.index)
            if key in seen:
                continue
            seen.add(key)
            counts.update(tokenize(u.text, max_tokens))
    words = sorted(w for w, c in counts.items() if c >= min_count)
    return Vocab((PAD, UNK, *words))


def speaker_slots(instance: EfrInstance) -> List[int]:
    """First-appearance index of each utterance's speaker."""
    order: Dict[str, int] = {}
    return [order.setdefault(u.speaker, len(order)) for u in instance.utterances]


def sses_layout(instance: EfrInstance) -> List[List[int]]:
    """Utterance positions handled by each speaker-specific GRU."""
    groups: Dict[int, List[int]] = {}
    for pos, slot in enumerate(speaker_slots(instance)):
        groups.setdefault(slot, []).append(pos)
    return [groups[k] for k in sorted(groups)]


@dataclass
class Prediction:
    instance_id: str
    probs: np.ndarray
    predicted: List[FrozenSet[str]]
    mask: np.ndarray

    def to_record(self, space: LabelSpace) -> dict:
        return {
            "instance_id": self.instance_id,
            "per_utterance": [
                {"index": i, "probs": [float(p) for p in row],
                 "predicted": [l for l in space.labels if l in self.predicted[i]]}
                for i, row in enumerate(self.probs)
            ],
            "mask": [bool(m) for m in self.mask],
        }


class TgifModel:
    def __init__(self, config: TgifConfig, label_space: LabelSpace, vocab: Vocab, seed: int = 0,
                 params: Optional[ParamStore] = None):
        if config.label_setup != label_space.setup:
            raise ConfigError(f"config label_setup {config.label_setup!r} differs from label space "
                              f"{label_space.setup!r}")
        if config.vocab_size is None:
            config = config.replace(vocab_size=len(vocab))
        elif config.vocab_size != len(vocab):
            raise ConfigError(f"vocab_size {config.vocab_size} does not match vocabulary of {len(vocab)}")
        self.config = config
        self.label_space = label_space
        self.vocab = vocab
        self.seed = int(seed)
        self.params = params if params is not None else self.init_params(config, label_space, self.seed)
        self.dropout_rng: Optional[np.random.Generator] = None

    @staticmethod
    def init_params(config: TgifConfig, space: LabelSpace, seed: int) -> ParamStore:
        c = config
        store = ParamStore(seed)
        d, g = c.d_model, c.gru_hidden
        store.create("gus.embedding", (c.vocab_size, d))
        for i in range(c.transformer_layers):
            add_transformer_params(store, f"gus.layer{i}.", d, c.d_ff)
        if "GES" in c.enabled_modules:
            add_gru_params(store, "ges.", len(EMOTIONS), g)
        if "SSES" in c.enabled_modules:
            for k in range(c.max_speakers_per_instance):
                add_gru_params(store, f"sses.speaker{k}.", len(EMOTIONS), g)
        if "GSS" in c.enabled_modules:
            store.create("gss.proj.W", (c.max_speakers_per_instance, d))
            store.create("gss.proj.b", (d,), init="zeros")
            for i in range(c.transformer_layers):
                add_transformer_params(store, f"gss.layer{i}.", d, c.d_ff)
        store.create("fusion.a.W", (2 * d, d))
        store.create("fusion.a.b", (d,), init="zeros")
        store.create("fusion.b.W", (2 * g, d))
        store.create("fusion.b.b", (d,), init="zeros")
        width = 4 * d
        for j, h in enumerate(c.fusion_hidden):
            store.create(f"fusion.hidden{j}.W", (width, h))
            store.create(f"fusion.hidden{j}.b", (h,), init="zeros")
            width = h
        store.create("head.W", (width, space.dim))
        store.create("head.b", (space.dim,), init="zeros")
        return store

    # -- encoders ---------------------------------------------------------

    def _check_speakers(self, instance: EfrInstance) -> List[int]:
        slots = speaker_slots(instance)
        if max(slots) + 1 > self.config.max_speakers_per_instance:
            raise ConfigError(f"instance {instance.instance_id!r} has {max(slots) + 1} speakers; "
                              f"max_speakers_per_instance is {self.config.max_speakers_per_instance}")
        return slots

    def pooled_utterances(self, instance: EfrInstance) -> Tensor:
        """Mean of token embeddings per utterance, [t, d_model], before the Transformer."""
        ids, owner = [], []
        for pos, u in enumerate(instance.utterances):
            toks = self.vocab.ids(tokenize(u.text, self.config.max_tokens_per_utterance))
            ids.extend(toks)
            owner.extend([pos] * len(toks))
        t = len(instance.utterances)
        pool = np.zeros((t, len(ids)))
        pool[owner, np.arange(len(ids))] = 1.0
        pool /= pool.sum(axis=1, keepdims=True)
        emb = T.embedding_lookup(self.params["gus.embedding"], ids)
        return T.matmul(pool, emb)

    def _layers(self, prefix: str) -> List[Dict[str, Tensor]]:
        return [self.params.group(f"{prefix}.layer{i}.") for i in range(self.config.transformer_layers)]

    def encode_gus(self, instance: EfrInstance) -> Tensor:
        return transformer_encoder(self.pooled_utterances(instance), self._layers("gus"), self.config.heads,
                                   positional=self.config.positional_encoding)

    @staticmethod
    def emotion_inputs(instance: EfrInstance) -> np.ndarray:
        return np.stack([u.emotion.one_hot() for u in instance.utterances])

    def encode_ges(self, instance: EfrInstance) -> Tensor:
        return gru_sequence(self.emotion_inputs(instance), self.params.group("ges."))

    def encode_sses(self, instance: EfrInstance) -> Tensor:
        self._check_speakers(instance)
        onehots = self.emotion_inputs(instance)
        layout = sses_layout(instance)
        blocks = [gru_sequence(onehots[rows], self.params.group(f"sses.speaker{k}."))
                  for k, rows in enumerate(layout)]
        stacked = T.concat(blocks, axis=0)
        order = [pos for rows in layout for pos in rows]
        inverse = np.argsort(order)
        return T.getitem(stacked, inverse)

    def speaker_inputs(self, instance: EfrInstance) -> np.ndarray:
        slots = self._check_speakers(instance)
        x = np.zeros((len(slots), self.config.max_speakers_per_instance))
        x[np.arange(len(slots)), slots] = 1.0
        return x

    def encode_gss(self, instance: EfrInstance) -> Tensor:
        x = linear(self.speaker_inputs(instance), self.params["gss.proj.W"], self.params["gss.proj.b"])
        return transformer_encoder(x, self._layers("gss"), self.config.heads,
                                   positional=self.config.positional_encoding)

    def encode(self, instance: EfrInstance) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        """(H_u, H_s, H_e, H_hat); disabled modules give zeros of their nominal shape."""
        t = len(instance.utterances)
        c = self.config
        on = c.enabled_modules
        H_u = self.encode_gus(instance)
        H_s = self.encode_gss(instance) if "GSS" in on else Tensor(np.zeros((t, c.d_model)))
        H_e = self.encode_ges(instance) if "GES" in on else Tensor(np.zeros((t, c.gru_hidden)))
        H_hat = self.encode_sses(instance) if "SSES" in on else Tensor(np.zeros((t, c.gru_hidden)))
        return H_u, H_s, H_e, H_hat

    # -- fusion and output ------------------------------------------------

    def mask(self, source: Emotion, target: Emotion) -> np.ndarray:
        if self.config.mask_mode == "off":
            return np.ones(self.label_space.dim, dtype=bool)
        return taxonomy.allowed_mask(source, target, self.label_space, self.config.mask_mode)

    def fuse_and_predict(self, H_u, H_s, H_e, H_hat, source: Emotion, target: Emotion,
                         return_logits: bool = False):
        t = H_u.shape[0]
        if not (H_s.shape[0] == H_e.shape[0] == H_hat.shape[0] == t):
            raise T.ShapeError("fuse", H_u.shape, H_s.shape, H_e.shape, H_hat.shape)
        p = self.params
        g = T.relu(linear(T.concat([H_u, H_s], axis=1), p["fusion.a.W"], p["fusion.a.b"]))
        m = T.relu(linear(T.concat([H_e, H_hat], axis=1), p["fusion.b.W"], p["fusion.b.b"]))
        z = T.concat([g, m], axis=1)
        z_target = T.getitem(z, np.full(t, t - 1))
        x = T.concat([z, z_target], axis=1)
        for j in range(len(self.config.fusion_hidden)):
            x = T.relu(linear(x, p[f"fusion.hidden{j}.W"], p[f"fusion.hidden{j}.b"]))
            x = T.dropout(x, self.config.dropout, self.dropout_rng)
        logits = linear(x, p["head.W"], p["head.b"])
        mask = self.mask(source, target)
        probs = T.sigmoid(logits) * mask.astype(np.float64)
        return (probs, logits) if return_logits else probs

    def probabilities(self, instance: EfrInstance) -> Tensor:
        H_u, H_s, H_e, H_hat = self.encode(instance)
        return self.fuse_and_predict(H_u, H_s, H_e, H_hat, instance.source_emotion, instance.target_emotion)

    def forward(self, instance: EfrInstance) -> Prediction:
        probs = self.probabilities(instance).data
        thr = self.config.decision_threshold
        predicted = [frozenset(l for l, p in zip(self.label_space.labels, row) if p > thr) for row in probs]
        return Prediction(instance.instance_id, np.array(probs), predicted,
                          self.mask(instance.source_emotion, instance.target_emotion))

    __call__ = forward

    def predict(self, instances: Iterable[EfrInstance]) -> List[Prediction]:
        return [self.forward(i) for i in instances]

    def gold_targets(self, instance: EfrInstance) -> np.ndarray:
        return np.stack([self.label_space.encode(s) for s in instance.instigators])


def instance_report(instance: EfrInstance, prediction: Prediction, space: LabelSpace) -> str:
    """Gold against predicted instigators per utterance, one row each."""
    rows = [("#", "speaker", "emotion", "utterance", "gold", "predicted")]
    for u, gold, pred in zip(instance.utterances, instance.instigators, prediction.predicted):
        text = u.text if len(u.text) <= 40 else u.text[:37] + "..."
        rows.append((str(u.index), u.speaker, u.emotion.value, text,
                     ", ".join(sorted(space.project(gold))) or "-",
                     ", ".join(l for l in space.labels if l in pred) or "-"))
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    head = f"{instance.instance_id}: {instance.source_emotion.value} -> {instance.target_emotion.value}"
    return "\n".join([head] + ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows])
