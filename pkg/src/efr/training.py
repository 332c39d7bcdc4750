"""Focal loss, Adam, the training loop and the binary checkpoint format."""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from efr import taxonomy
from efr.autograd import tensor as T
from efr.autograd.layers import ParamStore
from efr.autograd.tensor import Tape, Tensor
from efr.corpus import EfrInstance
from efr.model import ConfigError, TgifConfig, TgifModel, Vocab, build_vocab

P_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    epochs: int = 100
    batch_size: int = 8

    def __post_init__(self):
        if self.lr <= 0 or self.adam_eps <= 0:
            raise ConfigError("lr and adam_eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.focal_gamma < 0 or not 0 <= self.focal_alpha <= 1:
            raise ConfigError("focal_gamma must be >= 0 and focal_alpha in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_MODEL_KEYS = {f.name for f in dataclasses.fields(TgifConfig)}


def split_config(flat: Mapping) -> Tuple[TgifConfig, TrainConfig]:
    """Split one flat config mapping into model and optimisation settings."""
    extra = sorted(set(flat) - _TRAIN_KEYS - _MODEL_KEYS)
    if extra:
        raise ConfigError(f"unknown config key {extra[0]!r}")
    model = TgifConfig.from_dict({k: v for k, v in flat.items() if k in _MODEL_KEYS})
    train = TrainConfig(**{k: v for k, v in flat.items() if k in _TRAIN_KEYS})
    return model, train


def load_config(path: Union[str, Path]) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    split_config(data)
    return data


# ---------------------------------------------------------------------------
# loss


def focal_loss(P, Y, mask, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Mean focal loss over the allowed (utterance, label) coordinates.

    Masked labels are dropped before any arithmetic, so they contribute
    nothing to the value or the gradient.
    """
    P = T.as_tensor(P)
    Y = np.asarray(Y, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if P.ndim != 2 or Y.shape != P.shape or mask.shape != (P.shape[1],):
        raise T.ShapeError("focal_loss", P.shape, Y.shape, mask.shape)
    cols = np.flatnonzero(mask)
    if cols.size == 0:
        raise ValueError("mask allows no labels")
    p = T.getitem(P, (slice(None), cols))
    y = Y[:, cols]
    p_t = T.clip_min(p * y + (1.0 - p) * (1.0 - y), P_FLOOR)
    alpha_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    loss = -(alpha_t * T.power(1.0 - p_t, gamma) * T.log(p_t)) if gamma != 0 else -(alpha_t * T.log(p_t))
    return T.mean(loss)


def instance_loss(model: TgifModel, instance: EfrInstance, train_config: TrainConfig) -> Tensor:
    P = model.probabilities(instance)
    mask = model.mask(instance.source_emotion, instance.target_emotion)
    return focal_loss(P, model.gold_targets(instance), mask, train_config.focal_gamma, train_config.focal_alpha)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, grads: Mapping[str, Tensor], state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam update, applied to parameters in name order."""
    missing = [n for n in params if n not in grads]
    if missing:
        raise KeyError(f"no gradient for parameter {missing[0]!r}")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name in params:
        g = grads[name].data if isinstance(grads[name], Tensor) else np.asarray(grads[name])
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        v = (1.0 - beta2) * g * g if v is None else beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] = params[name].data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: TgifModel
    log: List[dict]
    best_epoch: Optional[int]

    def log_lines(self) -> List[str]:
        return [json.dumps(rec, sort_keys=True) for rec in self.log]


def _dev_score(model: TgifModel, dev: Sequence[EfrInstance]) -> Optional[float]:
    if not dev:
        return None
    from efr.evaluation import evaluate

    return evaluate(model, dev).weighted_f1


def train(train_set: Sequence[EfrInstance], dev_set: Sequence[EfrInstance], config: TgifConfig = TgifConfig(),
          train_config: TrainConfig = TrainConfig(), seed: int = 0, epochs: Optional[int] = None,
          batch_size: Optional[int] = None, on_epoch: Optional[Callable[[dict], None]] = None,
          label_space: Optional[taxonomy.LabelSpace] = None, vocab: Optional[Vocab] = None) -> TrainResult:
    """Train TGIF and return the parameters with the best dev weighted F1.

    Ties keep the earliest epoch. Without a dev set the final epoch wins;
    with ``epochs=0`` the initialised model is returned untouched.
    ``on_epoch`` sees each log record; a truthy return ends training there.
    Every random draw comes from ``seed``, so two runs give identical logs
    and parameters.
    """
    train_set, dev_set = list(train_set), list(dev_set)
    if not train_set:
        raise ValueError("training set is empty")
    epochs = train_config.epochs if epochs is None else int(epochs)
    batch_size = train_config.batch_size if batch_size is None else int(batch_size)
    if epochs < 0 or batch_size < 1:
        raise ConfigError("epochs must be >= 0 and batch_size positive")
    space = label_space or taxonomy.label_space(config.label_setup, train_set)
    vocab = vocab or build_vocab(train_set, config.max_tokens_per_utterance)
    model = TgifModel(config.replace(vocab_size=None), space, vocab, seed=seed)
    for inst in train_set + dev_set:
        model._check_speakers(inst)
    rng = np.random.default_rng(seed)
    model.dropout_rng = np.random.default_rng([seed, 1]) if config.dropout > 0 else None
    state = AdamState()
    best: Tuple[float, Optional[int], Optional[ParamStore]] = (-math.inf, None, None)
    log: List[dict] = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), batch_size):
            batch = [train_set[i] for i in order[start:start + batch_size]]
            grads: Dict[str, np.ndarray] = {}
            for inst in batch:
                with Tape() as tape:
                    loss = instance_loss(model, inst, train_config)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch} on instance {inst.instance_id!r}")
                total += value
                for name, g in T.backward(loss, tape, model.params).items():
                    grads[name] = g.data if name not in grads else grads[name] + g.data
            scale = 1.0 / len(batch)
            adam_step(model.params, {n: Tensor(g * scale) for n, g in grads.items()}, state,
                      train_config.lr, train_config.beta1, train_config.beta2, train_config.adam_eps)
        saved_rng, model.dropout_rng = model.dropout_rng, None
        dev_wf1 = _dev_score(model, dev_set)
        model.dropout_rng = saved_rng
        record = {"epoch": epoch, "train_loss": total / len(train_set), "dev_wf1": dev_wf1}
        log.append(record)
        if dev_wf1 is None or dev_wf1 > best[0]:
            best = (dev_wf1 if dev_wf1 is not None else -math.inf, epoch, model.params.copy())
        if on_epoch is not None and on_epoch(record):
            break
    if best[2] is not None:
        model.params = best[2]
    model.dropout_rng = None
    return TrainResult(model, log, best[1])


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little endian):
#   b"TGIF-CKPT" | u32 version | u64 header length | header JSON (utf-8)
#   u32 parameter count, then per parameter, in name order:
#   u32 name length | name | u32 ndim | u32 dims... | float64 data

MAGIC = b"TGIF-CKPT"
VERSION = 1


def _header(model: TgifModel) -> bytes:
    header = {"config": model.config.to_dict(), "label_space": model.label_space.to_dict(),
              "vocab": list(model.vocab.tokens), "seed": model.seed}
    return json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")


def checkpoint_bytes(model: TgifModel) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    header = _header(model)
    parts += [struct.pack("<Q", len(header)), header, struct.pack("<I", len(model.params))]
    for name in model.params:
        data = np.ascontiguousarray(model.params[name].data, dtype="<f8")
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", data.ndim),
                  struct.pack(f"<{data.ndim}I", *data.shape), data.tobytes()]
    return b"".join(parts)


def save_checkpoint(model: TgifModel, path: Union[str, Path]) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated checkpoint (wanted {n} bytes at offset {self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def model_from_checkpoint_bytes(buf: bytes, path: str = "<bytes>",
                                label_setup: Optional[str] = None) -> TgifModel:
    r = _Reader(buf, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a TGIF checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is not supported (expected {VERSION})")
    n_header = struct.unpack("<Q", r.take(8))[0]
    try:
        header = json.loads(r.take(n_header).decode("utf-8"))
        config = TgifConfig.from_dict(header["config"])
        space = taxonomy.LabelSpace.from_dict(header["label_space"])
        vocab = Vocab(tuple(header["vocab"]))
        seed = int(header["seed"])
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint header ({exc})") from exc
    if label_setup is not None and label_setup != space.setup:
        raise CheckpointError(f"{path}: checkpoint label space is {space.setup!r}, requested {label_setup!r}")
    expected = TgifModel.init_params(config, space, seed)
    count = r.u32()
    if count != len(expected):
        raise CheckpointError(f"{path}: checkpoint holds {count} tensors, model expects {len(expected)}")
    params = ParamStore(seed)
    for name in expected:
        got = r.take(r.u32()).decode("utf-8")
        if got != name:
            raise CheckpointError(f"{path}: expected tensor {name!r}, found {got!r}")
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        if tuple(shape) != expected[name].shape:
            raise CheckpointError(f"{path}: shape mismatch for tensor {name!r}: "
                                  f"file has {tuple(shape)}, model expects {expected[name].shape}")
        n = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes after the last tensor")
    return TgifModel(config, space, vocab, seed=seed, params=params)


def load_checkpoint(path: Union[str, Path], label_setup: Optional[str] = None) -> TgifModel:
    path = Path(path)
    return model_from_checkpoint_bytes(path.read_bytes(), str(path), label_setup)
