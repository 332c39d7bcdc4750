"""Named parameters and the recurrent / attention building blocks."""
from __future__ import annotations

import zlib
from typing import Dict, Iterator, List, Mapping, MutableMapping, Optional, Sequence, Tuple

import numpy as np

from efr.autograd import tensor as T
from efr.autograd.tensor import ShapeError, Tensor


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # One stream per (seed, name): a parameter's initial value does not depend
    # on which other parameters exist.
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


class ParamStore(MutableMapping[str, Tensor]):
    """Trainable tensors by name; iteration is lexicographic."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: Dict[str, Tensor] = {}

    def create(self, name: str, shape: Sequence[int], init: str = "xavier") -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "xavier":
            fan_in, fan_out = (shape[0], shape[-1]) if len(shape) >= 2 else (shape[0], shape[0])
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = _param_rng(self.seed, name).uniform(-limit, limit, size=shape)
        else:
            raise ValueError(f"unknown initializer {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __setitem__(self, name: str, value) -> None:
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        if name in self._params and self._params[name].shape != arr.shape:
            raise ShapeError(f"param {name}", self._params[name].shape, arr.shape)
        self._params[name] = Tensor(arr, requires_grad=True, name=name)

    def __delitem__(self, name: str) -> None:
        del self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def group(self, prefix: str) -> Dict[str, Tensor]:
        return {k[len(prefix):]: v for k, v in self._params.items() if k.startswith(prefix)}

    def n_values(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore(self.seed)
        out._params = dict(self._params)
        return out


def linear(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = T.matmul(x, W)
    return y if b is None else T.add(y, b)


# ---------------------------------------------------------------------------
# GRU


def add_gru_params(store: ParamStore, prefix: str, d_in: int, d_h: int) -> None:
    # gate blocks are laid out [update | reset | candidate]
    store.create(prefix + "W", (d_in, 3 * d_h))
    store.create(prefix + "U", (d_h, 3 * d_h))
    store.create(prefix + "b", (3 * d_h,), init="zeros")


def gru_cell(x, h_prev, params: Mapping[str, Tensor]) -> Tensor:
    """One gated recurrent update for a batch of rows ``x`` [n, d_in], ``h_prev`` [n, d_h].

    z = sig(x W_z + h U_z + b_z), r = sig(x W_r + h U_r + b_r),
    c = tanh(x W_c + (r*h) U_c + b_c), h' = (1 - z) h + z c.
    """
    W, U, b = params["W"], params["U"], params["b"]
    x, h_prev = T.as_tensor(x), T.as_tensor(h_prev)
    d_h = U.shape[0]
    if W.shape[1] != 3 * d_h or U.shape != (d_h, 3 * d_h) or x.shape[-1] != W.shape[0] \
            or h_prev.shape[-1] != d_h:
        raise ShapeError("gru_cell", x.shape, h_prev.shape, W.shape, U.shape)
    gx = linear(x, W, b)
    return _gru_step(gx, h_prev, U[:, : 2 * d_h], U[:, 2 * d_h:], d_h)


def _gru_step(gx: Tensor, h: Tensor, U_zr: Tensor, U_c: Tensor, d_h: int) -> Tensor:
    zr = T.sigmoid(gx[:, : 2 * d_h] + T.matmul(h, U_zr))
    z = zr[:, :d_h]
    r = zr[:, d_h:]
    cand = T.tanh(gx[:, 2 * d_h:] + T.matmul(r * h, U_c))
    return h + z * (cand - h)


def gru_sequence(X, params: Mapping[str, Tensor], h0=None) -> Tensor:
    """Run a GRU over the rows of ``X`` [t, d_in]; returns all hidden states [t, d_h]."""
    W, U, b = params["W"], params["U"], params["b"]
    X = T.as_tensor(X)
    d_h = U.shape[0]
    if X.ndim != 2 or X.shape[1] != W.shape[0]:
        raise ShapeError("gru_sequence", X.shape, W.shape)
    gx = linear(X, W, b)
    U_zr, U_c = U[:, : 2 * d_h], U[:, 2 * d_h:]
    h = T.as_tensor(np.zeros((1, d_h)) if h0 is None else h0)
    states = []
    for i in range(X.shape[0]):
        h = _gru_step(gx[i:i + 1], h, U_zr, U_c, d_h)
        states.append(h)
    return T.concat(states, axis=0)


# ---------------------------------------------------------------------------
# Transformer encoder


def positional_encoding(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def add_transformer_params(store: ParamStore, prefix: str, d: int, d_ff: int) -> None:
    store.create(prefix + "W_qkv", (d, 3 * d))
    # no key bias: it shifts every score of a query equally and softmax cancels it
    store.create(prefix + "b_q", (d,), init="zeros")
    store.create(prefix + "b_v", (d,), init="zeros")
    store.create(prefix + "W_o", (d, d))
    store.create(prefix + "b_o", (d,), init="zeros")
    store.create(prefix + "ln1_g", (d,), init="ones")
    store.create(prefix + "ln1_b", (d,), init="zeros")
    store.create(prefix + "W_1", (d, d_ff))
    store.create(prefix + "b_1", (d_ff,), init="zeros")
    store.create(prefix + "W_2", (d_ff, d))
    store.create(prefix + "b_2", (d,), init="zeros")
    store.create(prefix + "ln2_g", (d,), init="ones")
    store.create(prefix + "ln2_b", (d,), init="zeros")


def multi_head_attention(X: Tensor, params: Mapping[str, Tensor], heads: int) -> Tuple[Tensor, Tensor]:
    """Bidirectional scaled dot-product self-attention; returns (output [t, d], weights [h, t, t])."""
    t, d = X.shape
    dk = d // heads
    qkv = T.matmul(X, params["W_qkv"])

    def split(block: int, bias: Optional[Tensor]) -> Tensor:
        part = qkv[:, block * d:(block + 1) * d]
        if bias is not None:
            part = part + bias
        return T.transpose(T.reshape(part, (t, heads, dk)), (1, 0, 2))

    q, k, v = split(0, params["b_q"]), split(1, None), split(2, params["b_v"])
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dk))
    weights = T.softmax(scores, axis=-1)
    ctx = T.matmul(weights, v)
    merged = T.reshape(T.transpose(ctx, (1, 0, 2)), (t, d))
    return linear(merged, params["W_o"], params["b_o"]), weights


def transformer_encoder_layer(X, params: Mapping[str, Tensor], heads: int) -> Tensor:
    """Post-norm encoder layer: LN(X + MHA(X)), then LN(. + FFN(.))."""
    X = T.as_tensor(X)
    if X.ndim != 2:
        raise ShapeError("transformer_encoder_layer", X.shape)
    d = X.shape[1]
    if heads < 1 or d % heads:
        raise ValueError(f"model width {d} is not divisible by {heads} heads")
    attn, _ = multi_head_attention(X, params, heads)
    h = T.layer_norm(X + attn) * params["ln1_g"] + params["ln1_b"]
    ff = linear(T.relu(linear(h, params["W_1"], params["b_1"])), params["W_2"], params["b_2"])
    return T.layer_norm(h + ff) * params["ln2_g"] + params["ln2_b"]


def transformer_encoder(X, layers: Sequence[Mapping[str, Tensor]], heads: int,
                        positional: bool = True) -> Tensor:
    X = T.as_tensor(X)
    if positional:
        X = X + positional_encoding(*X.shape)
    for params in layers:
        X = transformer_encoder_layer(X, params, heads)
    return X
