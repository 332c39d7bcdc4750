from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from efr.autograd.layers import ParamStore
from efr.autograd.tensor import Tape, Tensor, backward


class GradCheckResult(NamedTuple):
    max_rel_error: float
    worst_param: Optional[str]
    worst_index: Optional[tuple]
    n_checked: int


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def grad_check(loss_fn: Callable[[], Tensor], params: ParamStore, eps: float = 1e-5,
               full_limit: int = 10_000, n_sample: int = 256, seed: int = 0,
               names: Optional[Sequence[str]] = None) -> GradCheckResult:
    """Compare tape gradients against centred finite differences.

    ``loss_fn`` must read its parameters from ``params`` on every call and be
    deterministic. Tensors with fewer than ``full_limit`` entries are checked
    at every coordinate, larger ones at ``n_sample`` random coordinates.
    """
    with Tape() as tape:
        loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    grads = backward(loss, tape, params)
    rng = np.random.default_rng(seed)
    worst = (0.0, None, None)
    checked = 0
    for name in names if names is not None else list(params):
        base = params[name].data.copy()
        if base.size < full_limit:
            coords = list(np.ndindex(base.shape))
        else:
            flat = rng.choice(base.size, size=n_sample, replace=False)
            coords = [np.unravel_index(i, base.shape) for i in flat]
        g_ad = grads[name].data
        try:
            for idx in coords:
                bumped = base.copy()
                bumped[idx] = base[idx] + eps
                params[name] = bumped
                up = loss_fn().item()
                bumped[idx] = base[idx] - eps
                params[name] = bumped
                down = loss_fn().item()
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise FloatingPointError(f"loss is not finite when perturbing {name}{idx}")
                err = relative_error(float(g_ad[idx]), (up - down) / (2 * eps))
                checked += 1
                if err > worst[0]:
                    worst = (err, name, tuple(int(i) for i in idx))
        finally:
            params[name] = base
    return GradCheckResult(worst[0], worst[1], worst[2], checked)
