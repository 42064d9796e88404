"""Adam and Adagrad as pure functions: ``(params, grads, state) -> (params, state)``.

Parameters and gradients are mappings from name to :class:`Tensor` (or
anything array-like).  Moment accumulators are held in float64; the updated
parameters keep their own dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.999
ADAM_LR = 2e-4
ADAGRAD_LR = 0.01
EPS = 1e-8


@dataclass(frozen=True)
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = EPS


@dataclass(frozen=True)
class AdagradState:
    accum: dict[str, np.ndarray] = field(default_factory=dict)
    lr: float = ADAGRAD_LR
    eps: float = EPS


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _check(params: Mapping, grads: Mapping, slots: Mapping) -> None:
    if set(params) != set(grads):
        raise ShapeError(f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}")
    for name, p in params.items():
        ps, gs = np.shape(_arr(p)), np.shape(_arr(grads[name]))
        if ps != gs:
            raise ShapeError(f"{name}: parameter shape {ps} vs gradient shape {gs}")
        if name in slots and slots[name].shape != ps:
            raise ShapeError(f"{name}: optimizer state shape {slots[name].shape} vs parameter {ps}")


def _like(p, value: np.ndarray):
    arr = _arr(p)
    out = value.astype(arr.dtype)
    return Tensor._wrap(out) if isinstance(p, Tensor) else out


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, Tensor], state: AdamState):
    _check(params, grads, state.m)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, m_out, v_out = {}, {}, {}
    for name, p in params.items():
        g = _arr(grads[name]).astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        theta = _arr(p).astype(np.float64)
        theta = theta - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_params[name] = _like(p, theta)
        m_out[name], v_out[name] = m, v
    return new_params, replace(state, step=t, m=m_out, v=v_out)


def adagrad_step(params: Mapping[str, Tensor], grads: Mapping[str, Tensor], state: AdagradState):
    _check(params, grads, state.accum)
    new_params, acc_out = {}, {}
    for name, p in params.items():
        g = _arr(grads[name]).astype(np.float64)
        acc = state.accum.get(name)
        acc = g * g if acc is None else acc + g * g
        theta = _arr(p).astype(np.float64) - state.lr * g / (np.sqrt(acc) + state.eps)
        new_params[name] = _like(p, theta)
        acc_out[name] = acc
    return new_params, replace(state, accum=acc_out)
