"""Local, global and blended tensor importance."""

from __future__ import annotations

import numpy as np

from .model import Batch, ChainModel, ContractViolation, ParameterStore, backward_masked, forward_to_exit
from .window import Window


class ImportanceError(RuntimeError):
    """Gradient evaluation produced non-finite values."""


def local_importance(model: ChainModel, batch: Batch, lr: float, window: Window) -> np.ndarray:
    """``sum(g * dw)`` with ``dw = lr * g`` per window tensor, i.e. ``lr * ||g||^2``.

    ``g`` is one unmasked gradient evaluation truncated at the window's exit;
    tensors outside the window score 0.
    """
    if lr <= 0:
        raise ContractViolation("lr must be positive")
    lo, hi = model.partition.tensor_span(window)
    bits = np.zeros(model.num_tensors, dtype=bool)
    bits[lo : hi + 1] = True
    _, cache = forward_to_exit(model, batch, window.front_edge)
    grads = backward_masked(model, cache, bits, window)
    out = np.zeros(model.num_tensors)
    for k, g in grads.tensors.items():
        out[k] = lr * float(np.sum(g * g))
    if not np.isfinite(out).all():
        raise ImportanceError("non-finite gradient during importance evaluation")
    return out


def global_importance(w_curr: ParameterStore, w_prev: ParameterStore, lr: float) -> np.ndarray:
    """``sum((w_curr - w_prev)^2) / lr`` per backbone tensor."""
    if lr <= 0:
        raise ContractViolation("lr must be positive")
    if w_curr.values.keys() != w_prev.values.keys():
        raise ContractViolation("parameter stores have different tensor ids")
    keys = sorted(w_curr.values)
    out = np.zeros(len(keys))
    for i, k in enumerate(keys):
        d = w_curr.values[k] - w_prev.values[k]
        out[i] = float(np.sum(d * d)) / lr
    return out


def _unit_sum(x: np.ndarray) -> np.ndarray:
    s = x.sum()
    return x / s if s > 0 else np.zeros_like(x)


def adjust(local, global_, beta: float, normalize: bool = True) -> np.ndarray:
    """Blend ``beta * local + (1 - beta) * global`` after scaling each to unit sum."""
    if not 0.0 <= beta <= 1.0:
        raise ContractViolation("beta must lie in [0, 1]")
    local = np.asarray(local, dtype=float)
    global_ = np.asarray(global_, dtype=float)
    if local.shape != global_.shape:
        raise ContractViolation("importance vectors differ in length")
    if normalize:
        local, global_ = _unit_sum(local), _unit_sum(global_)
    return beta * local + (1.0 - beta) * global_
