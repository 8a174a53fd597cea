"""Budgeted tensor selection under the chained backward-cost model.

Selecting a set ``S`` with earliest member ``e`` inside a window whose last
tensor is ``L`` costs::

    T_bw(S) = sum(t_w[k] for k in S) + sum(t_g[j] for j in range(e + 1, L + 1))

i.e. every tensor after the earliest selected one must pass its gradient
back, and only selected tensors pay for the weight update.  The selector
maximizes summed importance under a time budget; ties go to fewer tensors,
then to the set whose highest differing tensor id is larger.

Times are quantized to a 0.1 ms grid before the DP: costs round up and the
budget rounds down, so a returned mask always fits in real time.  The DP
kernel is compiled when available (``fedel._dp``) and otherwise falls back to
a numpy implementation; ``FEDEL_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _dp_py
from .model import ContractViolation
from .profiler import TensorTiming
from .window import BlockPartition, Window

QUANTUM = 1e-4  # seconds per DP time unit
_EPS_UNITS = 1e-6
BRUTE_FORCE_LIMIT = 20

if os.environ.get("FEDEL_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _dp as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


@dataclass(frozen=True)
class SelectionMask:
    """Per-tensor selection bits.

    ``head`` names the block whose exit head was trained alongside (``None``
    if no head was active); ``over_budget`` flags a selection that came back
    empty because the forward pass alone exhausted the budget.
    """

    bits: np.ndarray
    head: int | None = None
    over_budget: bool = False

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool))

    @classmethod
    def empty(cls, num_tensors: int, **kw) -> SelectionMask:
        return cls(np.zeros(num_tensors, dtype=bool), **kw)

    @classmethod
    def full(cls, num_tensors: int, **kw) -> SelectionMask:
        return cls(np.ones(num_tensors, dtype=bool), **kw)

    @classmethod
    def from_ids(cls, num_tensors: int, ids, **kw) -> SelectionMask:
        bits = np.zeros(num_tensors, dtype=bool)
        bits[list(ids)] = True
        return cls(bits, **kw)

    @property
    def selected(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.bits)]

    @property
    def is_empty(self) -> bool:
        return not self.bits.any()

    def __len__(self) -> int:
        return len(self.bits)


def to_units(seconds, *, round_up: bool) -> np.ndarray:
    """Quantize seconds onto the DP grid (costs round up, budgets round down)."""
    x = np.asarray(seconds, dtype=np.float64) / QUANTUM
    if round_up:
        return np.ceil(x - _EPS_UNITS).astype(np.int64)
    return np.floor(x + _EPS_UNITS).astype(np.int64)


def backward_time(timing: TensorTiming, mask, last_tensor: int) -> float:
    """Chained backward time (seconds) of ``mask`` for a window ending at ``last_tensor``."""
    bits = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    selected = np.flatnonzero(bits)
    if not selected.size:
        return 0.0
    if selected[-1] > last_tensor:
        raise ContractViolation(f"tensor {selected[-1]} selected beyond last tensor {last_tensor}")
    # accumulate from the window's last tensor down: weight update, then the
    # gradient pass that carries the chain further back
    e = int(selected[0])
    total = 0.0
    for j in range(last_tensor, e - 1, -1):
        if bits[j]:
            total += float(timing.t_w[j])
        if j > e:
            total += float(timing.t_g[j])
    return total


def _window_problem(importance, timing, window, budget, partition):
    lo, hi = partition.tensor_span(window)
    imp = np.asarray(importance, dtype=np.float64)
    if len(imp) != partition.num_tensors or len(timing.t_w) != partition.num_tensors:
        raise ContractViolation("importance, timing and partition disagree on tensor count")
    if not (np.isfinite(imp).all() and (imp >= 0).all()):
        raise ContractViolation("importance must be finite and non-negative")
    w_units = to_units(timing.t_w[lo : hi + 1], round_up=True)
    g_units = to_units(timing.t_g[lo : hi + 1], round_up=True)
    cap = int(to_units(budget, round_up=False)) if budget >= 0 else -1
    # a budget above the cost of everything is as good as unlimited
    cap = min(cap, int(w_units.sum() + g_units.sum()))
    return lo, hi, w_units, g_units, np.ascontiguousarray(imp[lo : hi + 1]), cap


def select_tensors(
    importance,
    timing: TensorTiming,
    window: Window,
    budget: float,
    partition: BlockPartition,
    *,
    backend: str | None = None,
) -> SelectionMask:
    """Importance-maximizing mask within ``window`` whose backward time fits ``budget``."""
    n_total = partition.num_tensors
    if budget < 0:
        return SelectionMask.empty(n_total, over_budget=True)
    lo, hi, w_units, g_units, imp, cap = _window_problem(importance, timing, window, budget, partition)

    kernel = _pick_kernel(backend, hi - lo + 1)
    local = kernel(w_units, g_units, imp, cap)
    bits = np.zeros(n_total, dtype=bool)
    for i in range(hi - lo + 1):
        if local >> i & 1:
            bits[lo + i] = True
    return SelectionMask(bits)


def _pick_kernel(backend, n):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled selector kernel is not available")
        if n <= 64:
            return _compiled.window_select
        return _dp_py.window_select
    if backend == "python":
        return _dp_py.window_select
    raise ValueError(f"unknown backend {backend!r}")


def objective(importance, mask) -> float:
    """Summed importance of ``mask``, folded from the highest tensor id down."""
    imp = np.asarray(importance, dtype=np.float64)
    bits = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    total = 0.0
    for k in np.flatnonzero(bits)[::-1]:
        total += float(imp[k])
    return total


def brute_force_select(
    importance,
    timing: TensorTiming,
    window: Window,
    budget: float,
    partition: BlockPartition,
) -> SelectionMask:
    """Exhaustive reference for :func:`select_tensors` (test oracle, <= 20 tensors)."""
    n_total = partition.num_tensors
    if budget < 0:
        return SelectionMask.empty(n_total, over_budget=True)
    lo, hi, w_units, g_units, imp, cap = _window_problem(importance, timing, window, budget, partition)
    n = hi - lo + 1
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} tensors, window has {n}")

    codes = np.arange(1 << n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)

    # earliest selected index; empty set gets n (no cost)
    earliest = np.where(bits.any(axis=1), bits.argmax(axis=1), n)
    g_suffix = np.concatenate([np.cumsum(g_units[::-1])[::-1], [0]])  # g_suffix[i] = sum g[i:]
    grad_cost = np.where(earliest < n, g_suffix[np.minimum(earliest + 1, n)], 0)
    cost = bits.astype(np.int64) @ w_units + grad_cost

    value = np.zeros(len(codes))
    for i in range(n - 1, -1, -1):
        value = value + np.where(bits[:, i], imp[i], 0.0)
    count = bits.sum(axis=1)

    feasible = cost <= cap
    cand = np.flatnonzero(feasible)
    # primary: value desc; then count asc; then code desc
    order = np.lexsort((-codes[cand], count[cand], -value[cand]))
    best = int(codes[cand[order[0]]])

    out = np.zeros(n_total, dtype=bool)
    for i in range(n):
        if best >> i & 1:
            out[lo + i] = True
    return SelectionMask(out)


def quantization_slack(window: Window, partition: BlockPartition) -> float:
    """Upper bound on real-vs-grid time discrepancy for a window (seconds)."""
    lo, hi = partition.tensor_span(window)
    return 2 * (hi - lo + 2) * _EPS_UNITS * QUANTUM
