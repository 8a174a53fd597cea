"""Chain of dense blocks with per-block early-exit heads.

Block ``b`` holds a weight tensor (``in x out``) and optionally a bias tensor;
its output passes through a ReLU.  Every block has an affine head mapping its
output width to the class logits; the head of the last block is the model's
ordinary output layer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .window import BlockPartition, Window


class ConfigurationError(ValueError):
    """Raised when a model or run is configured inconsistently."""


class ContractViolation(ValueError):
    """Raised when an operation is called outside its precondition."""


@dataclass(frozen=True)
class TensorSpec:
    tensor_id: int
    block_id: int
    shape: tuple[int, ...]

    @property
    def param_count(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class ParameterStore:
    """Backbone tensors keyed by tensor id, plus per-block head weights/biases."""

    values: dict[int, np.ndarray]
    head_w: dict[int, np.ndarray] = field(default_factory=dict)
    head_b: dict[int, np.ndarray] = field(default_factory=dict)

    def copy(self) -> ParameterStore:
        return ParameterStore(
            {k: v.copy() for k, v in self.values.items()},
            {k: v.copy() for k, v in self.head_w.items()},
            {k: v.copy() for k, v in self.head_b.items()},
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.values):
            h.update(np.ascontiguousarray(self.values[k]).tobytes())
        for k in sorted(self.head_w):
            h.update(np.ascontiguousarray(self.head_w[k]).tobytes())
            h.update(np.ascontiguousarray(self.head_b[k]).tobytes())
        return h.hexdigest()

    def all_finite(self) -> bool:
        arrays = [*self.values.values(), *self.head_w.values(), *self.head_b.values()]
        return all(np.isfinite(a).all() for a in arrays)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2 or len(self.inputs) < 1:
            raise ContractViolation("batch inputs must be a non-empty 2-D matrix")
        if len(self.labels) != len(self.inputs):
            raise ContractViolation("inputs and labels differ in length")


@dataclass(frozen=True)
class ChainModel:
    specs: tuple[TensorSpec, ...]
    partition: BlockPartition
    params: ParameterStore
    widths: tuple[int, ...]  # input_dim followed by each block's output width
    num_classes: int
    bias: bool = True

    @property
    def num_blocks(self) -> int:
        return self.partition.num_blocks

    @property
    def num_tensors(self) -> int:
        return len(self.specs)

    def with_params(self, params: ParameterStore) -> ChainModel:
        return replace(self, params=params)

    def head_param_count(self, block: int) -> int:
        return (self.widths[block + 1] + 1) * self.num_classes

    def param_counts(self) -> np.ndarray:
        return np.array([s.param_count for s in self.specs], dtype=np.int64)


def build_model(
    input_dim: int,
    hidden: Sequence[int],
    num_classes: int,
    seed: int = 0,
    bias: bool = True,
    init_gain: float = 1.0,
) -> ChainModel:
    """Build a dense chain with zero heads.

    Weights ~ U(-g/sqrt(fan_in), g/sqrt(fan_in)) with ``g = init_gain``; biases
    use ``g = 1``.  ``init_gain=sqrt(6)`` is He-uniform, which keeps activation
    scale stable through deep ReLU chains.
    """
    if input_dim < 1 or num_classes < 1 or not hidden or min(hidden) < 1:
        raise ConfigurationError("input_dim, num_classes and every block width must be positive")
    rng = np.random.default_rng(seed)
    widths = (int(input_dim), *(int(h) for h in hidden))
    specs, sizes = [], []
    values, head_w, head_b = {}, {}, {}
    for b in range(len(hidden)):
        fan_in, fan_out = widths[b], widths[b + 1]
        s = 1.0 / np.sqrt(fan_in)
        tid = len(specs)
        specs.append(TensorSpec(tid, b, (fan_in, fan_out)))
        values[tid] = rng.uniform(-init_gain * s, init_gain * s, size=(fan_in, fan_out))
        if bias:
            specs.append(TensorSpec(tid + 1, b, (fan_out,)))
            values[tid + 1] = rng.uniform(-s, s, size=fan_out)
        sizes.append(2 if bias else 1)
        head_w[b] = np.zeros((fan_out, num_classes))
        head_b[b] = np.zeros(num_classes)
    return ChainModel(
        specs=tuple(specs),
        partition=BlockPartition.from_sizes(sizes),
        params=ParameterStore(values, head_w, head_b),
        widths=widths,
        num_classes=int(num_classes),
        bias=bias,
    )


@dataclass
class ForwardCache:
    exit_block: int
    activations: list[np.ndarray]  # activations[b] is the input to block b
    preacts: list[np.ndarray]
    probs: np.ndarray
    labels: np.ndarray
    loss: float


@dataclass
class Gradients:
    tensors: dict[int, np.ndarray]
    head_block: int | None = None
    head_w: np.ndarray | None = None
    head_b: np.ndarray | None = None
    loss: float = float("nan")


def _block_tensors(model: ChainModel, b: int) -> tuple[int, int | None]:
    first, last = model.partition.ranges[b]
    return first, (last if last != first else None)


def forward_to_exit(model: ChainModel, batch: Batch, exit_block: int) -> tuple[np.ndarray, ForwardCache]:
    if not 0 <= exit_block < model.num_blocks:
        raise ContractViolation(f"exit block {exit_block} out of range")
    p = model.params
    h = np.asarray(batch.inputs, dtype=np.float64)
    if h.shape[1] != model.widths[0]:
        raise ContractViolation(f"expected {model.widths[0]} input features, got {h.shape[1]}")
    acts, pre = [], []
    for b in range(exit_block + 1):
        w_id, b_id = _block_tensors(model, b)
        acts.append(h)
        z = h @ p.values[w_id]
        if b_id is not None:
            z = z + p.values[b_id]
        pre.append(z)
        h = np.maximum(z, 0.0)
    acts.append(h)
    logits = h @ p.head_w[exit_block] + p.head_b[exit_block]

    labels = np.asarray(batch.labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= model.num_classes):
        raise ContractViolation("label outside class range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    logp = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    return logits, ForwardCache(exit_block, acts, pre, probs, labels, loss)


def predict(model: ChainModel, inputs: np.ndarray, exit_block: int | None = None) -> np.ndarray:
    exit_block = model.num_blocks - 1 if exit_block is None else exit_block
    h = np.asarray(inputs, dtype=np.float64)
    p = model.params
    for b in range(exit_block + 1):
        w_id, b_id = _block_tensors(model, b)
        z = h @ p.values[w_id]
        if b_id is not None:
            z = z + p.values[b_id]
        h = np.maximum(z, 0.0)
    return h @ p.head_w[exit_block] + p.head_b[exit_block]


def backward_masked(model: ChainModel, cache: ForwardCache, mask, window: Window) -> Gradients:
    """Gradients of the mean cross-entropy for the selected tensors and the active head.

    Backpropagation stops at the earliest selected tensor; values are those of
    an unmasked backward pass truncated at the window's exit.
    """
    if cache.exit_block != window.front_edge:
        raise ContractViolation("cache exit block must equal the window's front edge")
    bits = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    selected = np.flatnonzero(bits)
    lo, hi = model.partition.tensor_span(window)
    if selected.size and (selected[0] < lo or selected[-1] > hi):
        raise ContractViolation(f"mask selects tensors outside window tensors [{lo}, {hi}]")

    n = len(cache.labels)
    dlogits = cache.probs.copy()
    dlogits[np.arange(n), cache.labels] -= 1.0
    dlogits /= n
    e = window.front_edge
    h_top = cache.activations[e + 1]
    grads = Gradients(
        tensors={},
        head_block=e,
        head_w=h_top.T @ dlogits,
        head_b=dlogits.sum(axis=0),
        loss=cache.loss,
    )
    if not selected.size:
        return grads

    p = model.params
    earliest_block = model.partition.block_of(int(selected[0]))
    dh = dlogits @ p.head_w[e].T
    for b in range(e, earliest_block - 1, -1):
        dz = dh * (cache.preacts[b] > 0)
        w_id, b_id = _block_tensors(model, b)
        if bits[w_id]:
            grads.tensors[w_id] = cache.activations[b].T @ dz
        if b_id is not None and bits[b_id]:
            grads.tensors[b_id] = dz.sum(axis=0)
        if b > earliest_block:
            dh = dz @ p.values[w_id].T
    return grads


def sgd_step(store: ParameterStore, grads: Gradients, lr: float, mask) -> ParameterStore:
    """Masked SGD.  Unselected tensors are returned bit-identical; the active head,
    if ``grads`` carries one, is always updated."""
    if lr < 0:
        raise ContractViolation("learning rate must be non-negative")
    bits = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    out = ParameterStore(dict(store.values), dict(store.head_w), dict(store.head_b))
    if lr == 0:
        return out
    for k, g in grads.tensors.items():
        if bits[k]:
            out.values[k] = store.values[k] - lr * g
    if grads.head_block is not None and grads.head_w is not None:
        b = grads.head_block
        out.head_w[b] = store.head_w[b] - lr * grads.head_w
        out.head_b[b] = store.head_b[b] - lr * grads.head_b
    return out


def accuracy(model: ChainModel, inputs: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float((predict(model, inputs).argmax(axis=1) == labels).mean())
