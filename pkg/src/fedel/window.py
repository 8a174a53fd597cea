"""Block partitioning and the sliding training window.

Blocks and tensors are 0-based.  A window ``[end_edge, front_edge]`` is an
inclusive block range; the early-exit head sits on ``front_edge``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Variant(str, enum.Enum):
    FEDEL = "fedel"
    FEDEL_C = "fedel-c"
    ELASTIC_TRAINER = "elastictrainer-only"
    FEDAVG_FULL = "fedavg-full"

    @classmethod
    def parse(cls, value: str | Variant) -> Variant:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "elastictrainer": cls.ELASTIC_TRAINER,
            "elastic-trainer": cls.ELASTIC_TRAINER,
            "fedavg": cls.FEDAVG_FULL,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown variant {value!r} (expected one of {choices})") from None


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous tensor ranges, one ``(first, last)`` pair per block."""

    ranges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.ranges:
            raise ValueError("partition needs at least one block")
        expected = 0
        for first, last in self.ranges:
            if first != expected or last < first:
                raise ValueError(f"block ranges must be contiguous and non-empty: {self.ranges}")
            expected = last + 1

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> BlockPartition:
        ranges, start = [], 0
        for size in sizes:
            ranges.append((start, start + int(size) - 1))
            start += int(size)
        return cls(tuple(ranges))

    @property
    def num_blocks(self) -> int:
        return len(self.ranges)

    @property
    def num_tensors(self) -> int:
        return self.ranges[-1][1] + 1

    def tensors(self, block: int) -> range:
        first, last = self.ranges[block]
        return range(first, last + 1)

    def block_of(self, tensor: int) -> int:
        for b, (first, last) in enumerate(self.ranges):
            if first <= tensor <= last:
                return b
        raise IndexError(f"tensor {tensor} outside partition")

    def tensor_span(self, window: Window) -> tuple[int, int]:
        """Inclusive tensor-id range covered by ``window``."""
        return self.ranges[window.end_edge][0], self.ranges[window.front_edge][1]


@dataclass(frozen=True)
class Window:
    end_edge: int
    front_edge: int

    def __post_init__(self):
        if not 0 <= self.end_edge <= self.front_edge:
            raise ValueError(f"invalid window [{self.end_edge}, {self.front_edge}]")

    @property
    def blocks(self) -> range:
        return range(self.end_edge, self.front_edge + 1)

    def __contains__(self, block: int) -> bool:
        return self.end_edge <= block <= self.front_edge

    def as_list(self) -> list[int]:
        return [self.end_edge, self.front_edge]


def _min_prefix_end(block_T: np.ndarray, start: int, T_th: float) -> int:
    """Smallest ``m >= start`` with ``sum(block_T[start:m + 1]) >= T_th``, else the last block."""
    total = 0.0
    for m in range(start, len(block_T)):
        total += float(block_T[m])
        if total >= T_th:
            return m
    return len(block_T) - 1


def initial_window(block_T, T_th: float) -> Window:
    block_T = np.asarray(block_T, dtype=float)
    if T_th <= 0:
        raise ValueError("T_th must be positive")
    if block_T.size == 0:
        raise ValueError("need at least one block")
    return Window(0, _min_prefix_end(block_T, 0, T_th))


def advance_front(window: Window, block_T, T_th: float) -> Window:
    """Front-edge movement: add the shortest run of blocks after the front whose
    time reaches ``T_th``.  Resets to the initial window once the front has
    reached the last block."""
    block_T = np.asarray(block_T, dtype=float)
    last = len(block_T) - 1
    if window.front_edge >= last:
        return initial_window(block_T, T_th)
    return Window(window.end_edge, _min_prefix_end(block_T, window.front_edge + 1, T_th))


def shrink_end(window: Window, last_mask, partition: BlockPartition) -> Window:
    """End-edge movement: drop leading window blocks with no selected tensor."""
    bits = _bits(last_mask)
    for b in window.blocks:
        if b == window.front_edge or any(bits[k] for k in partition.tensors(b)):
            return Window(b, window.front_edge)
    return Window(window.front_edge, window.front_edge)


def slide(
    window: Window,
    last_mask,
    block_T,
    T_th: float,
    partition: BlockPartition,
    variant: Variant | str = Variant.FEDEL,
    rollback: bool = True,
) -> Window:
    """Next round's window.

    FedEL: shrink the end edge by last round's mask, drop any further leading
    blocks that would let the retained span alone reach ``T_th``, then extend
    the front past the old front by the minimal-prefix rule measured from the
    new end.  FedEL-C starts the new window right after the old front.  Both
    reset to the initial window after touching the last block.

    With ``rollback`` off no block is ever revisited: every variant marches
    like FedEL-C and the window reaching the last block is held.
    """
    variant = Variant.parse(variant)
    block_T = np.asarray(block_T, dtype=float)
    last = len(block_T) - 1
    if variant in (Variant.ELASTIC_TRAINER, Variant.FEDAVG_FULL):
        return Window(0, last)
    if window.front_edge >= last:
        return initial_window(block_T, T_th) if rollback else window

    if variant is Variant.FEDEL_C or not rollback:
        start = window.front_edge + 1
        return Window(start, _min_prefix_end(block_T, start, T_th))

    end = shrink_end(window, last_mask, partition).end_edge
    # keep the carried-over span under one budget so the front must move
    while end <= window.front_edge and float(block_T[end : window.front_edge + 1].sum()) >= T_th:
        end += 1
    return Window(end, _min_prefix_end(block_T, end, T_th))


def _bits(mask) -> np.ndarray:
    bits = getattr(mask, "bits", mask)
    return np.asarray(bits, dtype=bool)
