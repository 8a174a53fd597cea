"""Synthetic per-tensor timing profiles.

Times are proportional to parameter counts and scaled by the device's
``speed_factor`` (a multiplier on every time; 0.5 means twice as fast).  A
seeded jitter is drawn once per profile and is independent of the device, so
profiles of different devices built from the same seed are exact rescalings
of each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ChainModel
from .window import BlockPartition


@dataclass(frozen=True)
class DeviceProfile:
    speed_factor: float = 1.0

    def __post_init__(self):
        if not self.speed_factor > 0:
            raise ValueError("speed_factor must be positive")


@dataclass(frozen=True)
class TensorTiming:
    t_g: np.ndarray  # per tensor, seconds
    t_w: np.ndarray  # per tensor, seconds
    t_fw: np.ndarray  # per block, seconds
    t_fw_head: np.ndarray  # per block, seconds for that block's exit head

    def __post_init__(self):
        for name in ("t_g", "t_w", "t_fw", "t_fw_head"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not (np.isfinite(arr).all() and (arr >= 0).all()):
                raise ValueError(f"{name} must be finite and non-negative")
            object.__setattr__(self, name, arr)
        if len(self.t_g) != len(self.t_w) or len(self.t_fw) != len(self.t_fw_head):
            raise ValueError("timing arrays have inconsistent lengths")

    def forward_time(self, exit_block: int) -> float:
        """Forward pass through blocks ``0..exit_block`` plus that block's head."""
        return float(self.t_fw[: exit_block + 1].sum() + self.t_fw_head[exit_block])

    def scaled(self, factor: float) -> TensorTiming:
        return TensorTiming(self.t_g * factor, self.t_w * factor, self.t_fw * factor, self.t_fw_head * factor)

    def to_dict(self) -> dict:
        return {
            "tensors": [
                {"id": k, "t_g": float(g), "t_w": float(w)} for k, (g, w) in enumerate(zip(self.t_g, self.t_w))
            ],
            "blocks": [
                {"id": b, "t_fw": float(f), "t_fw_head": float(h)}
                for b, (f, h) in enumerate(zip(self.t_fw, self.t_fw_head))
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TensorTiming:
        tensors = sorted(doc["tensors"], key=lambda t: t["id"])
        blocks = sorted(doc["blocks"], key=lambda b: b["id"])
        if [t["id"] for t in tensors] != list(range(len(tensors))):
            raise ValueError("tensor ids must be contiguous from 0")
        if [b["id"] for b in blocks] != list(range(len(blocks))):
            raise ValueError("block ids must be contiguous from 0")
        return cls(
            t_g=np.array([t["t_g"] for t in tensors], dtype=float),
            t_w=np.array([t["t_w"] for t in tensors], dtype=float),
            t_fw=np.array([b["t_fw"] for b in blocks], dtype=float),
            t_fw_head=np.array([b.get("t_fw_head", 0.0) for b in blocks], dtype=float),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> TensorTiming:
        return cls.from_dict(json.loads(Path(path).read_text()))


def synthesize_timing(
    model: ChainModel,
    device: DeviceProfile = DeviceProfile(),
    seed: int = 0,
    *,
    time_per_param: float = 1e-5,
    tg_ratio: float = 1.0,
    fw_ratio: float = 0.5,
    jitter: float = 0.05,
) -> TensorTiming:
    """Per-parameter cost model: ``t_w = c*p``, ``t_g = tg_ratio*c*p``,
    ``t_fw = fw_ratio*c*p_block``, each times ``(1 + U(-jitter, jitter))``."""
    params = model.param_counts().astype(float)
    block_params = np.array([params[list(model.partition.tensors(b))].sum() for b in range(model.num_blocks)])
    head_params = np.array([model.head_param_count(b) for b in range(model.num_blocks)], dtype=float)

    rng = np.random.default_rng(seed)
    k, nb = len(params), model.num_blocks
    jit = 1.0 + rng.uniform(-jitter, jitter, size=2 * k + 2 * nb) if jitter > 0 else np.ones(2 * k + 2 * nb)
    j_g, j_w, j_fw, j_head = np.split(jit, [k, 2 * k, 2 * k + nb])

    s = device.speed_factor
    return TensorTiming(
        t_g=(params * time_per_param * tg_ratio * j_g) * s,
        t_w=(params * time_per_param * j_w) * s,
        t_fw=(block_params * time_per_param * fw_ratio * j_fw) * s,
        t_fw_head=(head_params * time_per_param * fw_ratio * j_head) * s,
    )


def block_times(timing: TensorTiming, partition: BlockPartition) -> np.ndarray:
    """``T^b``: summed gradient + update time of each block's tensors."""
    if partition.num_tensors != len(timing.t_g):
        raise ValueError("partition does not match timing profile")
    per_tensor = timing.t_g + timing.t_w
    return np.array([float(sum(per_tensor[k] for k in partition.tensors(b))) for b in range(partition.num_blocks)])
