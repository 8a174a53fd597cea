"""Mask-induced aggregation bias: per-client weights, their maxima and the O1 term."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np


def _bit_matrix(masks) -> np.ndarray:
    return np.array([np.asarray(getattr(m, "bits", m), dtype=bool) for m in masks], dtype=float)


def aggregation_weights(masks) -> np.ndarray:
    """``c[n, k] = A[n, k] / sum_m A[m, k]``; zero where nobody selected ``k``."""
    a = _bit_matrix(masks)
    if a.size == 0:
        return a
    totals = a.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, a / np.where(totals > 0, totals, 1.0), 0.0)


def gamma_n(masks, n: int) -> float | None:
    """``max_k c[n, k]``; ``None`` if client ``n`` selected nothing."""
    c = aggregation_weights(masks)
    if not c[n].any():
        return None
    return float(c[n].max())


def gammas(masks) -> list[float | None]:
    return [gamma_n(masks, n) for n in range(len(masks))]


def o1_term(masks, d_theta: int | None = None, weights: Sequence[float] | None = None) -> float:
    """``sum_n (d_theta * gamma_n - sum_k c[n, k])`` over clients with a non-empty mask.

    ``weights`` switches to the parameter-weighted form ``sum_n sum_k p_k (gamma_n - c[n, k])``.
    """
    c = aggregation_weights(masks)
    if c.size == 0:
        return 0.0
    d = c.shape[1] if d_theta is None else int(d_theta)
    total = 0.0
    for row in c:
        if not row.any():
            continue
        g = row.max()
        if weights is None:
            total += d * g - row.sum()
        else:
            p = np.asarray(weights, dtype=float)
            total += float(np.sum(p * (g - row)))
    return float(total)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (``nan`` std for fewer than two values)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    std = float(arr.std(ddof=1)) if arr.size > 1 else float("nan")
    return float(arr.mean()), std


def rollback_study(cfg, rounds: int | None = None, dataset=None) -> dict:
    """Run ``cfg`` with and without rollback (shared seeds) and summarize per-round O1."""
    from .federation import run_training  # federation imports this module

    if rounds is not None:
        cfg = replace(cfg, rounds=rounds)
    summary = {}
    for label, flag in (("rollback", True), ("no_rollback", False)):
        result = run_training(replace(cfg, rollback=flag), dataset)
        o1 = [r.o1 for r in result.records]
        mean, std = mean_std(o1)
        summary[label] = {"mean_o1": mean, "std_o1": std, "rounds": len(o1)}
    return summary

