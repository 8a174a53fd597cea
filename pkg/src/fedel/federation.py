"""Synchronous federated training with sliding windows, budgeted masks and
masked aggregation, driven by simulated per-device compute time."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diagnostics
from .config import RunConfig
from .data import Dataset, dirichlet_partition, gaussian_mixture, load_csv
from .importance import ImportanceError, adjust, global_importance, local_importance
from .model import (
    Batch,
    ChainModel,
    ConfigurationError,
    ContractViolation,
    ParameterStore,
    accuracy,
    backward_masked,
    build_model,
    forward_to_exit,
    sgd_step,
)
from .profiler import DeviceProfile, TensorTiming, block_times, synthesize_timing
from .selector import SelectionMask, backward_time, quantization_slack, select_tensors
from .window import Variant, Window, initial_window, slide

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClientConfig:
    client_id: int
    device: DeviceProfile
    lr: float
    local_iters: int
    data_indices: tuple[int, ...]

    def __post_init__(self):
        if not self.data_indices:
            raise ConfigurationError(f"client {self.client_id} has no data")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")


@dataclass
class ClientState:
    timing: TensorTiming
    block_T: np.ndarray
    rng: np.random.Generator
    window: Window | None = None
    last_mask: SelectionMask | None = None
    heads: tuple[dict, dict] | None = None  # local heads when they are not aggregated


@dataclass
class ClientUpdate:
    client_id: int
    params: ParameterStore
    mask: SelectionMask
    window: Window
    seconds: float
    loss: float
    budget: float
    forward_time: float
    budget_exceeded: bool = False
    aborted: bool = False
    importance_local: list[float] = field(default_factory=list)
    importance_global: list[float] = field(default_factory=list)
    importance_blended: list[float] = field(default_factory=list)


@dataclass
class RoundRecord:
    round: int
    clients: list[dict]
    checksum: str
    accuracy: float
    wall_clock_s: float
    round_time_s: float
    gamma: list[float | None]
    mean_gamma: float | None
    o1: float
    o1_param: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, allow_nan=True)


@dataclass
class RunResult:
    config: RunConfig
    records: list[RoundRecord]
    initial: ParameterStore
    final: ParameterStore
    model: ChainModel
    T_th: float


# -- aggregation ---------------------------------------------------------------


def aggregate(
    clients: Sequence[tuple[ParameterStore, SelectionMask]],
    prev_global: ParameterStore,
    aggregate_heads: bool = True,
) -> ParameterStore:
    """Per-tensor mean over the clients that selected the tensor; tensors nobody
    selected keep their previous global value.  A client's active head
    (``mask.head``) is aggregated the same way."""
    keys = prev_global.values.keys()
    for store, mask in clients:
        if store.values.keys() != keys:
            raise ContractViolation("client store tensor ids differ from the global model")
        if len(mask.bits) != len(keys):
            raise ContractViolation("mask length differs from tensor count")

    values = {}
    for k in sorted(keys):
        picked = [store.values[k] for store, mask in clients if mask.bits[k]]
        values[k] = _mean(picked) if picked else prev_global.values[k]

    head_w, head_b = dict(prev_global.head_w), dict(prev_global.head_b)
    if aggregate_heads:
        for b in sorted(prev_global.head_w):
            picked = [store for store, mask in clients if mask.head == b]
            if picked:
                head_w[b] = _mean([s.head_w[b] for s in picked])
                head_b[b] = _mean([s.head_b[b] for s in picked])
    return ParameterStore(values, head_w, head_b)


def _mean(arrays: list[np.ndarray]) -> np.ndarray:
    if len(arrays) == 1:
        return arrays[0]
    total = arrays[0].copy()
    for a in arrays[1:]:
        total += a
    return total / len(arrays)


# -- one client round ------------------------------------------------------------


def _draw_batch(data: Dataset, indices: np.ndarray, batch_size: int, rng: np.random.Generator) -> Batch:
    pick = rng.choice(indices, size=min(batch_size, len(indices)), replace=False)
    return Batch(data.x_train[pick], data.y_train[pick])


def full_iteration_time(timing: TensorTiming, num_blocks: int) -> float:
    """Per-iteration time of conventional full-model training on a device."""
    last = len(timing.t_g) - 1
    return timing.forward_time(num_blocks - 1) + backward_time(timing, np.ones(last + 1, dtype=bool), last)


def client_round(
    client: ClientConfig,
    model: ChainModel,
    global_params: ParameterStore,
    prev_global: ParameterStore | None,
    state: ClientState,
    cfg: RunConfig,
    T_th: float,
    data: Dataset,
) -> ClientUpdate:
    """Window slide -> importance -> selection -> masked local SGD for one client."""
    variant = cfg.variant
    nb, nt = model.num_blocks, model.num_tensors
    part = model.partition
    indices = np.asarray(client.data_indices)

    start = global_params
    if state.heads is not None:
        start = ParameterStore(global_params.values, dict(state.heads[0]), dict(state.heads[1]))
    local_model = model.with_params(start)

    if variant in (Variant.FEDAVG_FULL, Variant.ELASTIC_TRAINER):
        window = Window(0, nb - 1)
    elif state.window is None:
        window = initial_window(state.block_T, T_th)
    else:
        window = slide(
            state.window,
            state.last_mask if state.last_mask is not None else SelectionMask.empty(nt),
            state.block_T,
            T_th,
            part,
            variant,
            rollback=cfg.rollback,
        )
    lo, hi = part.tensor_span(window)
    t_fw = state.timing.forward_time(window.front_edge)
    budget = T_th - t_fw

    imp_local = imp_global = blended = np.zeros(nt)
    aborted = False
    if variant is Variant.FEDAVG_FULL:
        mask = SelectionMask.full(nt, head=window.front_edge)
    else:
        try:
            imp_local = local_importance(local_model, _draw_batch(data, indices, cfg.batch_size, state.rng), client.lr, window)
        except ImportanceError:
            log.warning("client %d: non-finite importance, skipping this round", client.client_id)
            aborted = True
        if variant is Variant.ELASTIC_TRAINER:
            blended = adjust(imp_local, np.zeros(nt), 1.0, cfg.normalize_importance)
        else:
            if prev_global is not None:
                imp_global = global_importance(global_params, prev_global, client.lr)
            blended = adjust(imp_local, imp_global, cfg.beta, cfg.normalize_importance)
        if aborted:
            mask = SelectionMask.empty(nt)
        else:
            sel = select_tensors(blended, state.timing, window, budget, part)
            mask = SelectionMask(sel.bits, head=window.front_edge, over_budget=sel.over_budget)

    params = start
    losses = []
    if not aborted:
        for _ in range(client.local_iters):
            batch = _draw_batch(data, indices, cfg.batch_size, state.rng)
            _, cache = forward_to_exit(model.with_params(params), batch, window.front_edge)
            grads = backward_masked(model.with_params(params), cache, mask, window)
            params = sgd_step(params, grads, client.lr, mask)
            losses.append(grads.loss)

    per_iter = t_fw + backward_time(state.timing, mask, hi)
    exceeded = variant in (Variant.FEDEL, Variant.FEDEL_C) and per_iter > T_th + quantization_slack(window, part)
    if exceeded:
        log.info("client %d: forward pass alone (%.4fs) exceeds T_th=%.4fs", client.client_id, t_fw, T_th)

    state.window = window
    state.last_mask = mask
    if state.heads is not None:
        state.heads = (params.head_w, params.head_b)

    return ClientUpdate(
        client_id=client.client_id,
        params=params,
        mask=mask,
        window=window,
        seconds=client.local_iters * per_iter if not aborted else 0.0,
        loss=float(np.mean(losses)) if losses else float("nan"),
        budget=budget,
        forward_time=t_fw,
        budget_exceeded=exceeded,
        aborted=aborted,
        importance_local=imp_local.tolist(),
        importance_global=imp_global.tolist(),
        importance_blended=blended.tolist(),
    )


# -- full run -----------------------------------------------------------------------


def make_dataset(cfg: RunConfig) -> Dataset:
    opts = dict(cfg.dataset)
    kind = opts.pop("kind", "gaussian_mixture")
    opts.setdefault("seed", cfg.seed)
    if kind == "gaussian_mixture":
        return gaussian_mixture(**opts)
    if kind == "csv":
        if "path" not in opts:
            raise ConfigurationError("dataset.path: required for csv datasets")
        return load_csv(opts.pop("path"), **opts)
    raise ConfigurationError(f"dataset.kind: unknown dataset kind {kind!r}")


def _device_timing(cfg: RunConfig, model: ChainModel, speed: float, base: TensorTiming | None) -> TensorTiming:
    if base is None:
        return synthesize_timing(model, DeviceProfile(speed), cfg.seed, **cfg.timing)
    if len(base.t_g) != model.num_tensors or len(base.t_fw) != model.num_blocks:
        raise ConfigurationError(
            f"timing profile has {len(base.t_g)} tensors / {len(base.t_fw)} blocks, "
            f"model has {model.num_tensors} / {model.num_blocks}"
        )
    return base.scaled(speed)


def resolve_T_th(cfg: RunConfig, model: ChainModel, base: TensorTiming | None = None) -> float:
    """``"auto"``: full-model iteration time of the fastest device; ``"slowest"``: of the slowest."""
    if not isinstance(cfg.T_th, str):
        return float(cfg.T_th)
    speeds = [cfg.client_speed(n) for n in range(cfg.num_clients)]
    speed = min(speeds) if cfg.T_th == "auto" else max(speeds)
    return full_iteration_time(_device_timing(cfg, model, speed, base), model.num_blocks)


def _eval_params(global_params: ParameterStore, states: list[ClientState], nb: int) -> ParameterStore:
    if states[0].heads is None:
        return global_params
    last = nb - 1
    hw = dict(global_params.head_w)
    hb = dict(global_params.head_b)
    hw[last] = _mean([s.heads[0][last] for s in states])
    hb[last] = _mean([s.heads[1][last] for s in states])
    return ParameterStore(global_params.values, hw, hb)


def run_training(
    cfg: RunConfig, dataset: Dataset | None = None, on_round=None, timing: TensorTiming | None = None
) -> RunResult:
    """Run ``cfg.rounds`` synchronous rounds; wall-clock advances by the slowest client.

    ``timing``, if given, is a measured profile of a speed-1.0 device that
    replaces the synthetic one; each client uses it scaled by its speed factor.
    """
    data = dataset if dataset is not None else make_dataset(cfg)
    model = build_model(data.input_dim, cfg.hidden, data.num_classes, seed=cfg.seed, bias=cfg.bias, init_gain=cfg.init_gain)
    T_th = resolve_T_th(cfg, model, timing)
    parts = dirichlet_partition(data.y_train, cfg.num_clients, cfg.dirichlet_alpha, seed=cfg.seed)

    clients, states = [], []
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.num_clients)
    for n in range(cfg.num_clients):
        device = DeviceProfile(cfg.client_speed(n))
        clients.append(ClientConfig(n, device, cfg.lr, cfg.local_iters, tuple(parts[n])))
        client_timing = _device_timing(cfg, model, device.speed_factor, timing)
        states.append(
            ClientState(
                timing=client_timing,
                block_T=block_times(client_timing, model.partition),
                rng=np.random.default_rng(seeds[n]),
                heads=None if cfg.aggregate_heads else (dict(model.params.head_w), dict(model.params.head_b)),
            )
        )

    initial = model.params.copy()
    global_params, prev_global = initial, None
    records, wall = [], 0.0
    weights = model.param_counts()
    for r in range(1, cfg.rounds + 1):
        updates = []
        for client, state in zip(clients, states):
            try:
                updates.append(client_round(client, model, global_params, prev_global, state, cfg, T_th, data))
            except Exception as exc:
                raise RuntimeError(f"round {r}, client {client.client_id}: {exc}") from exc
        new_global = aggregate([(u.params, u.mask) for u in updates], global_params, cfg.aggregate_heads)
        prev_global, global_params = global_params, new_global

        round_time = max(u.seconds for u in updates) + cfg.comm_time
        wall += round_time
        masks = [u.mask for u in updates]
        gam = diagnostics.gammas(masks)
        present = [g for g in gam if g is not None]
        eval_model = model.with_params(_eval_params(global_params, states, model.num_blocks))
        record = RoundRecord(
            round=r,
            clients=[_client_entry(u) for u in updates],
            checksum=global_params.checksum(),
            accuracy=accuracy(eval_model, data.x_test, data.y_test),
            wall_clock_s=wall,
            round_time_s=round_time,
            gamma=gam,
            mean_gamma=float(np.mean(present)) if present else None,
            o1=diagnostics.o1_term(masks),
            o1_param=diagnostics.o1_term(masks, weights=weights),
        )
        records.append(record)
        if on_round is not None:
            on_round(record)
    return RunResult(cfg, records, initial, global_params, model, T_th)


def _client_entry(u: ClientUpdate) -> dict:
    return {
        "id": u.client_id,
        "window": u.window.as_list(),
        "mask": u.mask.selected,
        "head": u.mask.head,
        "seconds": u.seconds,
        "loss": u.loss,
        "budget_s": u.budget,
        "forward_s": u.forward_time,
        "budget_exceeded": u.budget_exceeded,
        "aborted": u.aborted,
        "importance": {
            "local": u.importance_local,
            "global": u.importance_global,
            "blended": u.importance_blended,
        },
    }


def time_to_accuracy(records: Sequence[RoundRecord], target: float) -> float | None:
    """Simulated wall-clock at the first round whose accuracy reaches ``target``."""
    for rec in records:
        if rec.accuracy >= target:
            return rec.wall_clock_s
    return None
