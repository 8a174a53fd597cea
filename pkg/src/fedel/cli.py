"""``fedel`` command line.

Exit codes: 0 success, 1 property/assertion or run failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .diagnostics import rollback_study
from .federation import RoundRecord, make_dataset, run_training, time_to_accuracy
from .model import ConfigurationError, build_model
from .profiler import DeviceProfile, TensorTiming, synthesize_timing
from .selector import BRUTE_FORCE_LIMIT, SelectionMask, brute_force_select, objective, select_tensors
from .window import BlockPartition, Variant, Window

log = logging.getLogger("fedel")

METRIC_COLUMNS = ["round", "wall_clock_s", "accuracy", "o1", "mean_gamma", "o1_param"]
ABLATION_DEFAULTS = {
    "beta": [0.0, 0.4, 0.6, 1.0],
    "t_th": ["auto", "slowest"],
    "variant": ["fedel", "fedel-c"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _metric_row(rec: RoundRecord) -> list:
    return [rec.round, repr(rec.wall_clock_s), repr(rec.accuracy), repr(rec.o1),
            "" if rec.mean_gamma is None else repr(rec.mean_gamma), repr(rec.o1_param)]


class RunWriter:
    """Streams records to ``run_log.jsonl`` and ``metrics.csv`` as rounds finish."""

    def __init__(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        self._log = (out / "run_log.jsonl").open("w")
        self._csv_fh = (out / "metrics.csv").open("w", newline="")
        self._csv = csv.writer(self._csv_fh, lineterminator="\n")
        self._csv.writerow(METRIC_COLUMNS)

    def __call__(self, rec: RoundRecord) -> None:
        self._log.write(rec.to_json() + "\n")
        self._log.flush()
        self._csv.writerow(_metric_row(rec))
        self._csv_fh.flush()

    def close(self) -> None:
        self._log.close()
        self._csv_fh.close()


def _run_to_dir(cfg: RunConfig, out: Path, timing=None, dataset=None):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    writer = RunWriter(out)
    try:
        return run_training(cfg, dataset, on_round=writer, timing=timing)
    finally:
        writer.close()


def _load_timing(path):
    if path is None:
        return None
    try:
        return TensorTiming.load(path)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"timing profile {path}: {exc}") from None


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.variant:
        cfg = dataclasses.replace(cfg, variant=Variant.parse(args.variant))
    if args.rounds is not None:
        cfg = dataclasses.replace(cfg, rounds=args.rounds)
    out = Path(args.out)
    timing = _load_timing(args.timing_profile)
    data = make_dataset(cfg)
    result = _run_to_dir(cfg, out, timing, data)
    records = result.records
    final_acc = records[-1].accuracy if records else float("nan")
    wall = records[-1].wall_clock_s if records else 0.0
    print(f"variant: {cfg.variant.value}")
    print(f"T_th: {result.T_th:.6f} s")
    print(f"final accuracy: {final_acc:.4f}")
    print(f"simulated wall-clock: {wall:.3f} s")
    if args.baseline:
        base_cfg = dataclasses.replace(cfg, variant=Variant.FEDAVG_FULL)
        if base_cfg == cfg:
            base = result
        else:
            base = _run_to_dir(base_cfg, out / "baseline", timing, data)
        speedup = _speedup(base.records, records)
        text = "n/a (target accuracy not reached)" if speedup is None else f"{speedup:.2f}x"
        print(f"speedup vs fedavg-full (time to 90% of its final accuracy): {text}")
    return 0


def _speedup(baseline: list[RoundRecord], records: list[RoundRecord]) -> float | None:
    if not baseline or not records:
        return None
    target = 0.9 * baseline[-1].accuracy
    t_base = time_to_accuracy(baseline, target)
    t_run = time_to_accuracy(records, target)
    if t_base is None or t_run is None or t_run <= 0:
        return None
    return t_base / t_run


def _random_instance(rng: np.random.Generator, n: int):
    """Random selector instance with times already on a coarse grid of DP units."""
    t_g = rng.integers(0, 40, size=n) * 1e-4
    t_w = rng.integers(0, 40, size=n) * 1e-4
    timing = TensorTiming(t_g, t_w, np.zeros(1), np.zeros(1))
    if rng.random() < 0.25:
        importance = rng.integers(0, 4, size=n).astype(float)
    else:
        importance = rng.exponential(1.0, size=n)
    budget = float(rng.uniform(0, (t_g.sum() + t_w.sum()) * 1.1))
    return importance, timing, budget


def cmd_fuzz_selector(args) -> int:
    if args.trials < 0 or args.max_tensors < 1:
        print("fedel fuzz-selector: --trials must be >= 0 and --max-tensors >= 1", file=sys.stderr)
        return 2
    if args.max_tensors > BRUTE_FORCE_LIMIT:
        print(f"fedel fuzz-selector: --max-tensors must be <= {BRUTE_FORCE_LIMIT}", file=sys.stderr)
        return 2
    rng = np.random.default_rng(args.seed)
    mismatches = []
    for trial in range(args.trials):
        n = int(rng.integers(1, args.max_tensors + 1))
        importance, timing, budget = _random_instance(rng, n)
        part = BlockPartition.from_sizes([1] * n)
        lo = int(rng.integers(0, n))
        window = Window(lo, n - 1)
        got = select_tensors(importance, timing, window, budget, part)
        want = brute_force_select(importance, timing, window, budget, part)
        v_got, v_want = objective(importance, got), objective(importance, want)
        if not np.isclose(v_got, v_want, rtol=1e-12, atol=0.0):
            mismatches.append({
                "trial": trial,
                "importance": importance.tolist(),
                "timing": timing.to_dict(),
                "window": window.as_list(),
                "budget": budget,
                "dp_mask": got.selected,
                "oracle_mask": want.selected,
                "dp_objective": v_got,
                "oracle_objective": v_want,
            })
    print(f"{args.trials} trials, {len(mismatches)} mismatches")
    if mismatches:
        path = Path(args.out) / "selector_counterexamples.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(mismatches, indent=2))
        print(f"counterexamples written to {path}")
        return 1
    return 0


def _ablation_runs(cfg: RunConfig, axis: str):
    values = cfg.ablation.get(axis, ABLATION_DEFAULTS[axis])
    if not isinstance(values, list) or not values:
        raise ConfigurationError(f"ablation.{axis}: expected a non-empty list")
    for value in values:
        if axis == "beta":
            yield value, dataclasses.replace(cfg, beta=float(value))
        elif axis == "t_th":
            yield value, dataclasses.replace(cfg, T_th=value if isinstance(value, str) else float(value))
        else:
            yield value, dataclasses.replace(cfg, variant=Variant.parse(value))


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    timing = _load_timing(args.timing_profile)
    data = make_dataset(cfg)
    runs = list(_ablation_runs(cfg, args.axis))
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value, run_cfg in runs:
        label = value if isinstance(value, str) else repr(float(value))
        result = _run_to_dir(run_cfg, out / f"{args.axis}={label}", timing, data)
        for rec in result.records:
            rows.append([args.axis, label, *_metric_row(rec)])
        final = result.records[-1].accuracy if result.records else float("nan")
        print(f"{args.axis}={label}: final accuracy {final:.4f}, T_th {result.T_th:.6f} s")
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", *METRIC_COLUMNS])
        w.writerows(rows)
    if args.gnuplot:
        labels = [v if isinstance(v, str) else repr(float(v)) for v, _ in runs]
        plots = ", ".join(
            f"'< grep \",{lab},\" ablation.csv' using 4:5 with lines title '{args.axis}={lab}'" for lab in labels
        )
        (out / "ablation.gp").write_text(
            "set datafile separator ','\nset xlabel 'simulated wall-clock (s)'\n"
            f"set ylabel 'accuracy'\nplot {plots}\n"
        )
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def cmd_rollback(args) -> int:
    cfg = load_config(args.config)
    summary = rollback_study(cfg, args.rounds)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_export_profile(args) -> int:
    cfg = load_config(args.config)
    data = make_dataset(cfg)
    model = build_model(data.input_dim, cfg.hidden, data.num_classes, seed=cfg.seed, bias=cfg.bias)
    timing = synthesize_timing(model, DeviceProfile(args.speed_factor), cfg.seed, **cfg.timing)
    timing.save(args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedel", description="Federated elastic training simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--out", default="fedel-out")
    run.add_argument("--baseline", action="store_true", help="also run fedavg-full and report the speedup")
    run.add_argument("--variant", help="override the config's variant")
    run.add_argument("--rounds", type=int)
    run.add_argument("--timing-profile", help="JSON timing profile of a speed-1.0 device to replay")
    run.set_defaults(func=cmd_run)

    fuzz = sub.add_parser("fuzz-selector", help="check the selection DP against exhaustive search")
    fuzz.add_argument("--trials", type=int, default=1000)
    fuzz.add_argument("--max-tensors", type=int, default=12)
    fuzz.add_argument("--seed", type=int, default=0)
    fuzz.add_argument("--out", default=".")
    fuzz.set_defaults(func=cmd_fuzz_selector)

    ab = sub.add_parser("ablate", help="sweep one axis with shared seeds")
    ab.add_argument("config")
    ab.add_argument("--axis", choices=sorted(ABLATION_DEFAULTS), required=True)
    ab.add_argument("--out", default="fedel-ablation")
    ab.add_argument("--timing-profile")
    ab.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")
    ab.set_defaults(func=cmd_ablate)

    rb = sub.add_parser("rollback-study", help="O1 statistics with and without window rollback")
    rb.add_argument("config")
    rb.add_argument("--rounds", type=int)
    rb.add_argument("--out")
    rb.set_defaults(func=cmd_rollback)

    ex = sub.add_parser("export-profile", help="write the synthesized timing profile as JSON")
    ex.add_argument("config")
    ex.add_argument("--speed-factor", type=float, default=1.0)
    ex.add_argument("--out", default="timing.json")
    ex.set_defaults(func=cmd_export_profile)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"fedel: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"fedel: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"fedel: run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
