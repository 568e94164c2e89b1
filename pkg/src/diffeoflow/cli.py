"""Command-line front end.

Subcommands:

    train             train one configuration, write trace/control/summary
    reproduce-tables  rerun one of the six benchmark settings over the
                      standard beta sweep, next to the reference results
    gradcheck         compare the covector gradient against central finite
                      differences on a deliberately small instance
    eval              apply a saved control to a dataset and report errors

Configuration is a flat JSON object; unknown keys are rejected and every
validation message names the offending field.  All outputs are plain CSV
and JSON, floats written with 17 significant digits so reruns with the same
config and seed reproduce them byte for byte (the summary additionally
carries a wall-clock figure, which of course varies).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data import (
    load_dataset_csv,
    make_grid_dataset,
    make_random_testset,
    target_from_name,
)
from .fields import family_from_name
from .flow import ControlGrid, forward_euler
from .metrics import build_metrics
from .objective import adjoint_gradient, fd_gradient_oracle, loss, mean_loss
from .train_gd import TrainAbort, TrainConfig, TrainReport, train_gradient_flow
from .train_pmp import train_pmp

TRACE_COLUMNS = ("iteration", "cost", "training_error", "testing_error", "gamma", "accepted")

# Previously reported results for the six benchmark settings, keyed by
# table id, then by beta: (lipschitz, training error, testing error).
# Bundled so reproduce-tables can print them next to fresh runs.
REFERENCE_RESULTS: dict[int, dict[float, tuple[float, float, float]]] = {
    1: {
        1e0: (1.19, 3.8785, 3.8173),
        1e-1: (8.40, 1.3143, 1.2476),
        1e-2: (9.32, 1.1991, 1.1451),
        1e-3: (9.37, 1.1852, 1.1330),
        1e-4: (9.37, 1.1839, 1.1318),
    },
    2: {
        1e0: (1.19, 3.8749, 3.8157),
        1e-1: (8.40, 1.3084, 1.2455),
        1e-2: (9.32, 1.2014, 1.1486),
        1e-3: (9.33, 1.1898, 1.1387),
        1e-4: (9.33, 1.1898, 1.1379),
    },
    3: {
        1e0: (1.19, 3.8779, 3.8168),
        1e-1: (8.40, 1.3074, 1.2425),
        1e-2: (9.26, 1.2015, 1.1477),
        1e-3: (9.34, 1.1860, 1.1352),
        1e-4: (9.34, 1.1842, 1.1332),
    },
    4: {
        1e0: (1.19, 3.8739, 3.8148),
        1e-1: (8.35, 1.3085, 1.2449),
        1e-2: (9.23, 1.2075, 1.1538),
        1e-3: (9.26, 1.1931, 1.1416),
        1e-4: (9.26, 1.1918, 1.1404),
    },
    5: {
        1e0: (10.14, 2.3791, 2.3036),
        1e-1: (13.84, 0.1809, 0.2314),
        1e-2: (15.64, 0.1290, 0.1784),
        1e-3: (15.83, 0.1254, 0.1747),
        1e-4: (15.86, 0.1257, 0.1751),
    },
    6: {
        1e0: (10.78, 2.3638, 2.3910),
        1e-1: (14.32, 0.1921, 0.2422),
        1e-2: (15.43, 0.1887, 0.2347),
        1e-3: (15.56, 0.2260, 0.2719),
        1e-4: (15.59, 0.2127, 0.2564),
    },
}

# (family, layers, algorithm) of each benchmark table.
TABLE_SETTINGS: dict[int, tuple[str, int, str]] = {
    1: ("affine8", 16, "gd"),
    2: ("affine8", 16, "pmp"),
    3: ("affine8", 32, "gd"),
    4: ("affine8", 32, "pmp"),
    5: ("enriched14", 16, "gd"),
    6: ("enriched14", 16, "pmp"),
}

BETA_SWEEP = (1e0, 1e-1, 1e-2, 1e-3, 1e-4)


class ConfigError(ValueError):
    """A run configuration failed validation."""


@dataclasses.dataclass
class RunConfig:
    """Flat run configuration; every field has a JSON key of the same name."""

    family: str = "affine8"
    nu: float = 20.0
    n_layers: int = 16
    algorithm: str = "gd"
    beta: float = 1e-3
    gamma0: float = 1.0
    tau: float = 0.5
    c: float = 0.1
    max_iter: int = 500
    batch_size: int | None = None
    seed: int = 0
    gradient_method: str = "exact"
    target: str = "builtin"
    grid_side: float = 1.5
    grid_per_axis: int = 30
    dataset_file: str | None = None
    test_count: int = 300
    test_seed: int = 0
    test_file: str | None = None
    rate_constant: float | None = None

    def validate(self) -> None:
        if self.family not in ("affine8", "enriched14"):
            raise ConfigError(f"family: expected 'affine8' or 'enriched14', got {self.family!r}")
        if self.nu <= 0.0:
            raise ConfigError(f"nu: must be positive, got {self.nu}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers: must be a positive integer, got {self.n_layers}")
        if self.algorithm not in ("gd", "pmp"):
            raise ConfigError(f"algorithm: expected 'gd' or 'pmp', got {self.algorithm!r}")
        if self.beta < 0.0:
            raise ConfigError(f"beta: must be nonnegative, got {self.beta}")
        if self.gamma0 <= 0.0:
            raise ConfigError(f"gamma0: must be positive, got {self.gamma0}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau: must lie strictly between 0 and 1, got {self.tau}")
        if not 0.0 < self.c < 1.0:
            raise ConfigError(f"c: must lie strictly between 0 and 1, got {self.c}")
        if self.max_iter < 0:
            raise ConfigError(f"max_iter: must be nonnegative, got {self.max_iter}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size: must be positive when set, got {self.batch_size}")
        if self.gradient_method not in ("exact", "trapezoid"):
            raise ConfigError(
                f"gradient_method: expected 'exact' or 'trapezoid', got {self.gradient_method!r}"
            )
        if self.target not in ("builtin", "identity"):
            raise ConfigError(f"target: expected 'builtin' or 'identity', got {self.target!r}")
        if self.grid_side <= 0.0:
            raise ConfigError(f"grid_side: must be positive, got {self.grid_side}")
        if self.grid_per_axis < 2:
            raise ConfigError(f"grid_per_axis: must be at least 2, got {self.grid_per_axis}")
        if self.test_count < 0:
            raise ConfigError(f"test_count: must be nonnegative, got {self.test_count}")
        if self.rate_constant is not None and self.rate_constant < 0.0:
            raise ConfigError(f"rate_constant: must be nonnegative, got {self.rate_constant}")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"could not parse {path} as JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"config root in {path} must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig(**raw)
    cfg.validate()
    return cfg


def build_problem(cfg: RunConfig) -> tuple:
    """Resolve a config into (family, target, train dataset, test dataset)."""
    family = family_from_name(cfg.family, cfg.nu)
    target = target_from_name(cfg.target)
    if cfg.dataset_file is not None:
        train = load_dataset_csv(cfg.dataset_file)
    else:
        train = make_grid_dataset(target, side=cfg.grid_side, per_axis=cfg.grid_per_axis)
    if cfg.test_file is not None:
        test = load_dataset_csv(cfg.test_file)
    elif cfg.test_count > 0:
        test = make_random_testset(
            target, side=cfg.grid_side, count=cfg.test_count, seed=cfg.test_seed
        )
    else:
        test = None
    return family, target, train, test


def train_config_of(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        beta=cfg.beta,
        max_iter=cfg.max_iter,
        gamma0=cfg.gamma0,
        tau=cfg.tau,
        c=cfg.c,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        gradient_method=cfg.gradient_method,
    )


def run_training(cfg: RunConfig) -> tuple[TrainReport, dict]:
    """Train per config and return the report plus the summary document."""
    family, target, train, test = build_problem(cfg)
    tc = train_config_of(cfg)
    start = time.perf_counter()
    if cfg.algorithm == "gd":
        report = train_gradient_flow(family, train, cfg.n_layers, tc, test_data=test)
    else:
        report = train_pmp(family, train, cfg.n_layers, tc, test_data=test)
    elapsed = time.perf_counter() - start

    block = build_metrics(
        family,
        report.control,
        target,
        probes=train.sources,
        training_error=report.final_cost.data_term,
        n_train=train.n_samples,
        side=cfg.grid_side,
        rate_constant=cfg.rate_constant,
    )
    report.metrics = block.as_dict()
    final_test = report.records[-1].testing_error if report.records else float("nan")
    summary = {
        "config": cfg.as_dict(),
        "metrics": report.metrics,
        "final": {
            "cost": report.final_cost.total,
            "training_error": report.final_cost.data_term,
            "reg_term": report.final_cost.reg_term,
            "testing_error": None if math.isnan(final_test) else final_test,
        },
        "n_train": train.n_samples,
        "n_test": 0 if test is None else test.n_samples,
        "iterations": len(report.records) - 1,
        "accepted": sum(1 for r in report.records[1:] if r.accepted),
        "wall_clock_seconds": elapsed,
    }
    return report, summary


def write_trace_csv(path, report: TrainReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for r in report.records:
            writer.writerow(
                [
                    r.iteration,
                    f"{r.cost:.17g}",
                    f"{r.data_term:.17g}",
                    f"{r.testing_error:.17g}",
                    f"{r.gamma:.17g}",
                    int(r.accepted),
                ]
            )


def save_control_csv(path, u: ControlGrid) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"u{i + 1}" for i in range(u.n_fields)])
        for row in u.values:
            writer.writerow([f"{v:.17g}" for v in row])


def load_control_csv(path) -> ControlGrid:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = [f"u{i + 1}" for i in range(len(header))]
        if header != expected:
            raise ValueError(f"unexpected control header in {path}: {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    return ControlGrid(np.asarray(rows, dtype=float))


def _write_summary(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report, summary = run_training(cfg)
    except TrainAbort as err:
        write_trace_csv(out / "trace.csv", err.report)
        save_control_csv(out / "control.csv", err.report.control)
        print(f"error: {err}", file=sys.stderr)
        return 1
    write_trace_csv(out / "trace.csv", report)
    save_control_csv(out / "control.csv", report.control)
    _write_summary(out / "summary.json", summary)
    final = summary["final"]
    test_msg = "n/a" if final["testing_error"] is None else f"{final['testing_error']:.6f}"
    print(
        f"done: cost {final['cost']:.6f}, training error {final['training_error']:.6f}, "
        f"testing error {test_msg}"
    )
    return 0


def run_table(
    table: int, out_dir: Path, max_iter: int = 500, test_seed: int = 0
) -> list[dict]:
    """Run the beta sweep of one benchmark table; returns one row dict per beta."""
    family_name, n_layers, algorithm = TABLE_SETTINGS[table]
    rows = []
    for beta in BETA_SWEEP:
        cfg = RunConfig(
            family=family_name,
            n_layers=n_layers,
            algorithm=algorithm,
            beta=beta,
            max_iter=max_iter,
            test_seed=test_seed,
        )
        cfg.validate()
        report, summary = run_training(cfg)
        ref = REFERENCE_RESULTS[table][beta]
        rows.append(
            {
                "beta": beta,
                "lipschitz": summary["metrics"]["lipschitz_flow"],
                "training_error": summary["final"]["training_error"],
                "testing_error": summary["final"]["testing_error"],
                "ref_lipschitz": ref[0],
                "ref_training_error": ref[1],
                "ref_testing_error": ref[2],
                "wall_clock_seconds": summary["wall_clock_seconds"],
            }
        )
        sub = out_dir / f"table{table}_beta{beta:g}"
        sub.mkdir(parents=True, exist_ok=True)
        write_trace_csv(sub / "trace.csv", report)
        save_control_csv(sub / "control.csv", report.control)
        _write_summary(sub / "summary.json", summary)
    return rows


def _write_table_outputs(table: int, rows: list[dict], out_dir: Path) -> None:
    columns = [
        "beta",
        "lipschitz",
        "training_error",
        "testing_error",
        "ref_lipschitz",
        "ref_training_error",
        "ref_testing_error",
        "wall_clock_seconds",
    ]
    with open(out_dir / f"table{table}.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([f"{row[c]:.17g}" if isinstance(row[c], float) else row[c] for c in columns])
    family_name, n_layers, algorithm = TABLE_SETTINGS[table]
    lines = [
        f"# Benchmark table {table}: {family_name}, {n_layers} layers, {algorithm}",
        "",
        "| beta | Lipschitz | train err | test err | ref Lipschitz | ref train | ref test | seconds |",
        "| --- | --- | --- | --- | --- | --- | --- | --- |",
    ]
    for row in rows:
        lines.append(
            "| {beta:g} | {lipschitz:.4f} | {training_error:.4f} | {testing_error:.4f} "
            "| {ref_lipschitz:.2f} | {ref_training_error:.4f} | {ref_testing_error:.4f} "
            "| {wall_clock_seconds:.1f} |".format(**row)
        )
    (out_dir / f"table{table}.md").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_reproduce_tables(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = [args.table] if args.table is not None else sorted(TABLE_SETTINGS)
    for table in tables:
        rows = run_table(table, out, max_iter=args.max_iter, test_seed=args.test_seed)
        _write_table_outputs(table, rows, out)
        print(f"table {table} written to {out / f'table{table}.md'}")
    return 0


GRADCHECK_MAX_LAYERS = 8
GRADCHECK_MAX_SAMPLES = 10


def run_gradcheck(cfg: RunConfig, family=None) -> tuple[float, int, int]:
    """Compare covector and finite-difference gradients on a small instance.

    Returns (max relative error, worst layer, worst field).  The ``family``
    parameter lets a test substitute a family with corrupted Jacobians to
    confirm the check trips.
    """
    if cfg.n_layers > GRADCHECK_MAX_LAYERS:
        raise ConfigError(
            f"n_layers: gradcheck instances are capped at {GRADCHECK_MAX_LAYERS} layers, "
            f"got {cfg.n_layers}"
        )
    resolved_family, _, train, _ = build_problem(cfg)
    if family is None:
        family = resolved_family
    if train.n_samples > GRADCHECK_MAX_SAMPLES:
        raise ConfigError(
            f"dataset: gradcheck instances are capped at {GRADCHECK_MAX_SAMPLES} samples, "
            f"got {train.n_samples}; lower grid_per_axis or point dataset_file at a smaller file"
        )
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    u = ControlGrid(rng.uniform(-1.0, 1.0, size=(cfg.n_layers, family.n_fields)))
    got = adjoint_gradient(family, u, train, cfg.beta, method=cfg.gradient_method).values
    want = fd_gradient_oracle(family, u, train, cfg.beta).values
    denom = np.abs(want) + 1e-8
    rel = np.abs(got - want) / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return float(rel[worst]), int(worst[0]), int(worst[1])


GRADCHECK_TOLERANCE = 1e-5


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    err, layer, field_idx = run_gradcheck(cfg)
    ok = err <= GRADCHECK_TOLERANCE
    status = "OK" if ok else "MISMATCH"
    print(
        f"gradcheck {status}: max relative error {err:.3e} "
        f"(layer {layer}, field {field_idx}, tolerance {GRADCHECK_TOLERANCE:.0e})"
    )
    return 0 if ok else 1


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    family, _, data, _ = build_problem(cfg)
    u = load_control_csv(args.control)
    if u.n_fields != family.n_fields:
        print(
            f"error: control has {u.n_fields} field columns, family {cfg.family} has "
            f"{family.n_fields}",
            file=sys.stderr,
        )
        return 1
    states = forward_euler(family, u, data.sources)
    endpoints = states[:, -1]
    point_loss = loss(endpoints - data.targets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dim = data.dim
    with open(out / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = (
            [f"x{i + 1}" for i in range(dim)]
            + [f"mapped{i + 1}" for i in range(dim)]
            + [f"y{i + 1}" for i in range(dim)]
            + ["point_loss"]
        )
        writer.writerow(header)
        for src, end, tgt, pl in zip(data.sources, endpoints, data.targets, point_loss):
            writer.writerow(
                [f"{v:.17g}" for v in src]
                + [f"{v:.17g}" for v in end]
                + [f"{v:.17g}" for v in tgt]
                + [f"{pl:.17g}"]
            )
    print(f"mean error {mean_loss(endpoints, data.targets):.6f} over {data.n_samples} samples")
    return 0


def _apply_thread_cap(threads: int | None) -> None:
    # Best effort: BLAS pools read these when they start.  Results do not
    # depend on the cap, only timing does.
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffeoflow",
        description="Train linear-control ResNets to approximate planar diffeomorphisms.",
    )
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one configuration")
    p_train.add_argument("--config", required=True, help="path to a flat JSON config")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.set_defaults(func=cmd_train)

    p_tab = sub.add_parser("reproduce-tables", help="rerun the benchmark beta sweeps")
    p_tab.add_argument("--table", type=int, choices=sorted(TABLE_SETTINGS), default=None,
                       help="single table to run (default: all six)")
    p_tab.add_argument("--out", required=True, help="output directory")
    p_tab.add_argument("--max-iter", type=int, default=500, help="passes per run")
    p_tab.add_argument("--test-seed", type=int, default=0, help="seed of the held-out cloud")
    p_tab.set_defaults(func=cmd_reproduce_tables)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p_grad.add_argument("--config", required=True, help="path to a flat JSON config")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_eval = sub.add_parser("eval", help="apply a saved control to a dataset")
    p_eval.add_argument("--config", required=True, help="path to a flat JSON config")
    p_eval.add_argument("--control", required=True, help="path to a control.csv")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_thread_cap(args.threads)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
