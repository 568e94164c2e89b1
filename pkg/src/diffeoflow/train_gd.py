"""Projected-gradient-flow trainer with Armijo backtracking.

Each pass proposes u_new = u - gamma * g, where g is the objective gradient
in slab-average coordinates, and accepts it only under sufficient decrease:

    cost(u) >= cost(u_new) + c * gamma * |g|_{L2}^2.

On rejection gamma shrinks by tau and the same proposal direction is
retried; gamma is never grown back.  Covectors are recomputed only after an
accepted step, since a rejected one leaves the trajectories unchanged.
Every pass through the loop, accepted or not, counts toward max_iter and
produces one trace record, so backtracking is visible in the output.

An optional mini-batch mode draws a fresh subset of samples (without
replacement) each pass and runs the same proposal/acceptance logic on the
batch cost alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import VectorFieldFamily
from .flow import ControlGrid, FlowError, forward_euler
from .objective import (
    Dataset,
    ObjectiveValue,
    control_gradient,
    cost_of_endpoints,
    mean_loss,
)


@dataclass(frozen=True)
class TrainConfig:
    """Shared knobs for both trainers.

    gamma0 is the initial step size, tau the backtracking factor, c the
    sufficient-decrease constant (ignored by the maximum-principle trainer,
    which accepts on any strict decrease).  batch_size, when set, must be
    at most the dataset size; seed feeds the batch sampler.
    gradient_method selects "exact" backpropagation or the "trapezoid"
    slab-average quadrature (gradient-flow trainer only).
    """

    beta: float
    max_iter: int = 500
    gamma0: float = 1.0
    tau: float = 0.5
    c: float = 0.1
    batch_size: int | None = None
    seed: int = 0
    gradient_method: str = "exact"

    def __post_init__(self) -> None:
        if self.beta < 0.0 or not math.isfinite(self.beta):
            raise ValueError(f"beta must be nonnegative and finite, got {self.beta}")
        if self.max_iter < 0:
            raise ValueError(f"max_iter must be nonnegative, got {self.max_iter}")
        if self.gamma0 <= 0.0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 < self.c < 1.0:
            raise ValueError(f"c must lie in (0, 1), got {self.c}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be positive when set, got {self.batch_size}")
        if self.gradient_method not in ("exact", "trapezoid"):
            raise ValueError(f"unknown gradient_method {self.gradient_method!r}")


@dataclass(frozen=True)
class IterationRecord:
    """One trace row; iteration 0 is the initial state before any proposal.

    cost and data_term describe the proposal evaluated in that pass (for
    row 0, the initial control).  testing_error is NaN when no test set was
    supplied.  gamma is the step size the proposal used.
    """

    iteration: int
    cost: float
    data_term: float
    testing_error: float
    gamma: float
    accepted: bool


@dataclass
class TrainReport:
    """Everything a training run produced."""

    records: list[IterationRecord]
    control: ControlGrid
    final_cost: ObjectiveValue
    metrics: dict | None = field(default=None)

    @property
    def accepted_costs(self) -> list[float]:
        return [r.cost for r in self.records if r.accepted]


class TrainAbort(RuntimeError):
    """Flow failure mid-training; carries the report for the completed part."""

    def __init__(self, message: str, report: TrainReport, cause: FlowError):
        super().__init__(message)
        self.report = report
        self.cause = cause


def _testing_error(
    family: VectorFieldFamily, u: ControlGrid, test_data: Dataset | None
) -> float:
    if test_data is None:
        return float("nan")
    states = forward_euler(family, u, test_data.sources)
    return mean_loss(states[:, -1], test_data.targets)


def _init_control(
    n_layers: int, n_fields: int, init: ControlGrid | None
) -> ControlGrid:
    if init is None:
        return ControlGrid.zeros(n_layers, n_fields)
    if init.n_layers != n_layers or init.n_fields != n_fields:
        raise ValueError(
            f"init control has shape {init.values.shape}, expected ({n_layers}, {n_fields})"
        )
    return ControlGrid(init.values.copy())


def _batch_indices(rng: np.random.Generator, n_samples: int, batch_size: int) -> np.ndarray:
    return rng.choice(n_samples, size=batch_size, replace=False)


def train_gradient_flow(
    family: VectorFieldFamily,
    data: Dataset,
    n_layers: int,
    cfg: TrainConfig,
    init: ControlGrid | None = None,
    test_data: Dataset | None = None,
) -> TrainReport:
    """Minimize the objective by backtracking gradient descent.

    Returns a TrainReport whose records include the initial state (iteration
    0) and one row per pass.  The reported final cost is always evaluated on
    the full dataset, also in mini-batch mode.
    """
    if data.dim != family.dim:
        raise ValueError(f"dataset dimension {data.dim} does not match family dimension {family.dim}")
    if n_layers < 1:
        raise ValueError(f"n_layers must be positive, got {n_layers}")
    if cfg.batch_size is not None and cfg.batch_size > data.n_samples:
        raise ValueError(
            f"batch_size {cfg.batch_size} exceeds dataset size {data.n_samples}"
        )
    u = _init_control(n_layers, family.n_fields, init)
    batching = cfg.batch_size is not None and cfg.batch_size < data.n_samples
    rng = np.random.Generator(np.random.Philox(cfg.seed))

    states = forward_euler(family, u, data.sources)
    current = cost_of_endpoints(states[:, -1], data.targets, u, cfg.beta)
    records = [
        IterationRecord(
            iteration=0,
            cost=current.total,
            data_term=current.data_term,
            testing_error=_testing_error(family, u, test_data),
            gamma=cfg.gamma0,
            accepted=True,
        )
    ]

    gamma = cfg.gamma0
    need_gradient = True
    grad = np.zeros_like(u.values)
    try:
        for it in range(1, cfg.max_iter + 1):
            if batching:
                idx = _batch_indices(rng, data.n_samples, cfg.batch_size)
                batch = data.subset(idx)
                states = forward_euler(family, u, batch.sources)
                current = cost_of_endpoints(states[:, -1], batch.targets, u, cfg.beta)
                grad = control_gradient(
                    family, u, states, batch.targets, cfg.beta, cfg.gradient_method
                )
                targets = batch.targets
                sources = batch.sources
            else:
                if need_gradient:
                    grad = control_gradient(
                        family, u, states, data.targets, cfg.beta, cfg.gradient_method
                    )
                    need_gradient = False
                targets = data.targets
                sources = data.sources

            proposal = ControlGrid(u.values - gamma * grad)
            states_new = forward_euler(family, proposal, sources)
            cost_new = cost_of_endpoints(states_new[:, -1], targets, proposal, cfg.beta)
            decrease = cfg.c * gamma * proposal.step * float(np.sum(grad * grad))
            accepted = current.total >= cost_new.total + decrease
            if accepted:
                u = proposal
                states = states_new
                current = cost_new
                need_gradient = True
            records.append(
                IterationRecord(
                    iteration=it,
                    cost=cost_new.total,
                    data_term=cost_new.data_term,
                    testing_error=_testing_error(family, u, test_data),
                    gamma=gamma,
                    accepted=accepted,
                )
            )
            if not accepted:
                gamma *= cfg.tau
    except FlowError as err:
        partial = TrainReport(
            records=records,
            control=u,
            final_cost=_full_cost(family, u, data, cfg.beta),
        )
        raise TrainAbort(
            f"flow failed at training pass {len(records)}: {err}", partial, err
        ) from err

    return TrainReport(
        records=records,
        control=u,
        final_cost=_full_cost(family, u, data, cfg.beta),
    )


def _full_cost(
    family: VectorFieldFamily, u: ControlGrid, data: Dataset, beta: float
) -> ObjectiveValue:
    states = forward_euler(family, u, data.sources)
    return cost_of_endpoints(states[:, -1], data.targets, u, beta)
