"""Maximum-principle trainer: layerwise Hamiltonian maximization.

Instead of stepping along a gradient, each pass sweeps the layers k = 1..N
in time order and replaces the control of layer k with the maximizer of the
proximally damped Hamiltonian

    v  |->  H(x_{k-1}, lambda_{k-1}, v) - |v - u_old_k|^2 / (2 gamma),

where H(x, lambda, v) = sum_j <lambda^j, sum_i v_i F_i(x^j)> - (beta/2)|v|^2.
The maximizer is available in closed form because H is quadratic in v:

    v_i = (u_old_k[i] + gamma * sum_j <lambda_{k-1}^j, F_i(x_{k-1}^j)>) / (1 + gamma * beta).

Covectors solve the backward transport with terminal value
-(1/M) grad a(x_N - y); inside a sweep they are corrected at each node for
the drift of the updated trajectory before the control update uses them.
A pass is accepted only if the cost strictly decreased; otherwise the saved
state, control, and covector bundles are restored and gamma shrinks by tau.
"""

from __future__ import annotations

import numpy as np

from .fields import VectorFieldFamily
from .flow import ControlGrid, FlowError, backward_covector, forward_euler
from .objective import (
    Dataset,
    cost_of_endpoints,
    loss_grad,
)
from .train_gd import (
    IterationRecord,
    TrainAbort,
    TrainConfig,
    TrainReport,
    _full_cost,
    _init_control,
    _testing_error,
)


def eval_hamiltonian(
    family: VectorFieldFamily,
    x: np.ndarray,
    lam: np.ndarray,
    controls: np.ndarray,
    beta: float,
) -> float:
    """H(x, lambda, v) summed over the sample bundle at one time node."""
    controls = np.asarray(controls, dtype=float)
    pairing = float(np.einsum("mn,mln,l->", lam, family.values(x), controls))
    return pairing - 0.5 * beta * float(np.dot(controls, controls))


def maximized_controls(
    field_pairing: np.ndarray, u_old: np.ndarray, gamma: float, beta: float
) -> np.ndarray:
    """Closed-form maximizer of the proximally damped Hamiltonian.

    field_pairing[i] = sum_j <lambda^j, F_i(x^j)> at the node in question.
    With beta >= 0 and gamma > 0 the problem is strictly concave, so this
    is the unique maximizer.
    """
    return (u_old + gamma * field_pairing) / (1.0 + gamma * beta)


def train_pmp(
    family: VectorFieldFamily,
    data: Dataset,
    n_layers: int,
    cfg: TrainConfig,
    init: ControlGrid | None = None,
    test_data: Dataset | None = None,
) -> TrainReport:
    """Train by successive layerwise Hamiltonian maximization.

    Accepts the same configuration as the gradient-flow trainer, except that
    c and gradient_method are ignored and mini-batch mode is not available.
    Records follow the same convention: iteration 0 is the initial state,
    then one row per pass with its proposal cost and accepted flag.
    """
    if data.dim != family.dim:
        raise ValueError(f"dataset dimension {data.dim} does not match family dimension {family.dim}")
    if n_layers < 1:
        raise ValueError(f"n_layers must be positive, got {n_layers}")
    if cfg.batch_size is not None and cfg.batch_size != data.n_samples:
        raise ValueError("mini-batch mode is not supported by the maximum-principle trainer")

    u = _init_control(n_layers, family.n_fields, init)
    h = u.step
    n_pts = data.n_samples
    targets = data.targets

    states = forward_euler(family, u, data.sources)
    current = cost_of_endpoints(states[:, -1], targets, u, cfg.beta)
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
    lam: np.ndarray | None = None
    need_covectors = True
    try:
        for it in range(1, cfg.max_iter + 1):
            if need_covectors:
                terminal = -loss_grad(states[:, -1] - targets) / n_pts
                lam = backward_covector(family, u, states, terminal, scheme="implicit")
                need_covectors = False
            saved_states = states.copy()
            saved_controls = u.values.copy()
            saved_lam = lam.copy()

            new_controls = u.values.copy()
            for k in range(1, n_layers + 1):
                # The sweep has already moved nodes 1..k-1; shift the covector
                # by the change this causes in the endpoint penalty gradients.
                drift = (
                    loss_grad(saved_states[:, k - 1] - targets)
                    - loss_grad(states[:, k - 1] - targets)
                ) / n_pts
                lam[:, k - 1] += drift
                vals = family.values(states[:, k - 1])  # (M, l, dim)
                pairing = np.einsum("mn,mln->l", lam[:, k - 1], vals)
                new_controls[k - 1] = maximized_controls(
                    pairing, saved_controls[k - 1], gamma, cfg.beta
                )
                states[:, k] = states[:, k - 1] + h * np.einsum(
                    "mln,l->mn", vals, new_controls[k - 1]
                )
                if not np.isfinite(states[:, k]).all():
                    bad = ~np.isfinite(states[:, k]).all(axis=1)
                    raise FlowError(
                        f"non-finite state for sample {int(np.argmax(bad))} at layer {k} "
                        "during a maximization sweep",
                        sample=int(np.argmax(bad)),
                        layer=k,
                    )

            proposal = ControlGrid(new_controls)
            cost_new = cost_of_endpoints(states[:, -1], targets, proposal, cfg.beta)
            accepted = current.total > cost_new.total
            gamma_used = gamma
            if accepted:
                u = proposal
                current = cost_new
                need_covectors = True
            else:
                states = saved_states
                u = ControlGrid(saved_controls)
                lam = saved_lam
                gamma *= cfg.tau
            records.append(
                IterationRecord(
                    iteration=it,
                    cost=cost_new.total,
                    data_term=cost_new.data_term,
                    testing_error=_testing_error(family, u, test_data),
                    gamma=gamma_used,
                    accepted=accepted,
                )
            )
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
