"""Regularity and generalization diagnostics for a trained flow.

The headline quantity is an empirical Lipschitz constant of the trained
map: the largest spectral norm of its Jacobian over a cloud of probe
points.  Together with the Lipschitz constant of the target map and a
covering bound on the 1-Wasserstein distance between the empirical training
measure and the uniform measure on the square, it yields an a-posteriori
upper bound for the expected error on unseen points:

    test_error <= train_error + (L_target + L_flow) * W1,

since the pointwise penalty is 1-Lipschitz.  For a uniform m x m grid of
M = m^2 points on a square of side length ``side``, W1 is at most
sqrt(2) * side / (2 sqrt(M)): each point of the square lies within half a
cell diagonal of a grid point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .fields import VectorFieldFamily
from .flow import ControlGrid, variational_jacobian


@dataclass(frozen=True)
class MetricsBlock:
    """Diagnostics attached to a finished run; exp_bound needs a rate constant."""

    lipschitz_flow: float
    lipschitz_target: float
    control_norm: float
    w1_bound: float
    generalization_bound: float
    exp_bound: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def spectral_norms(mats: np.ndarray) -> np.ndarray:
    """Largest singular value of a batch of matrices, shape (..., n, n).

    2x2 batches use the closed form

        sigma_max = ( sqrt((a+d)^2 + (b-c)^2) + sqrt((a-d)^2 + (b+c)^2) ) / 2,

    anything else falls back to LAPACK singular values.
    """
    mats = np.asarray(mats, dtype=float)
    if mats.shape[-2:] == (2, 2):
        a = mats[..., 0, 0]
        b = mats[..., 0, 1]
        c = mats[..., 1, 0]
        d = mats[..., 1, 1]
        s1 = np.sqrt((a + d) ** 2 + (b - c) ** 2)
        s2 = np.sqrt((a - d) ** 2 + (b + c) ** 2)
        return 0.5 * (s1 + s2)
    return np.linalg.svd(mats, compute_uv=False)[..., 0]


def lipschitz_estimate(
    family: VectorFieldFamily, u: ControlGrid, probes: np.ndarray
) -> float:
    """Largest Jacobian spectral norm of the trained map over probe points."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    jacs = variational_jacobian(family, u, probes)
    return float(np.max(spectral_norms(jacs)))


def target_lipschitz_estimate(target, probes: np.ndarray) -> float:
    """Largest Jacobian spectral norm of a target map over probe points.

    ``target`` must expose a ``jacobian(points)`` method returning
    (..., dim, dim); the built-in target maps do.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    return float(np.max(spectral_norms(target.jacobian(probes))))


def w1_grid_bound(n_samples: int, side: float) -> float:
    """Upper bound on W1 between the uniform measure on the square and
    the empirical measure of a uniform sqrt(n_samples)^2 grid on it."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    if side <= 0.0:
        raise ValueError(f"side must be positive, got {side}")
    return math.sqrt(2.0) * side / (2.0 * math.sqrt(n_samples))


def generalization_bound(
    training_error: float, lipschitz_target: float, lipschitz_flow: float, w1: float
) -> float:
    """Expected-error bound: training error plus (L_target + L_flow) * W1.

    The unit factor in front of the sum is the Lipschitz constant of the
    pointwise penalty.
    """
    if min(training_error, lipschitz_target, lipschitz_flow, w1) < 0.0:
        raise ValueError("all bound ingredients must be nonnegative")
    return training_error + 1.0 * (lipschitz_target + lipschitz_flow) * w1


def exp_norm_bound(rate_constant: float, u: ControlGrid) -> float:
    """A-priori Lipschitz bound exp(C * |u|_{L2}) for a user-supplied C.

    The constant C depends on the field family and the working region and
    must be supplied by the caller; no default is assumed.
    """
    if rate_constant < 0.0:
        raise ValueError(f"rate constant must be nonnegative, got {rate_constant}")
    return math.exp(rate_constant * math.sqrt(u.l2_norm_sq()))


def build_metrics(
    family: VectorFieldFamily,
    u: ControlGrid,
    target,
    probes: np.ndarray,
    training_error: float,
    n_train: int,
    side: float,
    rate_constant: float | None = None,
) -> MetricsBlock:
    """Assemble the full diagnostics block for a finished run."""
    l_flow = lipschitz_estimate(family, u, probes)
    l_target = target_lipschitz_estimate(target, probes)
    w1 = w1_grid_bound(n_train, side)
    return MetricsBlock(
        lipschitz_flow=l_flow,
        lipschitz_target=l_target,
        control_norm=math.sqrt(u.l2_norm_sq()),
        w1_bound=w1,
        generalization_bound=generalization_bound(training_error, l_target, l_flow, w1),
        exp_bound=None if rate_constant is None else exp_norm_bound(rate_constant, u),
    )
