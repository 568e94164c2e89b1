"""Loss, cost assembly, and the adjoint gradient against finite differences."""

import numpy as np
import pytest

from diffeoflow import (
    ControlGrid,
    adjoint_gradient,
    cost,
    cost_of_endpoints,
    fd_gradient_oracle,
    forward_euler,
    loss,
    loss_grad,
    make_affine8,
    make_enriched14,
    mean_loss,
)
from diffeoflow.objective import Dataset


def test_loss_known_values():
    assert loss(np.zeros(2)) == 0.0
    assert np.isclose(loss(np.array([3.0, 4.0])), np.sqrt(26.0) - 1.0, rtol=1e-15)


def test_loss_is_stable_near_zero():
    z = np.array([1e-8, 0.0])
    val = loss(z)
    assert val > 0.0
    assert np.isclose(val, 0.5e-16, rtol=1e-10)


def test_loss_handles_large_residuals():
    val = loss(np.array([1e150, 0.0]))
    assert np.isfinite(val)
    assert np.isclose(val, 1e150, rtol=1e-12)


def test_loss_grad_values_and_bound(rng):
    g = loss_grad(np.array([3.0, 4.0]))
    assert np.allclose(g, np.array([3.0, 4.0]) / np.sqrt(26.0), rtol=1e-15)
    z = rng.normal(scale=5.0, size=(200, 2))
    assert np.linalg.norm(loss_grad(z), axis=-1).max() < 1.0

    eps = 1e-7
    for zz in z[:10]:
        want = np.array(
            [
                (loss(zz + [eps, 0]) - loss(zz - [eps, 0])) / (2 * eps),
                (loss(zz + [0, eps]) - loss(zz - [0, eps])) / (2 * eps),
            ]
        )
        assert np.allclose(loss_grad(zz), want, atol=1e-9)


def test_cost_at_zero_control_is_mean_identity_mismatch(affine8, grid25):
    val = cost(affine8, ControlGrid.zeros(16, 8), grid25, beta=0.5)
    assert val.reg_term == 0.0
    assert np.isclose(val.data_term, mean_loss(grid25.sources, grid25.targets), rtol=1e-15)
    assert val.total == val.data_term


def test_reg_term_assembly():
    endpoints = np.array([[1.0, 2.0]])
    u = ControlGrid(np.ones((4, 8)))
    val = cost_of_endpoints(endpoints, endpoints, u, beta=2.0)
    assert val.data_term == 0.0
    assert np.isclose(val.reg_term, 8.0, rtol=1e-15)
    assert np.isclose(val.total, 8.0, rtol=1e-15)


def test_negative_beta_rejected(affine8, grid25):
    with pytest.raises(ValueError):
        cost(affine8, ControlGrid.zeros(4, 8), grid25, beta=-0.1)


@pytest.mark.parametrize("method", ["exact", "trapezoid"])
def test_constant_channel_gradient_at_zero_control(affine8, method):
    # One sample, zero control, target offset by (3, 4): the covector is the
    # constant -(3,4)/sqrt(26) at every node, so the two constant-field
    # channels read off its components directly.
    src = np.array([[0.2, -0.4]])
    data = Dataset(src, src + np.array([3.0, 4.0]))
    g = adjoint_gradient(affine8, ControlGrid.zeros(6, 8), data, beta=0.0, method=method)
    assert np.allclose(g.values[:, 0], -3.0 / np.sqrt(26.0), rtol=1e-14)
    assert np.allclose(g.values[:, 1], -4.0 / np.sqrt(26.0), rtol=1e-14)


def test_methods_coincide_at_zero_control(affine8, grid25):
    u = ControlGrid.zeros(10, 8)
    ge = adjoint_gradient(affine8, u, grid25, beta=0.3, method="exact")
    gt = adjoint_gradient(affine8, u, grid25, beta=0.3, method="trapezoid")
    assert np.allclose(ge.values, gt.values, rtol=1e-13, atol=1e-15)


def test_exact_gradient_matches_finite_differences(rng):
    families = [make_affine8(20.0), make_enriched14(20.0)]
    cases = 0
    for n_layers in (2, 4, 8):
        for m in (1, 3, 10):
            fam = families[cases % 2]
            beta = 0.0 if cases % 3 else 0.1
            src = rng.uniform(-1.5, 1.5, size=(m, 2))
            tgt = src + rng.normal(scale=0.8, size=(m, 2))
            data = Dataset(src, tgt)
            u = ControlGrid(rng.normal(scale=0.5, size=(n_layers, fam.n_fields)))
            got = adjoint_gradient(fam, u, data, beta).values
            want = fd_gradient_oracle(fam, u, data, beta).values
            assert np.allclose(got, want, rtol=1e-5, atol=1e-7), (n_layers, m)
            cases += 1
    assert cases == 9


def test_trapezoid_bias_shrinks_with_depth(affine8, rng):
    """The slab-averaged gradient drifts from the exact one by O(1/N)."""
    src = rng.uniform(-1, 1, size=(6, 2))
    data = Dataset(src, src + rng.normal(scale=0.6, size=(6, 2)))
    gaps = []
    for n in (8, 16, 32):
        s = (np.arange(n) + 0.5) / n
        u = np.zeros((n, 8))
        u[:, 4] = 0.9 * np.sin(np.pi * s)
        u[:, 6] = -0.5
        grid = ControlGrid(u)
        ge = adjoint_gradient(affine8, grid, data, beta=0.0, method="exact").values
        gt = adjoint_gradient(affine8, grid, data, beta=0.0, method="trapezoid").values
        gaps.append(np.abs(ge - gt).max())
    assert 1.6 < gaps[0] / gaps[1] < 2.5
    assert 1.6 < gaps[1] / gaps[2] < 2.5


def test_gradient_step_decreases_cost(enriched14, grid25, rng):
    u = ControlGrid(rng.normal(scale=0.3, size=(8, 14)))
    base = cost(enriched14, u, grid25, beta=0.05)
    g = adjoint_gradient(enriched14, u, grid25, beta=0.05)
    stepped = ControlGrid(u.values - 1e-3 * g.values)
    assert cost(enriched14, stepped, grid25, beta=0.05).total < base.total


def test_gradient_invariant_under_sample_permutation(affine8, grid25, rng):
    u = ControlGrid(rng.normal(scale=0.3, size=(6, 8)))
    g1 = adjoint_gradient(affine8, u, grid25, beta=0.1).values
    perm = rng.permutation(grid25.n_samples)
    g2 = adjoint_gradient(affine8, u, grid25.subset(perm), beta=0.1).values
    assert np.allclose(g1, g2, rtol=0, atol=1e-12)


def test_unknown_gradient_method_rejected(affine8, grid25):
    with pytest.raises(ValueError):
        adjoint_gradient(affine8, ControlGrid.zeros(4, 8), grid25, beta=0.0, method="simpson")


def test_fd_oracle_rejects_bad_step(affine8, grid25):
    with pytest.raises(ValueError):
        fd_gradient_oracle(affine8, ControlGrid.zeros(2, 8), grid25, beta=0.0, step=0.0)


def test_dataset_validation():
    good = np.array([[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0, 0.0], [0.0, 0.0]]), good)  # duplicate sources
    with pytest.raises(ValueError):
        Dataset(good, good[:1])
    with pytest.raises(ValueError):
        Dataset(good, np.array([[np.nan, 0.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.zeros((0, 2)))
    d = Dataset(good, good + 1.0)
    sub = d.subset(np.array([1]))
    assert sub.n_samples == 1 and sub.dim == 2


def test_endpoint_states_feed_cost(affine8, grid25):
    u = ControlGrid(np.full((5, 8), 0.1))
    states = forward_euler(affine8, u, grid25.sources)
    via_states = cost_of_endpoints(states[:, -1], grid25.targets, u, beta=0.2)
    direct = cost(affine8, u, grid25, beta=0.2)
    assert via_states == direct
