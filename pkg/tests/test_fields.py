"""Field families: values, Jacobians, ordering, and input validation."""

import numpy as np
import pytest

from diffeoflow import FieldSpec, family_from_name, make_affine8, make_custom, make_enriched14


def fd_jacobian(family, i, x, eps=1e-6):
    """Central-difference Jacobian of field i at a single point x."""
    x = np.asarray(x, dtype=float)
    cols = []
    for d in range(family.dim):
        e = np.zeros(family.dim)
        e[d] = eps
        cols.append((family.value(i, x + e) - family.value(i, x - e)) / (2 * eps))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("maker", [make_affine8, make_enriched14])
def test_jacobians_match_finite_differences(maker, rng):
    fam = maker(20.0)
    pts = rng.uniform(-2.0, 2.0, size=(100, 2))
    jac = fam.jacobians(pts)
    for i in range(fam.n_fields):
        for m in range(0, 100, 7):
            want = fd_jacobian(fam, i, pts[m])
            assert np.allclose(jac[m, i], want, atol=1e-6), (i, m)


def test_affine8_values_at_known_point():
    fam = make_affine8(20.0)
    x = np.array([1.0, 2.0])
    g = np.exp(-5.0 / 40.0)
    vals = fam.values(x)
    expected = np.array(
        [
            [1.0, 0.0],
            [0.0, 1.0],
            [g, 0.0],
            [0.0, g],
            [1.0, 0.0],
            [2.0, 0.0],
            [0.0, 1.0],
            [0.0, 2.0],
        ]
    )
    assert np.allclose(vals, expected, rtol=0, atol=1e-15)


def test_enriched14_extends_affine8_in_order():
    a = make_affine8(20.0)
    e = make_enriched14(20.0)
    pts = np.array([[0.3, -1.1], [2.0, 0.5]])
    assert np.allclose(e.values(pts)[:, :8], a.values(pts))
    assert np.allclose(e.jacobians(pts)[:, :8], a.jacobians(pts))

    x1, x2 = pts[..., 0], pts[..., 1]
    g = np.exp(-0.5 * (x1**2 + x2**2) / 20.0)
    tail = e.values(pts)[:, 8:]
    assert np.allclose(tail[:, 0, 0], x1 * x1 * g)
    assert np.allclose(tail[:, 1, 0], x1 * x2 * g)
    assert np.allclose(tail[:, 2, 0], x2 * x2 * g)
    assert np.allclose(tail[:, 0:3, 1], 0.0)
    assert np.allclose(tail[:, 3, 1], x1 * x1 * g)
    assert np.allclose(tail[:, 4, 1], x1 * x2 * g)
    assert np.allclose(tail[:, 5, 1], x2 * x2 * g)
    assert np.allclose(tail[:, 3:6, 0], 0.0)


def test_field_magnitudes_bounded_on_test_square(rng):
    # On [-2, 2]^2: constants give 1, damped constants at most 1, linear
    # fields at most 2, damped quadratics at most 4.
    pts = rng.uniform(-2.0, 2.0, size=(500, 2))
    bounds = [1, 1, 1, 1, 2, 2, 2, 2] + [4] * 6
    fam = make_enriched14(20.0)
    norms = np.linalg.norm(fam.values(pts), axis=-1)
    for i, b in enumerate(bounds):
        assert norms[:, i].max() <= b + 1e-12


def test_gaussian_width_changes_damping():
    narrow = make_affine8(0.5)
    wide = make_affine8(50.0)
    x = np.array([1.0, 1.0])
    assert narrow.value(2, x)[0] < wide.value(2, x)[0]


def test_batch_shapes_preserved():
    fam = make_enriched14(20.0)
    pts = np.zeros((3, 4, 5, 2))
    assert fam.values(pts).shape == (3, 4, 5, 14, 2)
    assert fam.jacobians(pts).shape == (3, 4, 5, 14, 2, 2)
    assert fam.value(9, pts).shape == (3, 4, 5, 2)
    assert fam.jacobian(9, pts).shape == (3, 4, 5, 2, 2)


def test_index_and_shape_errors():
    fam = make_affine8(20.0)
    with pytest.raises(IndexError):
        fam.value(8, np.zeros(2))
    with pytest.raises(IndexError):
        fam.jacobian(-1, np.zeros(2))
    with pytest.raises(ValueError):
        fam.values(np.zeros(3))


@pytest.mark.parametrize("bad", [0.0, -1.0, np.nan, np.inf])
def test_invalid_width_rejected(bad):
    with pytest.raises(ValueError):
        make_affine8(bad)


def test_family_from_name():
    assert family_from_name("affine8", 20.0).n_fields == 8
    assert family_from_name("enriched14", 20.0).n_fields == 14
    with pytest.raises(ValueError):
        family_from_name("cubic99", 20.0)


def test_custom_family_round_trip(rng):
    rot = FieldSpec(
        value=lambda x: np.stack([-x[..., 1], x[..., 0]], axis=-1),
        jacobian=lambda x: np.broadcast_to(
            np.array([[0.0, -1.0], [1.0, 0.0]]), x.shape[:-1] + (2, 2)
        ).copy(),
    )
    fam = make_custom([rot], dim=2)
    assert fam.n_fields == 1
    pts = rng.normal(size=(6, 2))
    assert np.allclose(fam.value(0, pts), np.stack([-pts[:, 1], pts[:, 0]], axis=-1))
    for m in range(6):
        assert np.allclose(fd_jacobian(fam, 0, pts[m]), fam.jacobian(0, pts[m]), atol=1e-6)
    with pytest.raises(ValueError):
        make_custom([], dim=2)
    with pytest.raises(ValueError):
        make_custom([rot], dim=0)
