"""Shared fixtures: the benchmark target, grids, and field families."""

import numpy as np
import pytest

from diffeoflow import (
    builtin_target,
    make_affine8,
    make_enriched14,
    make_grid_dataset,
    make_random_testset,
)
from diffeoflow.objective import Dataset


@pytest.fixture(scope="session")
def target():
    return builtin_target()


@pytest.fixture(scope="session")
def affine8():
    return make_affine8(20.0)


@pytest.fixture(scope="session")
def enriched14():
    return make_enriched14(20.0)


@pytest.fixture(scope="session")
def grid900(target):
    """The full 30x30 training grid on the side-1.5 square."""
    return make_grid_dataset(target, side=1.5, per_axis=30)


@pytest.fixture(scope="session")
def testset300(target):
    return make_random_testset(target, side=1.5, count=300, seed=0)


@pytest.fixture(scope="session")
def grid25(target):
    """A cheap 5x5 grid for unit tests that train."""
    return make_grid_dataset(target, side=1.5, per_axis=5)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(1234))


def small_dataset(points, target):
    pts = np.asarray(points, dtype=float)
    return Dataset(pts, target(pts))
