"""Shared fixtures and model builders for the test suite."""

import numpy as np
import pytest

from ctmc_ldp import Generator, Measure, Potential, validate_generator


def absorbing_chain() -> Generator:
    """Two states, unit rate a -> b, no way back."""
    return validate_generator(["a", "b"], [[0.0, 1.0], [0.0, 0.0]])


def symmetric_chain() -> Generator:
    """Two states with unit rates both ways."""
    return validate_generator(["a", "b"], [[0.0, 1.0], [1.0, 0.0]])


def random_model(rng, n_min=2, n_max=5, rate_high=3.0) -> Generator:
    """A fully connected chain with rates uniform in (0, rate_high]."""
    n = int(rng.integers(n_min, n_max + 1))
    rates = rng.uniform(0.0, rate_high, size=(n, n)) + 1e-9
    return validate_generator([f"s{i}" for i in range(n)], rates)


def random_measure(rng, gen, strict=True) -> Measure:
    p = rng.dirichlet(np.ones(gen.size))
    if strict:
        p = (p + 0.01) / (1.0 + 0.01 * gen.size)
    return Measure(gen.space, p)


def random_potential(rng, gen, bound=1.0) -> Potential:
    return Potential(gen.space, rng.uniform(-bound, bound, gen.size))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
