import numpy as np
import pytest

from ctoqw import builtin_model, classical_model, trajectory
from ctoqw.model import build_model

needs_compiled = pytest.mark.skipif(
    trajectory.backend() != "cython",
    reason="statistical check at a scale that needs the compiled kernel",
)


def random_hermitian(n, rng, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (a + a.conj().T) / 2


def random_density(n, rng):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_model(d, n, rng, scale=1.0):
    ops = [
        scale * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(n)
        for _ in range(2 * d)
    ]
    return build_model(d, random_hermitian(n, rng, scale), ops)


@pytest.fixture
def example1():
    return builtin_model(1)


@pytest.fixture
def example2():
    return builtin_model(2)


@pytest.fixture
def example3():
    return builtin_model(3)


@pytest.fixture
def poisson_model():
    # pure right-mover: the position is a rate-1 Poisson counting process
    return classical_model(1.0, 0.0)
