import numpy as np
import pytest

from ctoqw import linalg
from ctoqw.linalg import (
    Superoperator,
    devectorize,
    hermitize_unit_trace,
    is_hermitian,
    is_psd,
    kernel_basis,
    kron_sandwich,
    leading_spectral_abscissa,
    matrix_exponential,
    vectorize,
)
from ctoqw.spectral import lindblad_superoperator

from conftest import random_model


def test_vectorize_column_stacking():
    np.testing.assert_array_equal(vectorize([[1, 2], [3, 4]]), [1, 3, 2, 4])
    np.testing.assert_array_equal(vectorize(np.eye(2)), [1, 0, 0, 1])


def test_vectorize_devectorize_roundtrip():
    rng = np.random.default_rng(0)
    for n in (1, 2, 3, 5):
        for _ in range(20):
            m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            np.testing.assert_array_equal(devectorize(vectorize(m), n), m)


def test_vectorize_rejects_bad_shapes():
    with pytest.raises(ValueError):
        vectorize(np.ones((2, 3)))
    with pytest.raises(ValueError):
        devectorize(np.ones(5), 2)


def test_kron_sandwich_matches_direct_product():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    lhs = devectorize(kron_sandwich(a, b) @ vectorize(rho), 3)
    np.testing.assert_allclose(lhs, a @ rho @ b.conj().T, atol=1e-12)


def test_matrix_exponential_basics():
    a = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_allclose(matrix_exponential(a, 0.0), np.eye(2), atol=1e-15)
    d = np.diag([0.3, -1.2 + 0.5j])
    np.testing.assert_allclose(matrix_exponential(d), np.diag(np.exp(np.diag(d))), rtol=1e-14)
    nil = np.array([[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(matrix_exponential(nil), [[1, 1], [0, 1]], atol=1e-15)


def test_matrix_exponential_semigroup_property():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        a /= np.linalg.norm(a, 2)
        s, t = rng.uniform(0.1, 2.0, size=2)
        lhs = matrix_exponential(a, s + t)
        rhs = matrix_exponential(a, s) @ matrix_exponential(a, t)
        assert np.linalg.norm(lhs - rhs) <= 1e-10


def test_matrix_exponential_rejects_nonfinite():
    with pytest.raises(ValueError):
        matrix_exponential(np.array([[np.nan, 0], [0, 0]]))
    with pytest.raises(ValueError):
        matrix_exponential(np.eye(2), np.inf)


def test_hermitian_and_psd_predicates():
    assert is_hermitian(np.diag([1.0, 2.0]))
    assert not is_hermitian(np.array([[0, 1], [0, 0]]))
    assert is_psd(np.diag([0.0, 3.0]))
    assert not is_psd(np.diag([-1.0, 3.0]))


def test_kernel_basis_zero_and_identity_maps():
    zero = Superoperator(2, np.zeros((4, 4)))
    assert len(kernel_basis(zero)) == 4
    ident = Superoperator(2, np.eye(4))
    assert kernel_basis(ident) == []


def test_kernel_basis_example2_generator(example2):
    basis = kernel_basis(lindblad_superoperator(example2))
    assert len(basis) == 1
    rho, ok = hermitize_unit_trace(basis[0])
    assert ok
    np.testing.assert_allclose(rho, np.diag([0.4, 0.6]), atol=1e-12)


def test_kernel_elements_are_numerical_kernel():
    rng = np.random.default_rng(3)
    for seed in range(5):
        model = random_model(1, 2, np.random.default_rng(seed))
        s = lindblad_superoperator(model)
        norm_s = np.linalg.norm(s.matrix, 2)
        for k in kernel_basis(s, tol=1e-10):
            resid = np.linalg.norm(s.apply(k))
            assert resid <= 10 * 1e-10 * norm_s * np.linalg.norm(k)
    del rng


def test_leading_abscissa_diagonal_superoperator():
    s = Superoperator(2, np.diag([-1.0, -2.0, -3.0, -4.0]))
    lead = leading_spectral_abscissa(s)
    assert lead.value == pytest.approx(-1.0, abs=1e-14)
    assert not lead.degenerate


def test_leading_abscissa_flags_degeneracy():
    s = Superoperator(2, np.diag([-1.0, -1.0, -3.0, -4.0]))
    assert leading_spectral_abscissa(s).degenerate


def test_leading_abscissa_example2(example2):
    lead = leading_spectral_abscissa(lindblad_superoperator(example2))
    assert abs(lead.value) <= 1e-12
    assert lead.hermitized
    np.testing.assert_allclose(lead.vector, np.diag([0.4, 0.6]), atol=1e-11)


def test_leading_abscissa_zero_for_random_models():
    # trace preservation pins the leading eigenvalue of the generator at 0
    for seed in range(8):
        model = random_model(1, 3, np.random.default_rng(100 + seed))
        lead = leading_spectral_abscissa(lindblad_superoperator(model))
        assert abs(lead.value) <= 1e-10


def test_hermitize_recovers_phase_rotated_state():
    rho = np.diag([0.25, 0.75]).astype(complex)
    k = np.exp(1j * 1.234) * rho
    out, ok = hermitize_unit_trace(k)
    assert ok
    np.testing.assert_allclose(out, rho, atol=1e-12)


def test_hermitize_flags_traceless_input():
    k = np.array([[1.0, 0.0], [0.0, -1.0]])
    out, ok = hermitize_unit_trace(k)
    assert not ok
    np.testing.assert_array_equal(out, k)


def test_superoperator_apply_and_adjoint():
    rng = np.random.default_rng(4)
    mat = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    s = Superoperator(2, mat)
    rho = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    lhs = np.trace(a.conj().T @ s.apply(rho))
    rhs = np.trace(s.adjoint().apply(a).conj().T @ rho)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_lindblad_superoperator_preserves_hermiticity(example2):
    rng = np.random.default_rng(5)
    s = lindblad_superoperator(example2)
    for _ in range(10):
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        h = (h + h.conj().T) / 2
        out = s.apply(h)
        assert np.linalg.norm(out - out.conj().T) <= 1e-12
