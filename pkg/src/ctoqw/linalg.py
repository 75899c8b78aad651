"""Dense complex linear algebra on small matrices and superoperators.

Matrices are plain numpy ``complex128`` arrays.  Superoperators act on
column-stacked vectorizations: entry (i, j) of an n x n matrix lands at
vector index ``j*n + i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

__all__ = [
    "as_square_matrix",
    "is_hermitian",
    "is_psd",
    "vectorize",
    "devectorize",
    "kron_sandwich",
    "matrix_exponential",
    "Superoperator",
    "kernel_basis",
    "hermitize_unit_trace",
    "LeadingEigen",
    "leading_spectral_abscissa",
]

HERMITIZE_TRACE_TOL = 1e-10
DEGENERACY_TOL = 1e-9


def as_square_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a square complex array, rejecting non-finite entries."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def is_hermitian(m: np.ndarray, tol: float = 1e-12) -> bool:
    m = np.asarray(m)
    return bool(np.linalg.norm(m - m.conj().T) <= tol)


def is_psd(m: np.ndarray, tol: float = 1e-12) -> bool:
    """All eigenvalues of the Hermitian part are >= -tol."""
    h = (np.asarray(m) + np.asarray(m).conj().T) / 2
    return bool(np.linalg.eigvalsh(h).min() >= -tol)


def vectorize(m) -> np.ndarray:
    """Column-stack a square matrix into a vector."""
    a = as_square_matrix(m)
    return a.T.reshape(-1).copy()


def devectorize(v, n: int) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    a = np.asarray(v, dtype=complex).reshape(-1)
    if a.size != n * n:
        raise ValueError(f"vector of length {a.size} is not {n}x{n}")
    return a.reshape(n, n).T.copy()


def kron_sandwich(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of the map ``rho -> a @ rho @ b.conj().T`` on vectorizations."""
    return np.kron(np.asarray(b).conj(), np.asarray(a))


def matrix_exponential(a, t: float = 1.0) -> np.ndarray:
    """exp(t*a) by scaling-and-squaring (Pade)."""
    m = as_square_matrix(a)
    if not np.isfinite(t):
        raise ValueError("non-finite time in matrix_exponential")
    return scipy.linalg.expm(t * m)


@dataclass(frozen=True)
class Superoperator:
    """A linear map on n x n matrices, stored as its n^2 x n^2 matrix."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        m = as_square_matrix(self.matrix, "superoperator matrix")
        if m.shape[0] != self.dim**2:
            raise ValueError(
                f"superoperator matrix is {m.shape[0]}x{m.shape[0]}, "
                f"expected {self.dim ** 2}x{self.dim ** 2}"
            )
        object.__setattr__(self, "matrix", m)

    def apply(self, m) -> np.ndarray:
        return devectorize(self.matrix @ vectorize(m), self.dim)

    def adjoint(self) -> "Superoperator":
        """Adjoint under the trace pairing Tr(A^dag L(rho))."""
        return Superoperator(self.dim, self.matrix.conj().T)


def kernel_basis(s: Superoperator, tol: float = 1e-10) -> list[np.ndarray]:
    """Devectorized numerical kernel of a superoperator.

    Returns the right singular vectors whose singular values fall below
    ``tol`` times the largest singular value.  A zero map has an n^2
    dimensional kernel; an invertible map returns the empty list.
    """
    _, sv, vh = np.linalg.svd(s.matrix)
    smax = sv[0] if sv.size else 0.0
    if smax == 0.0:
        small = np.ones(s.dim**2, dtype=bool)
    else:
        small = sv < tol * smax
    return [devectorize(vh[i].conj(), s.dim) for i in np.nonzero(small)[0]]


def hermitize_unit_trace(k: np.ndarray, tol: float = HERMITIZE_TRACE_TOL):
    """Phase-rotate, Hermitize and trace-normalize an eigen/kernel vector.

    Returns ``(matrix, ok)``.  When the trace of the Hermitian part is
    numerically zero (relative to the Frobenius norm) no unit-trace
    representative exists; the raw input is returned with ``ok=False``.
    """
    k = np.asarray(k, dtype=complex)
    scale = np.linalg.norm(k)
    if scale == 0.0:
        return k, False
    tr = np.trace(k)
    if abs(tr) > tol * scale:
        k = k * (tr.conjugate() / abs(tr))  # rotate so the trace is real > 0
    h = (k + k.conj().T) / 2
    tr = np.trace(h).real
    if abs(tr) <= tol * scale:
        return k, False
    return h / tr, True


class LeadingEigen(NamedTuple):
    value: float
    vector: np.ndarray
    degenerate: bool
    hermitized: bool


def leading_spectral_abscissa(
    s: Superoperator, degeneracy_tol: float = DEGENERACY_TOL
) -> LeadingEigen:
    """Maximum real part of the spectrum and a matching right eigenvector.

    The eigenvector is devectorized and, when possible, rescaled to a
    Hermitian unit-trace matrix.  ``degenerate`` is set when more than one
    eigenvalue attains the maximal real part within ``degeneracy_tol``.
    """
    w, v = np.linalg.eig(s.matrix)
    order = np.argsort(w.real)[::-1]
    lead = w[order[0]].real
    degenerate = bool(np.sum(w.real >= lead - degeneracy_tol) > 1)
    vec = devectorize(v[:, order[0]], s.dim)
    mat, ok = hermitize_unit_trace(vec)
    return LeadingEigen(float(lead), mat, degenerate, ok)
