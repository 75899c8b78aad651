"""Spectral analysis of the internal-state generator.

Covers the stationary state and its uniqueness, irreducibility of the jump
channels, assembly of the (tilted) generator as a dense superoperator, and
the leading eigenvalue map u -> scgf(u) used by the large-deviation module
(the scaled cumulant generating function of the walker's position).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import linalg
from .linalg import Superoperator, kron_sandwich
from .model import WalkModel, channel_weights, lindblad_apply

__all__ = [
    "lindblad_superoperator",
    "StationaryReport",
    "stationary_state",
    "irreducibility_check",
    "LeadingValue",
    "leading_eigenvalue",
    "DeformationCurve",
    "scgf_gradient",
    "scgf_hessian",
]

KERNEL_TOL = 1e-10
ALGEBRA_RANK_TOL = 1e-10
GRAD_STEP = 1e-4
HESS_STEP = 1e-3


def lindblad_superoperator(model: WalkModel, u=None, adjoint: bool = False) -> Superoperator:
    """n^2 x n^2 matrix of the generator (tilted when ``u`` is given).

    The adjoint variant is the conjugate transpose, i.e. the generator in
    the Heisenberg picture.
    """
    n = model.n
    eye = np.eye(n)
    mat = kron_sandwich(model.d0, eye) + kron_sandwich(eye, model.d0)
    if u is None:
        weights = np.ones(2 * model.d)
    else:
        weights = channel_weights(model, u)
    for w, op in zip(weights, model.jump_ops):
        mat += w * kron_sandwich(op, op)
    if adjoint:
        mat = mat.conj().T
    return Superoperator(n, mat)


@dataclass(frozen=True)
class StationaryReport:
    state: np.ndarray | None
    kernel_dim: int
    unique: bool
    residual: float


def stationary_state(model: WalkModel, tol: float = KERNEL_TOL) -> StationaryReport:
    """Kernel of the generator and, when one-dimensional, the stationary state.

    ``unique`` is True exactly when the numerical kernel has dimension one;
    only then is a Hermitized unit-trace representative reported, and the
    CLT/LDP machinery downstream accepts the model.
    """
    basis = linalg.kernel_basis(lindblad_superoperator(model), tol)
    dim = len(basis)
    if dim != 1:
        return StationaryReport(None, dim, False, float("nan"))
    rho, ok = linalg.hermitize_unit_trace(basis[0])
    if not ok:
        return StationaryReport(None, dim, False, float("nan"))
    residual = float(np.linalg.norm(lindblad_apply(model, rho)))
    return StationaryReport(rho, dim, True, residual)


def irreducibility_check(model: WalkModel, tol: float = ALGEBRA_RANK_TOL):
    """Dimension of the unital algebra generated by the jump operators.

    Starting from the span of {I, D_1, ..., D_2d}, the span is closed under
    left multiplication by each D_r until the dimension stabilizes.  The
    channels act irreducibly (no common invariant subspace) exactly when
    the dimension reaches n^2.  Returns ``(irreducible, algebra_dim)``.
    """
    n = model.n
    full = n * n

    basis: list[np.ndarray] = []

    def try_add(mat: np.ndarray) -> bool:
        v = mat.reshape(-1)
        norm = np.linalg.norm(v)
        if norm <= tol:
            return False
        for b in basis:
            v = v - (b.conj() @ v) * b
        for b in basis:  # second pass for numerical stability
            v = v - (b.conj() @ v) * b
        r = np.linalg.norm(v)
        if r > tol * norm:
            basis.append(v / r)
            return True
        return False

    frontier = [np.eye(n, dtype=complex)] + [op.copy() for op in model.jump_ops]
    frontier = [m for m in frontier if try_add(m)]
    while frontier and len(basis) < full:
        fresh = []
        for m in frontier:
            for op in model.jump_ops:
                cand = op @ m
                if try_add(cand):
                    fresh.append(cand)
                    if len(basis) == full:
                        break
            if len(basis) == full:
                break
        frontier = fresh
    dim = len(basis)
    return dim == full, dim


class LeadingValue(NamedTuple):
    value: float
    vector: np.ndarray
    simple: bool


def leading_eigenvalue(model: WalkModel, u, irreducible: bool | None = None) -> LeadingValue:
    """Leading spectral abscissa of the tilted generator with its eigenmatrix.

    The eigenmatrix is Hermitized and trace-normalized.  ``simple`` is
    False when the leading real part is attained by more than one
    eigenvalue.  For irreducible channels the eigenmatrix must be strictly
    positive; that is asserted when irreducibility is known or detected.
    """
    lead = linalg.leading_spectral_abscissa(lindblad_superoperator(model, u))
    simple = not lead.degenerate
    if irreducible is None:
        irreducible, _ = irreducibility_check(model)
    if irreducible and simple and lead.hermitized:
        lo = np.linalg.eigvalsh(lead.vector).min()
        if lo <= 0:
            raise ArithmeticError(
                f"leading eigenmatrix not strictly positive (min eigenvalue {lo:.3e}) "
                "despite irreducible channels"
            )
    return LeadingValue(lead.value, lead.vector, simple)


def _leading_value_only(model: WalkModel, u) -> float:
    mat = lindblad_superoperator(model, u).matrix
    return float(np.linalg.eigvals(mat).real.max())


@dataclass
class DeformationCurve:
    """Evaluator of the scaled cumulant generating function u -> scgf(u).

    Caches point evaluations; the gradient at 0 is the drift and the
    Hessian at 0 is the CLT covariance, which the tests cross-check.
    """

    model: WalkModel
    _cache: dict = field(default_factory=dict, repr=False)

    def value(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        key = tuple(u.tolist())
        got = self._cache.get(key)
        if got is None:
            got = _leading_value_only(self.model, u)
            self._cache[key] = got
        return got

    def __call__(self, u) -> float:
        return self.value(u)

    def sample(self, grid) -> np.ndarray:
        """Rows (u_1, ..., u_d, scgf) for each grid point."""
        rows = []
        for u in grid:
            u = np.atleast_1d(np.asarray(u, dtype=float))
            rows.append(np.concatenate([u, [self.value(u)]]))
        return np.asarray(rows)


def scgf_gradient(curve: DeformationCurve, u, step: float = GRAD_STEP) -> np.ndarray:
    """Central finite-difference gradient of the leading eigenvalue."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    g = np.zeros_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = step
        g[i] = (curve.value(u + e) - curve.value(u - e)) / (2 * step)
    return g


def scgf_hessian(curve: DeformationCurve, u, step: float = HESS_STEP) -> np.ndarray:
    """Central finite-difference Hessian of the leading eigenvalue."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    d = u.size
    h = np.zeros((d, d))
    f0 = curve.value(u)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        h[i, i] = (curve.value(u + ei) - 2 * f0 + curve.value(u - ei)) / step**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step
            h[i, j] = (
                curve.value(u + ei + ej)
                - curve.value(u + ei - ej)
                - curve.value(u - ei + ej)
                + curve.value(u - ei - ej)
            ) / (4 * step**2)
            h[j, i] = h[i, j]
    return h
