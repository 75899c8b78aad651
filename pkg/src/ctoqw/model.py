"""Walk models: lattice dimension, Hamiltonian and jump operators.

A model on Z^d carries 2d jump operators in the fixed channel order
(+e_1, ..., +e_d, -e_1, ..., -e_d); channels are labeled 1..2d.  The
no-jump operator is derived as ``d0 = -iH - (1/2) sum_r D_r^dag D_r`` and
satisfies the identity ``d0 + d0^dag + sum_r D_r^dag D_r = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import as_square_matrix, is_hermitian

__all__ = [
    "WalkModel",
    "build_model",
    "model_from_d0",
    "lindblad_apply",
    "lindblad_adjoint_apply",
    "deformed_apply",
    "channel_weights",
    "total_rate_operator",
    "max_rate",
]

HERMITICITY_TOL = 1e-12
LINDBLAD_IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class WalkModel:
    d: int
    hamiltonian: np.ndarray
    jump_ops: tuple[np.ndarray, ...]
    d0: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.d0.shape[0]

    def displacement(self, channel: int) -> np.ndarray:
        """Lattice step of a channel (1-based, channels 1..2d)."""
        if not 1 <= channel <= 2 * self.d:
            raise ValueError(f"channel {channel} outside 1..{2 * self.d}")
        e = np.zeros(self.d, dtype=np.int64)
        if channel <= self.d:
            e[channel - 1] = 1
        else:
            e[channel - self.d - 1] = -1
        return e

    def displacements(self) -> np.ndarray:
        """(2d, d) array of all channel steps in channel order."""
        return np.stack([self.displacement(r) for r in range(1, 2 * self.d + 1)])


def _validate_ops(d: int, jump_ops) -> tuple[np.ndarray, ...]:
    if d < 1:
        raise ValueError(f"lattice dimension must be >= 1, got {d}")
    ops = tuple(as_square_matrix(op, f"jump operator {i + 1}") for i, op in enumerate(jump_ops))
    if len(ops) != 2 * d:
        raise ValueError(f"expected {2 * d} jump operators for d={d}, got {len(ops)}")
    n = ops[0].shape[0]
    for i, op in enumerate(ops):
        if op.shape[0] != n:
            raise ValueError(f"jump operator {i + 1} is {op.shape[0]}x{op.shape[0]}, expected {n}x{n}")
    return ops


def build_model(d: int, hamiltonian, jump_ops) -> WalkModel:
    """Build a model from its Hamiltonian and jump operators."""
    ops = _validate_ops(d, jump_ops)
    h = as_square_matrix(hamiltonian, "hamiltonian")
    if h.shape[0] != ops[0].shape[0]:
        raise ValueError("hamiltonian and jump operators have mismatched sizes")
    if not is_hermitian(h, HERMITICITY_TOL):
        raise ValueError("hamiltonian is not Hermitian within 1e-12")
    gram = sum(op.conj().T @ op for op in ops)
    d0 = -1j * h - 0.5 * gram
    return WalkModel(d=d, hamiltonian=h, jump_ops=ops, d0=d0)


def model_from_d0(d: int, d0, jump_ops) -> WalkModel:
    """Build a model from a directly supplied no-jump operator.

    The skew part of ``d0`` determines the Hamiltonian; the Hermitian part
    must cancel the jump-operator Gram sum within 1e-12.
    """
    ops = _validate_ops(d, jump_ops)
    d0 = as_square_matrix(d0, "d0")
    if d0.shape[0] != ops[0].shape[0]:
        raise ValueError("d0 and jump operators have mismatched sizes")
    gram = sum(op.conj().T @ op for op in ops)
    residual = np.linalg.norm(d0 + d0.conj().T + gram)
    if residual > LINDBLAD_IDENTITY_TOL:
        raise ValueError(
            f"trace-preservation identity violated: ||d0 + d0^dag + sum D^dag D|| = {residual:.3e}"
        )
    h = 1j * (d0 - d0.conj().T) / 2
    return WalkModel(d=d, hamiltonian=h, jump_ops=ops, d0=d0)


def lindblad_apply(model: WalkModel, rho) -> np.ndarray:
    """d0 rho + rho d0^dag + sum_r D_r rho D_r^dag."""
    rho = _check_state_shape(model, rho)
    out = model.d0 @ rho + rho @ model.d0.conj().T
    for op in model.jump_ops:
        out += op @ rho @ op.conj().T
    return out


def lindblad_adjoint_apply(model: WalkModel, a) -> np.ndarray:
    """Adjoint under the trace pairing: d0^dag a + a d0 + sum_r D_r^dag a D_r."""
    a = _check_state_shape(model, a)
    out = model.d0.conj().T @ a + a @ model.d0
    for op in model.jump_ops:
        out += op.conj().T @ a @ op
    return out


def deformed_apply(model: WalkModel, u, rho) -> np.ndarray:
    """Tilted generator: channel r reweighted by exp(u . e_r)."""
    rho = _check_state_shape(model, rho)
    w = channel_weights(model, u)
    out = model.d0 @ rho + rho @ model.d0.conj().T
    for wr, op in zip(w, model.jump_ops):
        out += wr * (op @ rho @ op.conj().T)
    return out


def channel_weights(model: WalkModel, u) -> np.ndarray:
    """exp(u . e_r) for each channel, in channel order."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (model.d,):
        raise ValueError(f"tilt parameter must have shape ({model.d},), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("tilt parameter contains non-finite entries")
    return np.exp(model.displacements() @ u)


def total_rate_operator(model: WalkModel) -> np.ndarray:
    """sum_r D_r^dag D_r; its expectation in a state is the total jump rate."""
    return sum(op.conj().T @ op for op in model.jump_ops)


def max_rate(model: WalkModel) -> float:
    """Sum of spectral norms of D_r^dag D_r, an upper bound on the jump rate."""
    return float(sum(np.linalg.norm(op.conj().T @ op, 2) for op in model.jump_ops))


def _check_state_shape(model: WalkModel, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (model.n, model.n):
        raise ValueError(f"expected a {model.n}x{model.n} matrix, got shape {rho.shape}")
    return rho
