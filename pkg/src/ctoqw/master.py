"""Site-wise master-equation integration on a growing lattice window.

The walk state is a finite-support assignment of positive matrices to
lattice sites.  Each site obeys the coupled ODE

    d rho(i)/dt = d0 rho(i) + rho(i) d0^dag + sum_r D_r rho(i - e_r) D_r^dag

integrated with fixed-step RK4.  The support is enlarged by its
nearest-neighbor hull before every step and sites whose trace falls below
``prune_threshold`` are removed afterwards; pruned mass is tracked in
``leaked_mass`` and never silently renormalized.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import WalkModel, max_rate

__all__ = [
    "LatticeState",
    "PositionDistribution",
    "default_dt",
    "evolve",
    "site_distribution",
    "distribution_moments",
]

log = logging.getLogger(__name__)

PRUNE_THRESHOLD = 1e-14
NEGATIVITY_ERROR = 1e-8
WEIGHT_CLAMP = 1e-12

Site = tuple[int, ...]


@dataclass
class LatticeState:
    """Finite-support lattice state: site -> internal matrix."""

    d: int
    sites: dict[Site, np.ndarray]
    leaked_mass: float = 0.0
    time: float = 0.0
    clamp_deviation: float = 0.0

    @classmethod
    def localized(cls, d: int, site, rho) -> "LatticeState":
        rho = np.asarray(rho, dtype=complex)
        site = tuple(int(c) for c in np.atleast_1d(site))
        if len(site) != d:
            raise ValueError(f"site {site} does not live on Z^{d}")
        return cls(d=d, sites={site: rho.copy()})

    def total_mass(self) -> float:
        return float(sum(np.trace(m).real for m in self.sites.values()))


@dataclass
class PositionDistribution:
    d: int
    weights: dict[Site, float]
    leaked_mass: float = 0.0
    time: float = 0.0

    def total(self) -> float:
        return float(sum(self.weights.values()))


def default_dt(model: WalkModel) -> float:
    """1e-3 * min(1, 1/maxrate); the generator is bounded, so fixed step."""
    rate = max_rate(model)
    return 1e-3 * min(1.0, 1.0 / rate) if rate > 0 else 1e-3


def evolve(
    model: WalkModel,
    state: LatticeState,
    t: float,
    dt: float | None = None,
    prune_threshold: float = PRUNE_THRESHOLD,
) -> LatticeState:
    """Advance a lattice state by time ``t`` with fixed-step RK4.

    Returns a new state; the input is untouched.  Raises on non-finite
    values (step too large) and on site eigenvalues below -1e-8
    (instability); eigenvalues in [-1e-8, 0) are clamped to zero and the
    accumulated deviation is recorded on the returned state.
    """
    if t < 0:
        raise ValueError("cannot evolve backwards in time")
    if dt is None:
        dt = default_dt(model)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.d != model.d:
        raise ValueError(f"state lives on Z^{state.d}, model on Z^{model.d}")

    n = model.n
    coords = sorted(state.sites)
    rho = np.stack([state.sites[c] for c in coords]) if coords else np.zeros((0, n, n), complex)
    leaked = state.leaked_mass
    clamp_dev = state.clamp_deviation

    disps = [tuple(int(v) for v in e) for e in model.displacements()]
    d0 = model.d0
    d0h = d0.conj().T
    ops = [np.ascontiguousarray(op) for op in model.jump_ops]
    ops_conj = [op.conj() for op in ops]

    def rhs(p: np.ndarray, nbr: np.ndarray) -> np.ndarray:
        out = np.einsum("ab,sbc->sac", d0, p) + np.einsum("sab,bc->sac", p, d0h)
        for r, (op, opc) in enumerate(zip(ops, ops_conj)):
            src = nbr[:, r]
            mask = src >= 0
            shifted = np.where(mask[:, None, None], p[np.clip(src, 0, None)], 0.0)
            out += np.einsum("ab,sbc,dc->sad", op, shifted, opc)
        return out

    n_full, rem = divmod(t, dt)
    steps = [dt] * int(round(n_full)) + ([rem] if rem > 1e-15 * max(t, 1.0) else [])

    for h in steps:
        # grow support by four jumps: one RK4 step applies the generator
        # four times, so shallower windows shed multi-jump mass
        grown = set(coords)
        frontier = set(coords)
        for _ in range(4):
            fresh = set()
            for c in frontier:
                for e in disps:
                    site = tuple(a + b for a, b in zip(c, e))
                    if site not in grown:
                        fresh.add(site)
            grown |= fresh
            frontier = fresh
        new_coords = sorted(grown)
        index = {c: i for i, c in enumerate(new_coords)}
        new_rho = np.zeros((len(new_coords), n, n), dtype=complex)
        for i, c in enumerate(coords):
            new_rho[index[c]] = rho[i]
        coords, rho = new_coords, new_rho
        nbr = np.full((len(coords), len(disps)), -1, dtype=np.int64)
        for i, c in enumerate(coords):
            for r, e in enumerate(disps):
                nbr[i, r] = index.get(tuple(a - b for a, b in zip(c, e)), -1)

        k1 = rhs(rho, nbr)
        k2 = rhs(rho + (h / 2) * k1, nbr)
        k3 = rhs(rho + (h / 2) * k2, nbr)
        k4 = rhs(rho + h * k3, nbr)
        rho = rho + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

        if not np.all(np.isfinite(rho)):
            raise FloatingPointError("non-finite site matrix: reduce dt")

        rho = (rho + np.conj(np.transpose(rho, (0, 2, 1)))) / 2
        eigs = np.linalg.eigvalsh(rho)
        lo = float(eigs.min()) if eigs.size else 0.0
        if lo < -NEGATIVITY_ERROR:
            raise FloatingPointError(
                f"site eigenvalue {lo:.3e} below -{NEGATIVITY_ERROR:.0e}: integration unstable"
            )
        if lo < 0.0:
            bad = np.nonzero(eigs.min(axis=1) < 0.0)[0]
            for i in bad:
                w, v = np.linalg.eigh(rho[i])
                clamp_dev += float(-w[w < 0].sum())
                w = np.clip(w, 0.0, None)
                rho[i] = (v * w) @ v.conj().T
            log.debug("clamped %d site(s), total deviation %.3e", len(bad), clamp_dev)

        traces = np.einsum("sii->s", rho).real
        keep = traces >= prune_threshold
        leaked = max(leaked + float(traces[~keep].sum()), 0.0)
        coords = [c for c, k in zip(coords, keep) if k]
        rho = rho[keep]

    out = LatticeState(
        d=state.d,
        sites={c: rho[i].copy() for i, c in enumerate(coords)},
        leaked_mass=leaked,
        time=state.time + t,
        clamp_deviation=clamp_dev,
    )
    return out


def site_distribution(state: LatticeState) -> PositionDistribution:
    """Position probabilities weight(i) = Tr rho(i)."""
    weights: dict[Site, float] = {}
    for c, m in sorted(state.sites.items()):
        w = float(np.trace(m).real)
        if w < -WEIGHT_CLAMP:
            raise ValueError(f"negative site weight {w:.3e} at {c}")
        weights[c] = max(w, 0.0)
    return PositionDistribution(
        d=state.d, weights=weights, leaked_mass=state.leaked_mass, time=state.time
    )


def distribution_moments(q: PositionDistribution):
    """Mean and central covariance of the normalized site distribution."""
    if not q.weights:
        raise ValueError("empty distribution")
    pts = np.array(list(q.weights.keys()), dtype=float)
    w = np.array(list(q.weights.values()), dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValueError("distribution has no mass")
    w = w / total
    mean = w @ pts
    centered = pts - mean
    cov = (centered * w[:, None]).T @ centered
    return mean, cov
