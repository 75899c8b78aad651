"""Limit-theorem parameters: drift, CLT covariance, and the rate function.

The drift is the stationary mean displacement rate.  The covariance of the
central limit theorem is assembled from the trace-zero solutions of the
Poisson equation for the process generator, one per lattice direction.
The large-deviation rate function is the Legendre transform of the scaled
cumulant generating function u -> scgf(u) provided by the spectral module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from . import trajectory
from .linalg import vectorize, devectorize
from .model import WalkModel, lindblad_adjoint_apply
from .spectral import (
    DeformationCurve,
    irreducibility_check,
    scgf_gradient,
    scgf_hessian,
    stationary_state,
    lindblad_superoperator,
)

__all__ = [
    "CltReport",
    "mean_drift",
    "solve_poisson",
    "variance_matrix",
    "clt_report",
    "RateValue",
    "rate_function",
    "RateFunctionSamples",
    "rate_function_samples",
    "GaussianCheckpoint",
    "gaussian_comparison",
    "ks_distance_to_normal",
    "LdpEstimate",
    "LdpReport",
    "empirical_ldp",
]

POISSON_RESIDUAL_TOL = 1e-9
GRAD_TOL = 1e-8
DIVERGENCE_BOUND = 50.0
MAX_ASCENT_ITER = 200
NEGATIVE_CLAMP = 1e-9
STEP_CAP = 10.0  # keeps exp(u . e_r) finite until the divergence gate fires


def mean_drift(model: WalkModel, rho_inv) -> np.ndarray:
    """Stationary displacement rate: sum_r Tr(D_r rho D_r^dag) e_r."""
    rho_inv = np.asarray(rho_inv, dtype=complex)
    disps = model.displacements()
    drift = np.zeros(model.d)
    for op, e in zip(model.jump_ops, disps):
        drift += np.trace(op @ rho_inv @ op.conj().T).real * e
    return drift


def solve_poisson(model: WalkModel, rho_inv, drift) -> list[np.ndarray]:
    """Trace-zero Hermitian solutions J_q of the direction-wise equations

        adjoint_generator(J_q) = -(D_q^dag D_q - D_{q+d}^dag D_{q+d} - drift_q I).

    A minimum-norm least-squares solve is projected onto the trace-zero
    representative; the residual must stay below 1e-9.
    """
    n = model.n
    eye = np.eye(n)
    disps = model.displacements()
    adj = lindblad_superoperator(model, adjoint=True).matrix
    out = []
    for q in range(model.d):
        rhs = drift[q] * eye.astype(complex)
        for op, e in zip(model.jump_ops, disps):
            rhs -= e[q] * (op.conj().T @ op)
        sol, *_ = np.linalg.lstsq(adj, vectorize(rhs), rcond=None)
        j = devectorize(sol, n)
        j = (j + j.conj().T) / 2
        j = j - (np.trace(j) / n) * eye
        residual = float(np.linalg.norm(lindblad_adjoint_apply(model, j) - rhs))
        if residual > POISSON_RESIDUAL_TOL:
            raise ArithmeticError(
                f"Poisson equation residual {residual:.3e} in direction {q + 1}: "
                "stationary state not unique or system ill-conditioned"
            )
        out.append(j)
    return out


def variance_matrix(model: WalkModel, rho_inv, drift, poisson) -> np.ndarray:
    """CLT covariance assembled from the stationary state and J matrices."""
    d = model.d
    rho_inv = np.asarray(rho_inv, dtype=complex)
    w = [op @ rho_inv @ op.conj().T for op in model.jump_ops]
    v = np.zeros((d, d))
    for r in range(d):
        for q in range(d):
            val = -drift[q] * np.trace(rho_inv @ poisson[r]) - drift[r] * np.trace(
                rho_inv @ poisson[q]
            )
            if r == q:
                val += np.trace(w[r]) + np.trace(w[r + d])
            val += np.trace(w[q] @ poisson[r]) + np.trace(w[r] @ poisson[q])
            val -= np.trace(w[q + d] @ poisson[r]) + np.trace(w[r + d] @ poisson[q])
            v[r, q] = val.real
    return (v + v.T) / 2


@dataclass(frozen=True)
class CltReport:
    drift: np.ndarray  # (d,)
    poisson: tuple[np.ndarray, ...]  # d trace-zero Hermitian matrices
    covariance: np.ndarray  # (d, d)
    residuals: np.ndarray  # (d,) Poisson-equation residual norms
    stationary: np.ndarray  # (n, n)


def clt_report(model: WalkModel) -> CltReport:
    """Full analytic CLT data; requires a unique stationary state."""
    rep = stationary_state(model)
    if not rep.unique:
        raise ArithmeticError(
            f"stationary state is not unique (kernel dimension {rep.kernel_dim}); "
            "CLT quantities are undefined"
        )
    drift = mean_drift(model, rep.state)
    poisson = solve_poisson(model, rep.state, drift)
    residuals = np.array(
        [
            np.linalg.norm(
                lindblad_adjoint_apply(model, j) - _poisson_rhs(model, drift, q)
            )
            for q, j in enumerate(poisson)
        ]
    )
    cov = variance_matrix(model, rep.state, drift, poisson)
    return CltReport(
        drift=drift,
        poisson=tuple(poisson),
        covariance=cov,
        residuals=residuals,
        stationary=rep.state,
    )


def _poisson_rhs(model: WalkModel, drift, q: int) -> np.ndarray:
    rhs = drift[q] * np.eye(model.n, dtype=complex)
    for op, e in zip(model.jump_ops, model.displacements()):
        rhs -= e[q] * (op.conj().T @ op)
    return rhs


class RateValue(NamedTuple):
    value: float
    maximizer: np.ndarray | None
    converged: bool


def rate_function(
    model: WalkModel,
    x,
    *,
    curve: DeformationCurve | None = None,
    irreducible: bool | None = None,
    u0=None,
    grad_tol: float = GRAD_TOL,
    max_iter: int = MAX_ASCENT_ITER,
    divergence_bound: float = DIVERGENCE_BOUND,
) -> RateValue:
    """Legendre transform sup_u (u.x - scgf(u)) by safeguarded Newton ascent.

    The objective is smooth and concave, so damped Newton steps with
    finite-difference derivatives converge from u = 0.  When the iterate
    norm exceeds ``divergence_bound`` the point lies outside the effective
    domain and the value is +inf.  Values in (-1e-9, 0) are clamped to 0
    (roundoff around the minimum at the drift).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.d,):
        raise ValueError(f"point must have shape ({model.d},)")
    if curve is None:
        curve = DeformationCurve(model)
    if irreducible is None:
        irreducible, _ = irreducibility_check(model)
    if not irreducible:
        raise ArithmeticError("rate function requires irreducible jump channels")

    u = np.zeros(model.d) if u0 is None else np.atleast_1d(np.asarray(u0, dtype=float)).copy()

    def objective(p) -> float:
        return float(x @ p - curve.value(p))

    f_cur = objective(u)
    converged = False
    for _ in range(max_iter):
        if np.linalg.norm(u) > divergence_bound:
            return RateValue(math.inf, None, True)
        grad = x - scgf_gradient(curve, u)
        if np.linalg.norm(grad) <= grad_tol:
            converged = True
            break
        hess = scgf_hessian(curve, u)
        step = None
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            pass
        if step is None or not np.all(np.isfinite(step)) or grad @ step <= 0:
            scale = max(float(np.abs(np.diag(hess)).max()), 1.0)
            step = grad / scale
        step_norm = float(np.linalg.norm(step))
        if step_norm > STEP_CAP:
            step = step * (STEP_CAP / step_norm)
        scale = 1.0
        while scale > 1e-8:
            cand = u + scale * step
            f_new = objective(cand)
            if f_new > f_cur or (f_new == f_cur and scale == 1.0):
                u, f_cur = cand, f_new
                break
            scale /= 2
        else:
            if model.d == 1:
                u, f_cur = _bisect_gradient_1d(curve, x, u), None
                f_cur = objective(u)
                converged = True
                break
            converged = False
            break

    value = objective(u)
    if -NEGATIVE_CLAMP < value < 0.0:
        value = 0.0
    return RateValue(value, u, converged)


def _bisect_gradient_1d(curve: DeformationCurve, x, u_start) -> np.ndarray:
    """Bisection on the scalar gradient x - scgf'(u); ascent safeguard."""

    def g(p: float) -> float:
        return float(x[0] - scgf_gradient(curve, np.array([p]))[0])

    lo = hi = float(u_start[0])
    width = 1.0
    while g(lo) < 0 and lo > -DIVERGENCE_BOUND:
        lo -= width
        width *= 2
    width = 1.0
    while g(hi) > 0 and hi < DIVERGENCE_BOUND:
        hi += width
        width *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return np.array([(lo + hi) / 2])


@dataclass(frozen=True)
class RateFunctionSamples:
    points: np.ndarray  # (k, d)
    values: np.ndarray  # (k,)
    maximizers: np.ndarray  # (k, d), nan where the value is +inf
    converged: np.ndarray  # (k,) bool


def rate_function_samples(model: WalkModel, points, **kwargs) -> RateFunctionSamples:
    """Rate function on a grid, warm-starting the ascent point to point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    curve = kwargs.pop("curve", None) or DeformationCurve(model)
    irreducible, _ = irreducibility_check(model)
    values = np.empty(pts.shape[0])
    maximizers = np.full_like(pts, np.nan)
    flags = np.zeros(pts.shape[0], dtype=bool)
    u0 = None
    for i, x in enumerate(pts):
        res = rate_function(model, x, curve=curve, irreducible=irreducible, u0=u0, **kwargs)
        values[i] = res.value
        flags[i] = res.converged
        if res.maximizer is not None and np.all(np.isfinite(res.maximizer)):
            maximizers[i] = res.maximizer
            u0 = res.maximizer
        else:
            u0 = None
    return RateFunctionSamples(pts, values, maximizers, flags)


def ks_distance_to_normal(values, weights, sigma2: float) -> float:
    """KS distance between a weighted empirical law and N(0, sigma2)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values)
    values, weights = values[order], weights[order]
    total = weights.sum()
    if total <= 0:
        raise ValueError("empty sample")
    cdf_hi = np.cumsum(weights) / total
    cdf_lo = cdf_hi - weights / total
    if sigma2 <= 0:
        # degenerate reference: point mass at 0
        ref = (values >= 0).astype(float)
    else:
        ref = norm.cdf(values / math.sqrt(sigma2))
    return float(np.max(np.maximum(np.abs(cdf_hi - ref), np.abs(cdf_lo - ref))))


@dataclass(frozen=True)
class GaussianCheckpoint:
    time: float
    ks: np.ndarray  # (d,) per-component KS distances
    covariance_rel_err: float
    empirical_cov: np.ndarray  # (d, d), of (X_t - drift t)/sqrt(t)


def gaussian_comparison(
    stats: trajectory.EnsembleStats, drift, covariance
) -> list[GaussianCheckpoint]:
    """Compare checkpoint laws of (X_t - drift t)/sqrt(t) to N(0, covariance).

    Per checkpoint and component, the exact KS distance of the standardized
    empirical law against the Gaussian marginal; plus the relative error of
    the empirical covariance of X_t/sqrt(t) against the CLT covariance.
    """
    drift = np.atleast_1d(np.asarray(drift, dtype=float))
    covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
    d = drift.size
    out = []
    for c, t in enumerate(stats.checkpoints):
        if t <= 0:
            continue
        counts = stats.counts[c]
        sites = np.array(list(counts.keys()), dtype=float).reshape(len(counts), d)
        weights = np.array(list(counts.values()), dtype=float)
        ks = np.empty(d)
        for i in range(d):
            standardized = (sites[:, i] - drift[i] * t) / math.sqrt(t)
            ks[i] = ks_distance_to_normal(standardized, weights, covariance[i, i])
        emp = stats.covariance[c] / t
        rel = float(np.linalg.norm(emp - covariance) / np.linalg.norm(covariance))
        out.append(GaussianCheckpoint(float(t), ks, rel, emp))
    return out


@dataclass(frozen=True)
class LdpEstimate:
    time: float
    hits: int
    n_paths: int
    rate: float | None  # -(1/t) log frequency; None when no hits
    rate_lower_bound: float  # -(1/t) log(1/N), the resolution floor


@dataclass(frozen=True)
class LdpReport:
    estimates: tuple[LdpEstimate, ...]
    rate_infimum: float  # inf of the rate function over the target set grid
    grid: np.ndarray
    grid_values: np.ndarray


def empirical_ldp(
    model: WalkModel,
    lower,
    upper,
    t_list,
    n_paths: int,
    root_seed: int,
    *,
    init=None,
    grid_points: int = 41,
    threads: int = 1,
    backend: str | None = None,
) -> LdpReport:
    """Empirical decay-rate estimates of P(X_t / t in [lower, upper]).

    For each horizon the hit frequency of the box is converted to a decay
    rate; alongside, the rate function is minimized over a grid on the box
    (clipped to drift +- 3 per axis).  Runs for different horizons use
    root seeds root_seed, root_seed + 1, ... so their path streams never
    collide.
    """
    lower = np.where(np.isfinite(lower), lower, -np.inf) if lower is not None else np.full(model.d, -np.inf)
    upper = np.where(np.isfinite(upper), upper, np.inf) if upper is not None else np.full(model.d, np.inf)
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if init is None:
        init = (np.eye(model.n, dtype=complex) / model.n, np.zeros(model.d, dtype=np.int64))

    report = clt_report(model)
    axes = []
    for i in range(model.d):
        lo = max(lower[i], report.drift[i] - 3.0)
        hi = min(upper[i], report.drift[i] + 3.0)
        if hi < lo:
            lo, hi = lower[i], lower[i]
        axes.append(np.linspace(lo, hi, grid_points))
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    samples = rate_function_samples(model, grid)
    finite = np.isfinite(samples.values)
    rate_inf = float(samples.values[finite].min()) if finite.any() else math.inf

    estimates = []
    for k, t in enumerate(t_list):
        stats = trajectory.run_ensemble(
            model,
            init,
            float(t),
            [float(t)],
            n_paths,
            root_seed + k,
            threads=threads,
            backend=backend,
        )
        hits = 0
        for site, cnt in stats.counts[0].items():
            scaled = np.asarray(site, dtype=float) / t
            if np.all(scaled >= lower) and np.all(scaled <= upper):
                hits += cnt
        rate = -math.log(hits / n_paths) / t if hits > 0 else None
        estimates.append(
            LdpEstimate(
                time=float(t),
                hits=hits,
                n_paths=n_paths,
                rate=rate,
                rate_lower_bound=math.log(n_paths) / t,
            )
        )
    return LdpReport(tuple(estimates), rate_inf, grid, samples.values)
