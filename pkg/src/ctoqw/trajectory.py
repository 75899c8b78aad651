"""Exact sampling of the quantum-trajectory jump process and ensembles.

The walker state is a pair (internal density matrix, lattice position).
Between jumps the unnormalized internal state follows the deterministic
flow generated by d0; its trace is the survival probability, so jump times
are sampled exactly by inverting the survival against a uniform draw.
Jumps pick a channel with probability proportional to Tr(D_r rho D_r^dag),
update rho -> D_r rho D_r^dag / Tr(...) and move the walker by e_r.

Per-path randomness is derived counter-based: path ``i`` of a run seeded
with ``root_seed`` consumes uniforms from ``Philox(key=(root_seed, i))``,
so ensembles are reproducible bit for bit regardless of worker count.

The inner loop runs in the compiled extension ``ctoqw._pathkernel`` when
available and otherwise falls back to the pure-Python kernel; set
``CTOQW_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.random import Generator, Philox

from . import _pathkernel_py
from .master import LatticeState
from .model import WalkModel, max_rate, total_rate_operator

__all__ = [
    "JumpEvent",
    "TrajectoryPath",
    "EnsembleStats",
    "backend",
    "available_backends",
    "sample_jump_time",
    "select_channel",
    "apply_jump",
    "sample_path",
    "replay_path",
    "run_ensemble",
]

LADDER_LEVELS = 49
TIME_TOL = 5e-13
BRACKET_FACTOR = 0.1
DEFAULT_JUMP_CAP = 1e6
AGGREGATION_CHUNK = 64
_STALL_LIMIT = 64


def _load_compiled():
    try:
        from . import _pathkernel  # noqa: PLC0415

        return _pathkernel
    except ImportError:
        return None


_COMPILED = None if os.environ.get("CTOQW_PURE_PYTHON") else _load_compiled()


def backend() -> str:
    """Name of the kernel used by default: 'cython' or 'python'."""
    return "cython" if _COMPILED is not None else "python"


def available_backends() -> tuple[str, ...]:
    return ("cython", "python") if _load_compiled() is not None else ("python",)


def _kernel(name: str | None):
    if name is None:
        return _COMPILED if _COMPILED is not None else _pathkernel_py
    if name == "python":
        return _pathkernel_py
    if name == "cython":
        compiled = _load_compiled()
        if compiled is None:
            raise RuntimeError("compiled kernel requested but not built")
        return compiled
    raise ValueError(f"unknown backend {name!r}")


def _path_generator(root_seed: int, index: int) -> Generator:
    if not 0 <= root_seed < 2**64:
        raise ValueError(f"root seed must fit in uint64, got {root_seed}")
    key = np.array([root_seed, index], dtype=np.uint64)
    return Generator(Philox(key=key))


class _PathContext:
    """Per-model precomputation shared by every path of a run."""

    def __init__(self, model: WalkModel, bracket_dt: float | None, t_max: float):
        rate = max_rate(model)
        if bracket_dt is None:
            bracket_dt = BRACKET_FACTOR / rate if rate > 0 else max(t_max, 1.0)
        if bracket_dt <= 0:
            raise ValueError("bracket_dt must be positive")
        self.model = model
        self.bracket_dt = float(bracket_dt)
        self.ladder = np.ascontiguousarray(
            [
                scipy.linalg.expm(model.d0 * (self.bracket_dt * 2.0**-m))
                for m in range(LADDER_LEVELS)
            ],
            dtype=complex,
        )
        self.jump_ops = np.ascontiguousarray(np.stack(model.jump_ops), dtype=complex)
        self.disps = np.ascontiguousarray(model.displacements(), dtype=np.int64)
        self.rate_op = np.ascontiguousarray(total_rate_operator(model), dtype=complex)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    channel: int  # 1..2d
    position: np.ndarray  # post-jump, (d,)
    state: np.ndarray  # post-jump, (n, n)


@dataclass(frozen=True)
class TrajectoryPath:
    initial_state: np.ndarray
    initial_position: np.ndarray
    events: tuple[JumpEvent, ...]
    final_time: float
    final_state: np.ndarray
    final_position: np.ndarray
    occupation_average: np.ndarray
    absorbed: bool


@dataclass(frozen=True)
class EnsembleStats:
    """Per-checkpoint position statistics pooled over independent paths."""

    sample_count: int
    t_max: float
    checkpoints: np.ndarray
    counts: tuple[dict[tuple[int, ...], int], ...]
    mean: np.ndarray  # (C, d)
    covariance: np.ndarray  # (C, d, d)
    pooled_state: np.ndarray  # (n, n) time-averaged internal state
    channel_jumps: np.ndarray  # (2d,)
    absorbed_paths: int

    @property
    def histograms(self) -> tuple[dict[tuple[int, ...], float], ...]:
        """Checkpoint histograms as frequencies (masses sum to one)."""
        return tuple(
            {site: c / self.sample_count for site, c in counts.items()} for counts in self.counts
        )


def _check_density(model: WalkModel, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (model.n, model.n):
        raise ValueError(f"state must be {model.n}x{model.n}, got {rho.shape}")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > 1e-9:
        raise ValueError(f"state trace is {tr}, expected 1")
    return rho


def sample_jump_time(
    model: WalkModel,
    rho,
    u: float,
    t_cap: float = DEFAULT_JUMP_CAP,
    bracket_dt: float | None = None,
    time_tol: float = TIME_TOL,
):
    """First time the no-jump survival probability falls to ``u``.

    Returns ``(tau, rho_pre)`` where ``rho_pre`` is the normalized state at
    ``tau``.  When survival stays above ``u`` up to ``t_cap`` (or stalls on
    an absorbing state) the outcome is ``(inf, state at cap)``.
    """
    if not 0.0 < u < 1.0:
        raise ValueError(f"survival target must be in (0, 1), got {u}")
    rho = _check_density(model, rho)
    ctx = _PathContext(model, bracket_dt, t_cap if math.isfinite(t_cap) else 1.0)
    k = _pathkernel_py
    sigma = rho.copy()
    surv = k.trace_real(sigma)
    t_node = 0.0
    stalled = 0
    while True:
        if t_node >= t_cap:
            return math.inf, sigma / surv
        step = min(ctx.bracket_dt, t_cap - t_node)
        if step < ctx.bracket_dt:
            f = k.compose_fraction(ctx.ladder, step / ctx.bracket_dt)
            sig_next = f @ sigma @ f.conj().T
        else:
            sig_next = ctx.ladder[0] @ sigma @ ctx.ladder[0].conj().T
        s_next = k.trace_real(sig_next)
        if s_next <= u:
            tau_local, f_lo = k.bisect_jump(ctx.ladder, ctx.bracket_dt, sigma, u, time_tol)
            sig_tau = f_lo @ sigma @ f_lo.conj().T
            return t_node + tau_local, sig_tau / k.trace_real(sig_tau)
        stalled = stalled + 1 if s_next >= surv * (1.0 - 1e-15) else 0
        if stalled >= _STALL_LIMIT and np.trace(ctx.rate_op @ sig_next).real <= 1e-14 * s_next:
            return math.inf, sig_next / s_next
        sigma, surv = sig_next, s_next
        t_node += step


def select_channel(model: WalkModel, rho_pre, v: float) -> int:
    """Jump channel (1..2d) by cumulative inversion of the channel rates."""
    if not 0.0 < v < 1.0:
        raise ValueError(f"selection draw must be in (0, 1), got {v}")
    rho_pre = _check_density(model, rho_pre)
    ops = np.stack(model.jump_ops)
    rates = _pathkernel_py.channel_rates(ops, rho_pre)
    return _pathkernel_py.pick_channel(rates, v) + 1


def apply_jump(model: WalkModel, rho_pre, channel: int) -> np.ndarray:
    """Post-jump state D_r rho D_r^dag / Tr(D_r rho D_r^dag)."""
    rho_pre = _check_density(model, rho_pre)
    if not 1 <= channel <= 2 * model.d:
        raise ValueError(f"channel {channel} outside 1..{2 * model.d}")
    op = model.jump_ops[channel - 1]
    post = op @ rho_pre @ op.conj().T
    weight = np.trace(post).real
    if weight <= 1e-14:
        raise ArithmeticError(f"channel {channel} has vanishing weight {weight:.3e}")
    post = post / weight
    return (post + post.conj().T) / 2


def sample_path(
    model: WalkModel,
    rho0,
    x0,
    t_max: float,
    seed: int,
    *,
    bracket_dt: float | None = None,
    backend: str | None = None,
) -> TrajectoryPath:
    """Sample one trajectory up to ``t_max``, deterministic given ``seed``."""
    return replay_path(model, (rho0, x0), t_max, seed, 0, bracket_dt=bracket_dt, backend=backend)


def replay_path(
    model: WalkModel,
    init,
    t_max: float,
    root_seed: int,
    index: int,
    *,
    bracket_dt: float | None = None,
    backend: str | None = None,
) -> TrajectoryPath:
    """Path ``index`` of the ensemble seeded by ``root_seed``, with events.

    Uses the same per-path stream as :func:`run_ensemble`, so a member of a
    previously run ensemble can be reconstructed jump by jump.
    """
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    ctx = _PathContext(model, bracket_dt, t_max)
    kern = _kernel(backend)
    gen = _path_generator(root_seed, index)
    rho0, x0 = _resolve_init(model, init)(gen)
    rho_f, x_f, occ, _, _, absorbed, events = kern.simulate_path(
        ctx.ladder,
        ctx.bracket_dt,
        ctx.jump_ops,
        ctx.disps,
        ctx.rate_op,
        rho0,
        x0,
        float(t_max),
        TIME_TOL,
        np.asarray([], dtype=float),
        gen,
        True,
    )
    times, channels, positions, states = events
    evs = tuple(
        JumpEvent(float(t), int(c), positions[i].copy(), states[i].copy())
        for i, (t, c) in enumerate(zip(times, channels))
    )
    occ_avg = occ / t_max if t_max > 0 else rho0.copy()
    return TrajectoryPath(
        initial_state=rho0,
        initial_position=x0,
        events=evs,
        final_time=float(t_max),
        final_state=rho_f,
        final_position=x_f,
        occupation_average=occ_avg,
        absorbed=bool(absorbed),
    )


def _resolve_init(model: WalkModel, init):
    """Normalize an ensemble initial condition.

    Accepts ``(rho0, x0)`` for a deterministic start or a ``LatticeState``
    whose site weights Tr rho(i) define the initial position law (the site
    draw consumes the first uniform of each path's stream).
    """
    if isinstance(init, LatticeState):
        entries = []
        for site, mat in sorted(init.sites.items()):
            w = float(np.trace(mat).real)
            if w < 0:
                raise ValueError(f"negative weight at site {site}")
            if w > 0:
                entries.append((np.array(site, dtype=np.int64), np.asarray(mat) / w, w))
        if not entries:
            raise ValueError("initial lattice state has no mass")
        total = sum(w for *_, w in entries)
        cum = np.cumsum([w / total for *_, w in entries])

        def draw(gen: Generator):
            i = int(np.searchsorted(cum, float(gen.random()), side="right"))
            i = min(i, len(entries) - 1)
            site, rho, _ = entries[i]
            return _check_density(model, rho), site

        return draw
    rho0, x0 = init
    rho0 = _check_density(model, rho0)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.int64))
    if x0.shape != (model.d,):
        raise ValueError(f"position must have shape ({model.d},)")
    return lambda gen: (rho0, x0)


def run_ensemble(
    model: WalkModel,
    init,
    t_max: float,
    checkpoints,
    n_paths: int,
    root_seed: int,
    *,
    threads: int = 1,
    bracket_dt: float | None = None,
    backend: str | None = None,
) -> EnsembleStats:
    """Statistics of ``n_paths`` independent trajectories.

    Results are identical for any ``threads`` value: per-path streams are
    keyed by (root_seed, path index) and partial sums are reduced in fixed
    chunk order.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    cps = np.asarray(sorted(float(c) for c in checkpoints), dtype=float)
    if cps.size and (cps[0] < 0 or cps[-1] > t_max):
        raise ValueError("checkpoints must lie in [0, t_max]")
    ctx = _PathContext(model, bracket_dt, t_max)
    kern = _kernel(backend)
    make_init = _resolve_init(model, init)
    d, n = model.d, model.n
    ncp = cps.size

    def run_chunk(bounds):
        start, stop = bounds
        occ_avg = np.zeros((n, n), dtype=complex)
        jumps = np.zeros(2 * d, dtype=np.int64)
        counts = [dict() for _ in range(ncp)]
        sx = np.zeros((ncp, d), dtype=np.int64)
        sxx = np.zeros((ncp, d, d), dtype=np.int64)
        absorbed = 0
        for i in range(start, stop):
            gen = _path_generator(root_seed, i)
            rho0, x0 = make_init(gen)
            rho_f, _, occ, cp_x, jc, absd, _ = kern.simulate_path(
                ctx.ladder,
                ctx.bracket_dt,
                ctx.jump_ops,
                ctx.disps,
                ctx.rate_op,
                rho0,
                x0,
                float(t_max),
                TIME_TOL,
                cps,
                gen,
                False,
            )
            occ_avg += occ / t_max if t_max > 0 else rho0
            jumps += jc
            absorbed += int(absd)
            for c in range(ncp):
                site = tuple(int(v) for v in cp_x[c])
                counts[c][site] = counts[c].get(site, 0) + 1
                sx[c] += cp_x[c]
                sxx[c] += np.outer(cp_x[c], cp_x[c])
        return occ_avg, jumps, counts, sx, sxx, absorbed

    chunks = [
        (s, min(s + AGGREGATION_CHUNK, n_paths)) for s in range(0, n_paths, AGGREGATION_CHUNK)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run_chunk, chunks))
    else:
        partials = [run_chunk(c) for c in chunks]

    occ_total = np.zeros((n, n), dtype=complex)
    jumps = np.zeros(2 * d, dtype=np.int64)
    counts: list[dict[tuple[int, ...], int]] = [dict() for _ in range(ncp)]
    sx = np.zeros((ncp, d), dtype=np.int64)
    sxx = np.zeros((ncp, d, d), dtype=np.int64)
    absorbed = 0
    for occ_p, j_p, c_p, sx_p, sxx_p, a_p in partials:
        occ_total += occ_p
        jumps += j_p
        sx += sx_p
        sxx += sxx_p
        absorbed += a_p
        for c in range(ncp):
            for site, cnt in c_p[c].items():
                counts[c][site] = counts[c].get(site, 0) + cnt

    mean = sx.astype(float) / n_paths
    cov = sxx.astype(float) / n_paths - np.einsum("ci,cj->cij", mean, mean)
    return EnsembleStats(
        sample_count=n_paths,
        t_max=float(t_max),
        checkpoints=cps,
        counts=tuple(counts),
        mean=mean,
        covariance=cov,
        pooled_state=occ_total / n_paths,
        channel_jumps=jumps,
        absorbed_paths=absorbed,
    )
