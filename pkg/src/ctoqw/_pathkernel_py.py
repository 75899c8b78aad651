"""Pure-Python path-sampling kernel.

Reference implementation of the piecewise-deterministic jump process: the
unnormalized internal state sigma evolves as sigma(s) = F(s) sigma F(s)^dag
with F(s) = exp(s * d0), its trace is the exact no-jump survival
probability, and jump times invert survival against a uniform draw.

The flow is advanced on a coarse bracket grid using a precomputed ladder
of propagators ``ladder[m] = exp(bracket_dt * 2^-m * d0)``; inside a
bracketing step the jump time is refined by dyadic bisection, composing
ladder factors, so no further integration error enters.  The compiled
kernel in ``_pathkernel`` mirrors this logic operation for operation.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"
DRAW_CHUNK = 256


class DrawBuffer:
    """Chunked uniform(0,1) draws; zeros are rejected so draws are in (0,1)."""

    def __init__(self, gen, chunk: int = DRAW_CHUNK):
        self._gen = gen
        self._chunk = chunk
        self._buf = np.empty(0)
        self._i = 0

    def next_unit(self) -> float:
        while True:
            if self._i >= self._buf.size:
                self._buf = self._gen.random(self._chunk)
                self._i = 0
            u = self._buf[self._i]
            self._i += 1
            if u > 0.0:
                return float(u)


def _congruence(f: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return f @ sigma @ f.conj().T


def _survival(f: np.ndarray, sigma: np.ndarray) -> float:
    # Tr(F sigma F^dag) without forming the full product
    return float(np.vdot(f, f @ sigma).real)


def trace_real(m: np.ndarray) -> float:
    return float(np.trace(m).real)


def compose_fraction(ladder: np.ndarray, frac: float) -> np.ndarray:
    """exp(frac * bracket_dt * d0) from the dyadic ladder, frac in [0, 1)."""
    n = ladder.shape[1]
    f = np.eye(n, dtype=complex)
    rest = frac
    for m in range(1, ladder.shape[0]):
        w = 2.0 ** (-m)
        if rest >= w:
            f = f @ ladder[m]
            rest -= w
        if rest <= 0.0:
            break
    return f


def bisect_jump(ladder: np.ndarray, bracket_dt: float, sigma: np.ndarray, u: float, time_tol: float):
    """Refine the jump time inside a bracketing step.

    Assumes Tr sigma > u >= survival at the end of the bracket.  Returns
    ``(tau_local, f_lo)`` with survival(tau_local) > u and the true root
    within ``time_tol`` above tau_local.
    """
    n = sigma.shape[0]
    f_lo = np.eye(n, dtype=complex)
    lo = 0.0
    for m in range(1, ladder.shape[0]):
        step = bracket_dt * 2.0 ** (-m)
        if step < 0.5 * time_tol:
            break
        cand = f_lo @ ladder[m]
        if _survival(cand, sigma) > u:
            f_lo = cand
            lo += step
    return lo, f_lo


def channel_rates(jump_ops: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Tr(D_r rho D_r^dag) per channel, clipped at zero."""
    rates = np.empty(jump_ops.shape[0])
    for r in range(jump_ops.shape[0]):
        rates[r] = _survival(jump_ops[r], rho)
    return np.clip(rates, 0.0, None)


def pick_channel(rates: np.ndarray, v: float) -> int:
    """Cumulative inversion of v in fixed channel order (0-based index)."""
    total = rates.sum()
    if total <= 1e-14:
        raise ArithmeticError("total jump rate vanished; no channel can fire")
    target = v * total
    acc = 0.0
    last = 0
    for r, w in enumerate(rates):
        if w > 0.0:
            last = r
        acc += w
        if target < acc:
            return r
    return last


def simulate_path(
    ladder: np.ndarray,
    bracket_dt: float,
    jump_ops: np.ndarray,
    disps: np.ndarray,
    rate_op: np.ndarray,
    rho0: np.ndarray,
    x0: np.ndarray,
    t_max: float,
    time_tol: float,
    checkpoints: np.ndarray,
    gen,
    record_events: bool,
):
    """Sample one path; see ``trajectory.sample_path`` for the public API.

    Returns ``(rho_final, x_final, occ_integral, cp_positions, jump_counts,
    absorbed, events)`` where ``events`` is ``None`` or a tuple of arrays
    (times, channels, positions, states) and ``occ_integral`` is the
    unnormalized time integral of the internal state over [0, t_max].
    """
    n = rho0.shape[0]
    d = disps.shape[1]
    ncp = checkpoints.size

    sigma = rho0.astype(complex).copy()
    surv = trace_real(sigma)
    x = x0.astype(np.int64).copy()
    occ = np.zeros((n, n), dtype=complex)
    cp_out = np.zeros((ncp, d), dtype=np.int64)
    jump_counts = np.zeros(jump_ops.shape[0], dtype=np.int64)
    ev_t: list[float] = []
    ev_c: list[int] = []
    ev_x: list[np.ndarray] = []
    ev_s: list[np.ndarray] = []

    draws = DrawBuffer(gen)
    e0 = ladder[0]
    t_node = 0.0
    ci = 0

    if t_max > 0.0:
        u = draws.next_unit()
        while True:
            remaining = t_max - t_node
            if remaining <= 0.0:
                break
            if bracket_dt <= remaining:
                sig_next = _congruence(e0, sigma)
                s_next = trace_real(sig_next)
                if s_next > u:
                    occ += (bracket_dt / 2.0) * (sigma / surv + sig_next / s_next)
                    sigma, surv = sig_next, s_next
                    t_node += bracket_dt
                    continue
            else:
                f_end = compose_fraction(ladder, remaining / bracket_dt)
                sig_end = _congruence(f_end, sigma)
                s_end = trace_real(sig_end)
                if s_end > u:
                    occ += (remaining / 2.0) * (sigma / surv + sig_end / s_end)
                    sigma, surv = sig_end, s_end
                    break
            # the jump lands in this bracket (monotone survival)
            tau_local, f_lo = bisect_jump(ladder, bracket_dt, sigma, u, time_tol)
            if tau_local <= 0.0:
                tau_local = min(time_tol, remaining)
            sig_tau = _congruence(f_lo, sigma)
            s_tau = trace_real(sig_tau)
            occ += (tau_local / 2.0) * (sigma / surv + sig_tau / s_tau)
            t_jump = min(t_node + tau_local, t_max)
            rho_pre = sig_tau / s_tau
            while ci < ncp and checkpoints[ci] < t_jump:
                cp_out[ci] = x
                ci += 1
            v = draws.next_unit()
            r = pick_channel(channel_rates(jump_ops, rho_pre), v)
            post = _congruence(jump_ops[r], rho_pre)
            rho_post = post / trace_real(post)
            rho_post = (rho_post + rho_post.conj().T) / 2.0
            x = x + disps[r]
            jump_counts[r] += 1
            if record_events:
                ev_t.append(t_jump)
                ev_c.append(r + 1)
                ev_x.append(x.copy())
                ev_s.append(rho_post.copy())
            sigma = rho_post
            surv = trace_real(sigma)
            t_node = t_jump
            u = draws.next_unit()

    rho_final = sigma / surv
    rho_final = (rho_final + rho_final.conj().T) / 2.0
    while ci < ncp and checkpoints[ci] <= t_max:
        cp_out[ci] = x
        ci += 1
    absorbed = _survival_rate(rate_op, rho_final) <= 1e-14

    events = None
    if record_events:
        events = (
            np.array(ev_t, dtype=float),
            np.array(ev_c, dtype=np.int64),
            np.array(ev_x, dtype=np.int64).reshape(len(ev_x), d),
            np.array(ev_s, dtype=complex).reshape(len(ev_s), n, n),
        )
    return rho_final, x, occ, cp_out, jump_counts, absorbed, events


def _survival_rate(rate_op: np.ndarray, rho: np.ndarray) -> float:
    return float(np.trace(rate_op @ rho).real)
