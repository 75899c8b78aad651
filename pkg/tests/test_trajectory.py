import math

import numpy as np
import pytest
from scipy import stats as sps

from ctoqw import classical_model, master, trajectory
from ctoqw.model import build_model
from ctoqw.trajectory import (
    apply_jump,
    run_ensemble,
    sample_jump_time,
    sample_path,
    select_channel,
)

from conftest import needs_compiled, random_density

ONE = np.eye(1, dtype=complex)


def test_jump_time_scalar_exponential():
    lam, mu = 0.7, 0.5
    model = classical_model(lam, mu)
    for u in (0.9, 0.5, 0.12, 1e-3):
        tau, rho_pre = sample_jump_time(model, ONE, u)
        assert tau == pytest.approx(-math.log(u) / (lam + mu), abs=1e-11)
        assert rho_pre[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_jump_time_forced_unit_rate(example1):
    # d0 = -I/2 forces survival exp(-s) regardless of the internal state
    rng = np.random.default_rng(0)
    for u in (0.8, 0.31):
        rho = random_density(2, rng)
        tau, rho_pre = sample_jump_time(example1, rho, u)
        assert tau == pytest.approx(-math.log(u), abs=1e-11)
        np.testing.assert_allclose(rho_pre, rho, atol=1e-9)


def test_jump_time_near_one_is_immediate(example2):
    rho = np.eye(2, dtype=complex) / 2
    tau, rho_pre = sample_jump_time(example2, rho, 1.0 - 1e-9)
    assert 0 <= tau <= 1e-7
    np.testing.assert_allclose(rho_pre, rho, atol=1e-6)


def test_jump_time_cap_gives_no_jump(example2):
    tau, rho_at_cap = sample_jump_time(example2, np.eye(2, dtype=complex) / 2, 0.01, t_cap=0.5)
    assert tau == math.inf
    assert np.trace(rho_at_cap).real == pytest.approx(1.0, abs=1e-12)


def test_jump_time_absorbing_state_stalls_out():
    model = build_model(1, np.zeros((2, 2)), [np.zeros((2, 2)), np.zeros((2, 2))])
    tau, _ = sample_jump_time(model, np.eye(2, dtype=complex) / 2, 0.5, t_cap=math.inf)
    assert tau == math.inf


def test_jump_time_validates_draw(example2):
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            sample_jump_time(example2, np.eye(2, dtype=complex) / 2, bad)


def test_select_channel_scalar_split():
    model = classical_model(0.75, 0.25)
    assert select_channel(model, ONE, 0.74) == 1
    assert select_channel(model, ONE, 0.76) == 2


def test_select_channel_example2_at_stationary(example2):
    # channel rates at diag(2/5, 3/5) are (1/4, 7/20): P(right) = 5/12
    rho = np.diag([0.4, 0.6]).astype(complex)
    boundary = (1 / 4) / (1 / 4 + 7 / 20)
    assert boundary == pytest.approx(5 / 12)
    assert select_channel(example2, rho, boundary - 1e-9) == 1
    assert select_channel(example2, rho, boundary + 1e-9) == 2


def test_select_channel_equal_ops_is_even():
    op = np.array([[0.3, 0.1], [0.0, 0.4]])
    model = build_model(1, np.zeros((2, 2)), [op, op])
    rng = np.random.default_rng(1)
    rho = random_density(2, rng)
    assert select_channel(model, rho, 0.49) == 1
    assert select_channel(model, rho, 0.51) == 2


def test_select_channel_no_rate_raises():
    model = build_model(1, np.zeros((2, 2)), [np.zeros((2, 2)), np.zeros((2, 2))])
    with pytest.raises(ArithmeticError):
        select_channel(model, np.eye(2, dtype=complex) / 2, 0.5)


def test_apply_jump_swap_channel(example2):
    for a in (0.2, 0.5, 0.9):
        rho = np.diag([a, 1 - a]).astype(complex)
        out = apply_jump(example2, rho, 1)
        np.testing.assert_allclose(out, np.diag([1 - a, a]), atol=1e-13)


def test_apply_jump_unitary_channel_preserves_spectrum():
    theta = 0.7
    u = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    model = build_model(1, np.zeros((2, 2)), [u / np.sqrt(2), u.T / np.sqrt(2)])
    rng = np.random.default_rng(2)
    rho = random_density(2, rng)
    out = apply_jump(model, rho, 1)
    np.testing.assert_allclose(
        np.linalg.eigvalsh(out), np.linalg.eigvalsh(rho), atol=1e-12
    )


def test_apply_jump_vanishing_weight_raises():
    model = build_model(
        1, np.zeros((2, 2)), [np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((2, 2))]
    )
    rho = np.diag([1.0, 0.0]).astype(complex)  # channel 1 weight Tr(D rho D^dag) = 0
    with pytest.raises(ArithmeticError):
        apply_jump(model, rho, 1)


def test_sample_path_zero_horizon(example2):
    path = sample_path(example2, np.eye(2, dtype=complex) / 2, [0], 0.0, 5)
    assert path.events == ()
    np.testing.assert_array_equal(path.final_position, [0])
    np.testing.assert_allclose(path.final_state, np.eye(2) / 2, atol=1e-12)
    np.testing.assert_allclose(path.occupation_average, np.eye(2) / 2, atol=1e-12)


def test_sample_path_deterministic_given_seed(example2):
    rho = np.eye(2, dtype=complex) / 2
    p1 = sample_path(example2, rho, [0], 20.0, 123)
    p2 = sample_path(example2, rho, [0], 20.0, 123)
    assert len(p1.events) == len(p2.events)
    for a, b in zip(p1.events, p2.events):
        assert a.time == b.time and a.channel == b.channel
    p3 = sample_path(example2, rho, [0], 20.0, 124)
    assert [e.time for e in p3.events] != [e.time for e in p1.events]


def test_sample_path_event_invariants(example2):
    path = sample_path(example2, np.eye(2, dtype=complex) / 2, [0], 50.0, 77)
    assert len(path.events) > 5
    prev_t, prev_x = 0.0, np.array([0])
    for ev in path.events:
        assert ev.time > prev_t
        assert ev.time <= path.final_time
        np.testing.assert_array_equal(
            ev.position - prev_x, example2.displacement(ev.channel)
        )
        assert abs(np.trace(ev.state).real - 1.0) <= 1e-9
        assert np.linalg.norm(ev.state - ev.state.conj().T) <= 1e-9
        assert np.linalg.eigvalsh(ev.state).min() >= -1e-9
        prev_t, prev_x = ev.time, ev.position
    np.testing.assert_array_equal(path.final_position, prev_x)
    assert abs(np.trace(path.occupation_average).real - 1.0) <= 1e-6


def test_sample_path_poisson_event_counts(poisson_model):
    t, n = 5.0, 2000
    counts = np.array(
        [len(sample_path(poisson_model, ONE, [0], t, seed).events) for seed in range(n)]
    )
    assert counts.mean() == pytest.approx(t, abs=4 * math.sqrt(t / n))
    assert counts.var() == pytest.approx(t, rel=0.15)
    # each path's position equals its jump count for the pure right-mover
    path = sample_path(poisson_model, ONE, [0], t, 11)
    assert path.final_position[0] == len(path.events)


def test_sample_path_unit_rate_holding_times(example1):
    # d0 = -I/2 makes holding times i.i.d. Exp(1) whatever the internal state
    path = sample_path(example1, np.eye(2, dtype=complex) / 2, [0], 2000.0, 31)
    times = np.array([e.time for e in path.events])
    holds = np.diff(np.concatenate([[0.0], times]))
    assert len(holds) > 1500
    res = sps.kstest(holds, "expon")
    assert res.pvalue > 0.01


def test_classical_increments_match_skellam():
    lam, mu, t, n = 0.6, 0.4, 4.0, 3000
    model = classical_model(lam, mu)
    stats = run_ensemble(model, (ONE, [0]), t, [t], n, 99)
    ref = sps.skellam(lam * t, mu * t)
    for k in range(-4, 7):
        freq = stats.counts[0].get((k,), 0) / n
        p = ref.pmf(k)
        assert freq == pytest.approx(p, abs=4.5 * math.sqrt(max(p, 1e-4) / n))


def test_trio_reconstructs_kernel_path(example2):
    # sample_jump_time / select_channel / apply_jump driven by the same
    # uniform stream must reproduce the fused kernel path event for event
    from ctoqw import _pathkernel_py
    from ctoqw.trajectory import _path_generator

    seed, t_max = 314, 30.0
    rho0 = np.eye(2, dtype=complex) / 2
    path = sample_path(example2, rho0, [0], t_max, seed)

    draws = _pathkernel_py.DrawBuffer(_path_generator(seed, 0))
    rho, t, x = rho0, 0.0, np.array([0], dtype=np.int64)
    rebuilt = []
    while True:
        u = draws.next_unit()
        tau, rho_pre = sample_jump_time(example2, rho, u, t_cap=t_max - t)
        if not math.isfinite(tau):
            break
        t += tau
        v = draws.next_unit()
        ch = select_channel(example2, rho_pre, v)
        rho = apply_jump(example2, rho_pre, ch)
        x = x + example2.displacement(ch)
        rebuilt.append((t, ch, x.copy()))
    assert len(rebuilt) == len(path.events)
    for (t_r, ch_r, x_r), ev in zip(rebuilt, path.events):
        assert ev.time == pytest.approx(t_r, abs=1e-9)
        assert ev.channel == ch_r
        np.testing.assert_array_equal(ev.position, x_r)


def test_run_ensemble_singleton_matches_path(example2):
    rho0 = np.eye(2, dtype=complex) / 2
    stats = run_ensemble(example2, (rho0, [0]), 10.0, [5.0, 10.0], 1, 5)
    path = sample_path(example2, rho0, [0], 10.0, 5)
    assert stats.sample_count == 1
    assert stats.mean[1, 0] == path.final_position[0]
    np.testing.assert_allclose(stats.pooled_state, path.occupation_average, atol=1e-12)
    assert stats.channel_jumps.sum() == len(path.events)


def test_run_ensemble_histograms_and_covariance(example2):
    stats = run_ensemble(example2, (np.eye(2, dtype=complex) / 2, [0]), 8.0, [4.0, 8.0], 300, 17)
    for c in range(2):
        assert sum(stats.histograms[c].values()) == pytest.approx(1.0, abs=1e-12)
        assert sum(stats.counts[c].values()) == 300
        cov = stats.covariance[c]
        np.testing.assert_allclose(cov, cov.T, atol=1e-12)
        assert np.linalg.eigvalsh(cov).min() >= -1e-10
    tr = np.trace(stats.pooled_state).real
    assert tr == pytest.approx(1.0, abs=1e-6)


def test_run_ensemble_thread_count_never_changes_results(example2):
    args = (example2, (np.eye(2, dtype=complex) / 2, [0]), 6.0, [3.0, 6.0], 200, 23)
    a = run_ensemble(*args, threads=1)
    b = run_ensemble(*args, threads=4)
    assert a.counts == b.counts
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.covariance, b.covariance)
    np.testing.assert_array_equal(a.pooled_state, b.pooled_state)
    np.testing.assert_array_equal(a.channel_jumps, b.channel_jumps)


def test_run_ensemble_lattice_initial_condition(example2):
    # two-site start: initial position drawn from the site weights
    init = master.LatticeState(
        d=1,
        sites={
            (0,): 0.25 * np.eye(2, dtype=complex) / 2,
            (5,): 0.75 * np.eye(2, dtype=complex) / 2,
        },
    )
    stats = run_ensemble(example2, init, 0.0, [0.0], 2000, 41)
    freq5 = stats.counts[0].get((5,), 0) / 2000
    assert freq5 == pytest.approx(0.75, abs=0.04)


def test_run_ensemble_absorbing_model_flags_paths():
    model = build_model(1, np.zeros((2, 2)), [np.zeros((2, 2)), np.zeros((2, 2))])
    stats = run_ensemble(model, (np.eye(2, dtype=complex) / 2, [0]), 5.0, [5.0], 10, 3)
    assert stats.absorbed_paths == 10
    assert stats.channel_jumps.sum() == 0
    assert stats.counts[0] == {(0,): 10}


def test_run_ensemble_validates_checkpoints(example2):
    with pytest.raises(ValueError):
        run_ensemble(example2, (np.eye(2, dtype=complex) / 2, [0]), 5.0, [6.0], 10, 3)


@needs_compiled
def test_occupation_average_converges_to_stationary(example2):
    path = sample_path(example2, np.diag([1.0, 0.0]).astype(complex), [0], 3000.0, 8)
    assert np.linalg.norm(path.occupation_average - np.diag([0.4, 0.6])) <= 0.05


def test_backend_selection_api():
    assert trajectory.backend() in ("cython", "python")
    assert "python" in trajectory.available_backends()
    with pytest.raises(ValueError):
        trajectory._kernel("fortran")
