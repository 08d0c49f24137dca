import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridbid.certificates import lipschitz_constants, step_bounds
from gridbid.dynamics import SystemState
from gridbid.hybrid import (
    DivergenceError,
    Periodic,
    Randomized,
    ScenarioEvent,
    ScheduleError,
    TriggerSchedule,
    bid_update_step,
    generate_schedule,
    integrate_physical,
    iso_update_step,
    lyapunov_monitor,
    mismatch_bound_check,
    parse_policy,
    simulate,
)
from gridbid.network import PowerNetwork, select_spanning_tree


# -- schedules ---------------------------------------------------------------

def test_periodic_schedule_counts():
    s = generate_schedule(Periodic(0.002, 25), 1.0)
    assert len(s.rounds) == 20 and s.n_events == 500
    assert s.horizon == pytest.approx(1.0)
    assert generate_schedule(Periodic(0.002, 80), 10.0).round_lengths[0] == pytest.approx(0.16)
    assert len(generate_schedule(Periodic(0.001, 25), 1.0).rounds) == 40


def test_random_schedule_reproducible_and_bounded():
    pol = Randomized(0.0005, 0.002, 20, 80)
    a, b = generate_schedule(pol, 3.0, seed=7), generate_schedule(pol, 3.0, seed=7)
    assert len(a.rounds) == len(b.rounds)
    assert all(np.array_equal(x, y) for x, y in zip(a.rounds, b.rounds))
    assert a.satisfies_bounds(0.0005, 0.002, 20 * 0.0005, 80 * 0.002)
    assert a.horizon >= 3.0
    c = generate_schedule(pol, 3.0, seed=8)
    assert not all(np.array_equal(x, y) for x, y in zip(a.rounds, c.rounds))


@pytest.mark.parametrize("rounds", [((0.1, 0.0),), ((0.1, -0.1),), ((),), ((0.1, math.nan),)])
def test_schedule_rejects_bad_gaps(rounds):
    with pytest.raises(ScheduleError):
        TriggerSchedule(rounds)


@pytest.mark.parametrize("spec", ["periodic:0,5", "periodic:0.1,0", "random:0.2,0.1,1,2", "random:0.1,0.2,3,2"])
def test_generate_rejects_bad_policies(spec):
    with pytest.raises(ScheduleError):
        generate_schedule(parse_policy(spec), 1.0)


@pytest.mark.parametrize("spec", ["", "periodic:1", "weekly:1,2", "periodic:a,b"])
def test_parse_policy_errors(spec):
    with pytest.raises(ScheduleError):
        parse_policy(spec)


def test_parse_policy_round_trip():
    for p in (Periodic(0.002, 25), Randomized(0.0005, 0.002, 20, 80)):
        assert parse_policy(str(p)) == p


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.floats(1e-4, 1.0), min_size=1, max_size=6), min_size=1, max_size=6))
def test_event_times_are_increasing_and_contiguous(rounds):
    s = TriggerSchedule(tuple(rounds))
    times = s.event_times()
    for a, b in zip(times, times[1:]):
        assert a[-1] == b[0]
    for ts in times:
        assert np.all(np.diff(ts) > 0)
    assert times[-1][-1] == pytest.approx(s.horizon)
    assert s.n_events == sum(len(r) for r in rounds)


# -- discrete steps ------------------------------------------------------------

def test_market_steps_fix_the_equilibrium(ieee14):
    eq = ieee14.eq
    net, _, cost, gains = ieee14.args
    np.testing.assert_allclose(bid_update_step(cost, gains, eq.b, eq.P_g, 0.002), eq.b, atol=1e-10)
    P, lam = iso_update_step(gains, eq.b, eq.omega, eq.P_g, float(eq.lam), net.P_d, 0.002)
    np.testing.assert_allclose(P, eq.P_g, atol=1e-9)
    assert lam == pytest.approx(float(eq.lam), abs=1e-9)


def test_market_step_signs(two_bus):
    net, _, cost, gains = two_bus.args
    eq = two_bus.eq
    lam = float(eq.lam)
    # bidding above marginal cost pulls the bid down
    assert np.all(bid_update_step(cost, gains, eq.b + 0.1, eq.P_g, 0.01) < eq.b + 0.1)
    # underfrequency raises setpoints
    P, _ = iso_update_step(gains, eq.b, -0.05 * np.ones(2), eq.P_g, lam, net.P_d, 0.01)
    assert np.all(P > eq.P_g)
    # unserved load raises the price
    _, lam2 = iso_update_step(gains, eq.b, eq.omega, eq.P_g - 0.1, lam, net.P_d, 0.01)
    assert lam2 > lam
    with pytest.raises(ValueError):
        bid_update_step(cost, gains, eq.b, eq.P_g, 0.0)
    with pytest.raises(ValueError):
        iso_update_step(gains, eq.b, eq.omega, eq.P_g, lam, net.P_d, -1.0)


def test_euler_market_steps_converge_first_order(two_bus):
    """Repeated market steps with frozen omega approach the exact flow at rate O(dt)."""
    from scipy.integrate import solve_ivp

    net, _, cost, gains = two_bus.args
    eq = two_bus.eq
    w = np.array([0.01, -0.02])
    z0 = np.concatenate([eq.b + 0.1, eq.P_g - 0.05, [eq.lam]])

    def rhs(t, z):
        b, P, lam = z[:2], z[2:4], z[4]
        return np.concatenate([
            (P - (b - cost.c) / cost.q) / gains.tau_b,
            (lam - b - gains.sigma ** 2 * w + gains.rho * (net.P_d.sum() - P.sum())) / gains.tau_g,
            [(net.P_d.sum() - P.sum()) / gains.tau_lambda],
        ])

    ref = solve_ivp(rhs, (0, 0.5), z0, rtol=1e-12, atol=1e-13).y[:, -1]
    errs = []
    for steps in (50, 100, 200, 400):
        dt = 0.5 / steps
        b, P, lam = z0[:2].copy(), z0[2:4].copy(), z0[4]
        for _ in range(steps):
            b, (P, lam) = bid_update_step(cost, gains, b, P, dt), iso_update_step(gains, b, w, P, lam, net.P_d, dt)
        errs.append(np.linalg.norm(np.concatenate([b, P, [lam]]) - ref))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    np.testing.assert_allclose(ratios, 2.0, rtol=0.1)


# -- physical integration --------------------------------------------------------

def test_physical_integration_keeps_equilibrium(ieee14):
    eq = ieee14.eq
    out = integrate_physical(ieee14.network, ieee14.tree, eq.P_g, eq, 1.0)
    np.testing.assert_allclose(out.vector, eq.vector, atol=1e-10)


def test_single_bus_frequency_decays_exponentially():
    net = PowerNetwork(1, (), V=[1.0], M=[2.0], A=[0.5], P_d=[0.3])
    tree = select_spanning_tree(net)
    s = SystemState(np.zeros(0), np.array([0.1]), np.zeros(1), np.zeros(1), 0.0)
    P = np.array([0.4])
    out = integrate_physical(net, tree, P, s, 1.0, h_max=1e-3)
    w_inf = (0.4 - 0.3) / 0.5
    exact = w_inf + (0.1 - w_inf) * math.exp(-0.5 / 2.0)
    assert out.omega[0] == pytest.approx(exact, abs=1e-8)
    np.testing.assert_array_equal(out.P_g, s.P_g)


def test_physical_step_refinement(ieee14):
    eq = ieee14.eq
    s = eq.replace(omega=eq.omega + 0.01)
    a = integrate_physical(ieee14.network, ieee14.tree, eq.P_g, s, 0.2, h_max=5e-4)
    b = integrate_physical(ieee14.network, ieee14.tree, eq.P_g, s, 0.2, h_max=2.5e-4)
    assert np.linalg.norm(a.vector - b.vector) < 1e-8


def test_physical_guard_raises(two_bus):
    eq = two_bus.eq
    with pytest.raises(DivergenceError):
        integrate_physical(two_bus.network, two_bus.tree, eq.P_g + 1e3, eq, 10.0, guard=100.0)


# -- full simulation ---------------------------------------------------------------

def test_simulation_at_equilibrium_stays_put(ieee14):
    sched = generate_schedule(Periodic(0.002, 25), 5.0)
    traj = simulate(*ieee14.args, sched, horizon=5.0, diagnostics=False)
    assert np.max(np.abs(traj.x - ieee14.eq.vector)) < 1e-8


def test_event_log_matches_schedule(two_bus):
    sched = generate_schedule(Randomized(0.001, 0.003, 2, 6), 0.5, seed=1)
    ev = (ScenarioEvent(0.2, (("scale_all_loads", 1.05),)),)
    traj = simulate(*two_bus.args, sched, ev, horizon=sched.horizon, diagnostics=False)
    kinds = [e[1] for e in traj.events]
    assert kinds.count("bid-update") == sched.n_events == kinds.count("iso-update")
    assert kinds.count("market-clear") == len(sched.rounds)
    assert kinds.count("scenario-event") == 1
    assert traj.t.size == sched.n_events + 1
    times = [e[0] for e in traj.events]
    assert all(b >= a - 1e-12 for a, b in zip(times, times[1:]))
    # setpoint seen by the swing equations only changes at clearing times
    clear_t = {round(e[0], 12) for e in traj.events if e[1] == "market-clear"}
    for i in range(1, traj.t.size):
        if not np.array_equal(traj.P_g_applied[i], traj.P_g_applied[i - 1]):
            assert round(traj.t[i], 12) in clear_t


def test_physical_state_is_continuous(two_bus):
    """Refining the physical step changes samples only at integrator-error level, so no jumps at events."""
    sched = generate_schedule(Periodic(0.01, 5), 1.0)
    x0 = two_bus.eq.vector + 0.05
    a = simulate(*two_bus.args, sched, initial_state=SystemState.from_vector(x0, 2), h_max=1e-3, diagnostics=False)
    b = simulate(*two_bus.args, sched, initial_state=SystemState.from_vector(x0, 2), h_max=5e-4, diagnostics=False)
    assert np.max(np.abs(a.x - b.x)) < 1e-9
    assert np.max(np.abs(np.diff(a.component("omega"), axis=0))) < 0.02


def test_scenario_event_inside_a_step(two_bus):
    sched = generate_schedule(Periodic(0.1, 2), 1.0)
    early = simulate(*two_bus.args, sched, (ScenarioEvent(0.25, (("scale_all_loads", 1.2),)),), diagnostics=False)
    late = simulate(*two_bus.args, sched, (ScenarioEvent(0.29, (("scale_all_loads", 1.2),)),), diagnostics=False)
    i = np.searchsorted(early.t, 0.3 - 1e-12)
    # the load step acts on the swing equations from the event time on
    assert early.x[i, 1] < late.x[i, 1] < two_bus.eq.omega[0] + 1e-15
    assert early.regime[-1] == 1 and len(early.regimes) == 2


def test_schedule_shorter_than_horizon_raises(two_bus):
    sched = generate_schedule(Periodic(0.01, 5), 0.5)
    with pytest.raises(ScheduleError):
        simulate(*two_bus.args, sched, horizon=1.0)


def test_simulation_is_deterministic(ieee14):
    sched = generate_schedule(Randomized(0.0005, 0.002, 20, 80), 0.5, seed=3)
    ev = (ScenarioEvent(0.1, (("scale_all_loads", 1.1),)),)
    a = simulate(*ieee14.args, sched, ev, horizon=0.5, diagnostics=False)
    b = simulate(*ieee14.args, sched, ev, horizon=0.5, diagnostics=False)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.events == b.events


def test_divergence_returns_partial_trajectory(ieee14):
    sched = generate_schedule(Periodic(0.05, 10), 5.0)
    x0 = ieee14.eq.vector.copy()
    x0[13:27] += 0.05
    with pytest.raises(DivergenceError) as info:
        simulate(*ieee14.args, sched, initial_state=SystemState.from_vector(x0, 14), guard=1e3, diagnostics=False)
    traj = info.value.trajectory
    assert traj is not None and not traj.completed
    assert traj.t[-1] < 5.0 and np.all(np.isfinite(traj.x))


# -- post-hoc checks ---------------------------------------------------------------

def test_mismatch_check_at_equilibrium(two_bus):
    lips = lipschitz_constants(*two_bus.args, two_bus.cert)
    xi, zeta = step_bounds(lips, two_bus.cert.alpha)
    gap = min(xi, zeta) / 2
    traj = simulate(*two_bus.args, TriggerSchedule(((gap, gap),) * 5), diagnostics=False)
    rep = mismatch_bound_check(traj, lips)
    assert rep.checked == 10 and rep.violations == 0 and rep.inapplicable == 0


def test_mismatch_check_inapplicable_for_long_gaps(two_bus):
    lips = lipschitz_constants(*two_bus.args, two_bus.cert)
    # beyond this gap the inner-step bound's denominator is negative
    gap = 1.5 * math.log1p(lips.L_f / (lips.L_f + lips.L_g)) / lips.L_f
    traj = simulate(*two_bus.args, TriggerSchedule(((gap, gap),) * 2), diagnostics=False)
    rep = mismatch_bound_check(traj, lips)
    assert rep.checked == 0 and rep.inapplicable == 4


def test_monitor_flat_at_equilibrium(two_bus):
    traj = simulate(*two_bus.args, generate_schedule(Periodic(0.01, 5), 0.5), diagnostics=False)
    rep = lyapunov_monitor(traj, two_bus.cert, tree=two_bus.tree, gains=two_bus.gains, stop_below=1e-12)
    assert np.all(np.abs(rep.W) < 1e-20) and rep.monotone and not rep.omega_exits


def test_monitor_flags_first_increase(ieee14):
    sched = generate_schedule(Periodic(0.002, 100), 4.0)
    x0 = ieee14.eq.vector.copy()
    x0[13:27] += 0.01
    traj = simulate(*ieee14.args, sched, initial_state=SystemState.from_vector(x0, 14), diagnostics=False)
    rep = lyapunov_monitor(traj, ieee14.cert, tree=ieee14.tree, gains=ieee14.gains)
    assert not rep.monotone
    i = int(np.argmax(~rep.nonincreasing))
    assert rep.first_increase_time == traj.t[i]
    assert rep.W[i] > rep.W[i - 1]
    assert np.all(np.diff(rep.W[:i]) <= 1e-12 * np.abs(rep.W[:i - 1]))
