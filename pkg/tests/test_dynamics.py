import math

import numpy as np
import pytest

from gridbid.dynamics import (
    ClosedLoop,
    GainSet,
    InfeasiblePowerFlow,
    SystemState,
    constant_disturbance,
    energy_function_V,
    find_equilibrium,
    gradient_V,
    integrate_continuous,
    perturbed_vector_field,
    piecewise_constant_disturbance,
    sinusoidal_disturbance,
    structure_matrices,
    v_dissipation_rate,
    vector_field,
)
from gridbid.market import CostModel
from gridbid.network import PowerNetwork, line_angles, select_spanning_tree
from oracles import fd_gradient, sample_region


def unit_gains(n):
    return GainSet(np.ones(n), np.ones(n), 1.0, 1.0, 1.0)


def test_state_roundtrip_and_validation():
    s = SystemState(np.arange(2.0), np.arange(3.0), np.ones(3), np.zeros(3), 4.0)
    back = SystemState.from_vector(s.vector, 3)
    np.testing.assert_array_equal(back.vector, s.vector)
    assert s.vector.size == 12
    with pytest.raises(ValueError):
        GainSet(np.ones(2), np.ones(2), 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        GainSet(np.array([1.0, -1.0]), np.ones(2), 1.0, 1.0, 1.0)


@pytest.mark.parametrize("case", ["two_bus", "ieee14"])
def test_field_vanishes_at_equilibrium(case, request):
    c = request.getfixturevalue(case)
    F = vector_field(*c.args, c.eq).vector
    assert np.abs(F).max() < 1e-9
    assert np.abs(line_angles(c.tree, c.eq.phi)).max() < math.pi / 2


def test_two_bus_equilibrium_angle(two_bus):
    assert two_bus.eq.phi[0] == pytest.approx(math.asin(0.5), abs=1e-12)
    assert two_bus.eq.lam == pytest.approx(1.7)
    np.testing.assert_allclose(two_bus.eq.P_g, [0.7, 0.1])


def test_locally_balanced_loads_need_no_flows():
    n = 4
    net = PowerNetwork(n, ((0, 1, 2.0), (1, 2, 1.0), (2, 3, 3.0), (0, 3, 1.0)), V=np.ones(n),
                       M=np.ones(n), A=np.ones(n), P_d=[0.3, 0.1, 0.5, 0.2])
    q = np.array([1.0, 2.0, 1.5, 3.0])
    cost = CostModel(q, 1.0 - q * net.P_d)
    eq = find_equilibrium(net, select_spanning_tree(net), cost)
    np.testing.assert_allclose(eq.phi, 0, atol=1e-14)
    assert eq.lam == pytest.approx(1.0)


def test_overloaded_line_is_infeasible():
    net = PowerNetwork(2, ((0, 1, 1.0),), V=[1, 1], M=[1, 1], A=[1, 1], P_d=[0.0, 3.0])
    cost = CostModel([1.0, 1000.0], [0.0, 0.0])
    with pytest.raises(InfeasiblePowerFlow):
        find_equilibrium(net, select_spanning_tree(net), cost)


@pytest.mark.parametrize("case", ["two_bus", "ieee14"])
def test_componentwise_field_equals_structured_form(case, request, rng):
    c = request.getfixturevalue(case)
    net, tree, cost, gains = c.args
    Q, Acal = structure_matrices(net, tree, cost, gains)
    Qinv = np.linalg.inv(Q)
    loop = ClosedLoop(net, tree, cost, gains)
    for x in sample_region(net, tree, c.eq, c.cert.gamma, rng, 100):
        s = SystemState.from_vector(x, net.n)
        structured = Qinv @ Acal @ Qinv @ gradient_V(net, tree, gains, s, c.eq)
        direct = loop(x)
        assert np.abs(direct - structured).max() < 1e-10 * max(1.0, np.abs(direct).max())


def test_frequency_only_perturbation(two_bus):
    net, tree, cost, gains = two_bus.args
    s = two_bus.eq.replace(omega=np.array([0.3, -0.1]))
    F = vector_field(net, tree, cost, gains, s)
    np.testing.assert_allclose(F.b, 0, atol=1e-14)
    np.testing.assert_allclose(gains.tau_g * F.P_g, -gains.sigma ** 2 * s.omega, atol=1e-14)


def test_energy_function_basics(ieee14):
    net, tree, _, gains = ieee14.args
    eq = ieee14.eq
    assert energy_function_V(net, tree, gains, eq, eq) == 0.0
    w = np.linspace(-0.1, 0.1, 14)
    V = energy_function_V(net, tree, gains, eq.replace(omega=w), eq)
    assert V == pytest.approx(0.5 * w @ (net.M * w), rel=1e-12)


@pytest.mark.parametrize("case", ["two_bus", "ieee14"])
def test_energy_nonnegative_and_gradient(case, request, rng):
    c = request.getfixturevalue(case)
    net, tree, _, gains = c.args
    xs = sample_region(net, tree, c.eq, c.cert.gamma, rng, 1000)
    for x in xs:
        assert energy_function_V(net, tree, gains, SystemState.from_vector(x, net.n), c.eq) >= -1e-12
    for x in xs[:10]:
        V = lambda y: energy_function_V(net, tree, gains, SystemState.from_vector(y, net.n), c.eq)  # noqa: E731
        g = gradient_V(net, tree, gains, SystemState.from_vector(x, net.n), c.eq)
        np.testing.assert_allclose(g, fd_gradient(V, x), rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("case", ["two_bus", "ieee14"])
def test_dissipation_rate(case, request, rng):
    c = request.getfixturevalue(case)
    net, tree, cost, gains = c.args
    loop = ClosedLoop(net, tree, cost, gains)
    assert v_dissipation_rate(net, tree, cost, gains, c.eq, c.eq) == 0.0
    xs = sample_region(net, tree, c.eq, c.cert.gamma, rng, 10_000)
    for k, x in enumerate(xs):
        s = SystemState.from_vector(x, net.n)
        rate = v_dissipation_rate(net, tree, cost, gains, s, c.eq)
        assert rate <= 0.0
        if k < 100:
            g = gradient_V(net, tree, gains, s, c.eq)
            f = loop(x)
            assert abs(g @ f - rate) < 1e-10 * max(1.0, np.abs(g) @ np.abs(f))
    w = np.array([0.2, -0.4])
    s = two_bus_only_omega = c.eq.replace(omega=np.resize(w, net.n))
    assert v_dissipation_rate(net, tree, cost, gains, s, c.eq) == pytest.approx(
        -two_bus_only_omega.omega @ (net.A * two_bus_only_omega.omega))


@pytest.mark.parametrize("case", ["two_bus", "ieee14"])
def test_interconnection_dissipative_part(case, request):
    c = request.getfixturevalue(case)
    net, tree, cost, gains = c.args
    _, Acal = structure_matrices(net, tree, cost, gains)
    R = -0.5 * (Acal + Acal.T)
    ev, vecs = np.linalg.eigh(R)
    tol = 1e-13 * max(1.0, ev.max())
    assert ev.min() > -tol
    n = net.n
    # dissipation acts on omega, b and the sum of P_g only
    kernel_dim = int(np.sum(ev < tol))
    assert kernel_dim == (n - 1) + (n - 1) + 1
    null = vecs[:, ev < tol]
    np.testing.assert_allclose(null[n - 1: 2 * n - 1], 0, atol=1e-10)
    np.testing.assert_allclose(null[2 * n - 1: 3 * n - 1], 0, atol=1e-10)


def test_perturbed_field(two_bus):
    net, tree, cost, gains = two_bus.args
    base = vector_field(*two_bus.args, two_bus.eq).vector
    np.testing.assert_array_equal(perturbed_vector_field(*two_bus.args, None, 0.0, two_bus.eq).vector, base)
    d = np.arange(8.0) / 10
    out = perturbed_vector_field(*two_bus.args, constant_disturbance(d), 0.0, two_bus.eq).vector
    np.testing.assert_allclose(out, d, atol=1e-12)


def test_disturbance_generators():
    sine = sinusoidal_disturbance([1.0, 2.0], 0.5)
    np.testing.assert_allclose(sine(0.5), [1.0, 2.0])
    step = piecewise_constant_disturbance([1.0, 2.0], [[1.0], [3.0]])
    assert step(0.5).tolist() == [0.0]
    assert step(1.5).tolist() == [1.0]
    assert step(5.0).tolist() == [3.0]
    channel = constant_disturbance([2.0], B_matrix=np.array([[1.0], [0.0], [-1.0]]))
    assert channel(0.0).tolist() == [2.0, 0.0, -2.0]


def test_small_constant_disturbance_gives_proportional_tube(two_bus):
    net, tree, cost, gains = two_bus.args
    devs = []
    for scale in (1e-3, 2e-3):
        d = scale * np.ones(8)
        _, xs = integrate_continuous(net, tree, cost, gains, two_bus.eq, 20.0, h=2e-3,
                                     disturbance=constant_disturbance(d))
        devs.append(np.linalg.norm(xs - two_bus.eq.vector, axis=1).max())
    assert devs[1] == pytest.approx(2 * devs[0], rel=0.05)


def test_rk4_matches_scipy_reference(two_bus):
    from oracles import scipy_reference

    net, tree, cost, gains = two_bus.args
    x0 = two_bus.eq.vector + 0.05
    ts, xs = integrate_continuous(net, tree, cost, gains, x0, 2.0, h=1e-3)
    ref = scipy_reference(ClosedLoop(net, tree, cost, gains), x0, ts)
    assert np.abs(xs - ref).max() < 1e-9
