"""Multi-rate time-triggered bidding and market clearing on top of the swing equations.

Within round ``l`` the generators and the ISO take explicit Euler steps at the
times ``t_k^l`` using frequency samples ``omega(t_k^l)``; the physical
setpoint only changes at the clearing times ``t_0^l``. The swing equations
are integrated with RK4 between consecutive event times.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .certificates import (
    LipschitzConstants,
    LyapunovCertificate,
    RegionOmega,
    find_epsilon,
    w_epsilon,
    CertificateError,
)
from .dynamics import (
    InfeasiblePowerFlow,
    SystemState,
    energy_function_V,
    find_equilibrium,
    state_slices,
)
from .integrators import rk4_span
from .market import CostModel

log = logging.getLogger(__name__)

EVENT_TOL = 1e-9


class DivergenceError(RuntimeError):
    def __init__(self, t: float, message: str = "", trajectory=None):
        super().__init__(message or f"divergence detected at t = {t:.6g} s")
        self.t = t
        self.trajectory = trajectory


class ScheduleError(ValueError):
    pass


# -- schedules ---------------------------------------------------------------

@dataclass(frozen=True)
class Periodic:
    gap: float
    steps: int

    def __str__(self):
        return f"periodic:{self.gap!r},{self.steps}"


@dataclass(frozen=True)
class Randomized:
    gap_lo: float
    gap_hi: float
    steps_lo: int
    steps_hi: int

    def __str__(self):
        return f"random:{self.gap_lo!r},{self.gap_hi!r},{self.steps_lo},{self.steps_hi}"


def parse_policy(spec: str):
    """Parse ``periodic:gap,N`` or ``random:gap_lo,gap_hi,N_lo,N_hi`` (seconds)."""
    try:
        kind, args = spec.split(":", 1)
        vals = [a.strip() for a in args.split(",")]
        if kind == "periodic" and len(vals) == 2:
            return Periodic(float(vals[0]), int(vals[1]))
        if kind == "random" and len(vals) == 4:
            return Randomized(float(vals[0]), float(vals[1]), int(vals[2]), int(vals[3]))
    except ValueError:
        pass
    raise ScheduleError(f"bad schedule spec {spec!r}; expected periodic:gap,N or random:lo,hi,Nlo,Nhi")


@dataclass(frozen=True)
class TriggerSchedule:
    """Rounds of positive inner gaps; round ``l`` ends where round ``l+1`` starts."""

    rounds: tuple

    def __post_init__(self):
        rounds = []
        for l, g in enumerate(self.rounds):
            g = np.array(g, dtype=float)
            if g.ndim != 1 or g.size < 1:
                raise ScheduleError(f"round {l} needs at least one inner step")
            if np.any(g <= 0) or not np.all(np.isfinite(g)):
                raise ScheduleError(f"round {l}: inner gaps must be positive")
            g.setflags(write=False)
            rounds.append(g)
        object.__setattr__(self, "rounds", tuple(rounds))

    @property
    def round_lengths(self) -> np.ndarray:
        return np.array([g.sum() for g in self.rounds])

    @property
    def n_events(self) -> int:
        return int(sum(g.size for g in self.rounds))

    @property
    def horizon(self) -> float:
        return float(self.round_lengths.sum())

    def event_times(self):
        """Per-round arrays ``t_0^l, ..., t_{N_l}^l``."""
        out = []
        t0 = 0.0
        for g in self.rounds:
            ts = t0 + np.concatenate([[0.0], np.cumsum(g)])
            out.append(ts)
            t0 = ts[-1]
        return out

    def satisfies_bounds(self, gap_lo=0.0, gap_hi=math.inf, round_lo=0.0, round_hi=math.inf) -> bool:
        gaps = np.concatenate(self.rounds)
        lens = self.round_lengths
        return bool(gaps.min() >= gap_lo and gaps.max() <= gap_hi
                    and lens.min() >= round_lo and lens.max() <= round_hi)


def generate_schedule(policy, horizon: float, seed: int | None = None) -> TriggerSchedule:
    """Rounds covering ``[0, horizon]``; random policies are reproducible from ``seed``."""
    if horizon <= 0:
        raise ScheduleError("horizon must be positive")
    rounds = []
    if isinstance(policy, Periodic):
        if policy.gap <= 0 or policy.steps < 1:
            raise ScheduleError("periodic schedule needs gap > 0 and N >= 1")
        length = policy.gap * policy.steps
        count = max(1, math.ceil(horizon / length - 1e-9))
        rounds = [np.full(policy.steps, policy.gap)] * count
    elif isinstance(policy, Randomized):
        if not 0 < policy.gap_lo <= policy.gap_hi or not 1 <= policy.steps_lo <= policy.steps_hi:
            raise ScheduleError("random schedule needs 0 < gap_lo <= gap_hi and 1 <= N_lo <= N_hi")
        rng = np.random.default_rng(seed)
        total = 0.0
        while total < horizon - 1e-9:
            N = int(rng.integers(policy.steps_lo, policy.steps_hi + 1))
            g = rng.uniform(policy.gap_lo, policy.gap_hi, N)
            rounds.append(g)
            total += g.sum()
    else:
        raise ScheduleError(f"unknown policy {policy!r}")
    return TriggerSchedule(tuple(rounds))


# -- scenario events -----------------------------------------------------------

@dataclass(frozen=True)
class ScenarioEvent:
    """Parameter change at time ``t``.

    ``actions`` is a sequence of ``("scale_all_loads", factor)``,
    ``("set_loads", vector)`` or ``("set_costs", {bus: (q, c)})`` with
    0-based bus indices, applied in order.
    """

    t: float
    actions: tuple

    def apply(self, network, cost: CostModel):
        for kind, arg in self.actions:
            if kind == "scale_all_loads":
                network = network.with_loads(np.asarray(network.P_d) * float(arg))
            elif kind == "set_loads":
                network = network.with_loads(arg)
            elif kind == "set_costs":
                cost = cost.with_costs(arg)
            else:
                raise ValueError(f"unknown scenario action {kind!r}")
        return network, cost


def check_scenario(events) -> tuple:
    events = tuple(events)
    times = [e.t for e in events]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("scenario event times must be strictly increasing")
    return events


# -- discrete market updates ---------------------------------------------------

def bid_update_step(cost: CostModel, gains, b_k, P_g_k, dt: float) -> np.ndarray:
    """Generators' Euler step towards bidding their marginal cost of ``P_g_k``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    b_k = np.asarray(b_k, dtype=float)
    return b_k + dt / gains.tau_b * (np.asarray(P_g_k) - (b_k - cost.c) / cost.q)


def iso_update_step(gains, b_k, omega_sample, P_g_k, lambda_k: float, P_d, dt: float):
    """ISO Euler step on setpoints and multiplier from bids and sampled frequency."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    P_g_k = np.asarray(P_g_k, dtype=float)
    mismatch = float(np.sum(P_d) - P_g_k.sum())
    P_next = P_g_k + dt / gains.tau_g * (
        lambda_k - np.asarray(b_k) - gains.sigma ** 2 * np.asarray(omega_sample) + gains.rho * mismatch
    )
    return P_next, lambda_k + dt / gains.tau_lambda * mismatch


# -- physical integration ------------------------------------------------------

class _Swing:
    """Right-hand side of the swing equations in tree coordinates with held input."""

    def __init__(self, network, tree):
        self.n = network.n
        self.E = np.array(tree.edge_map)
        self.gamma = np.array(network.gamma)
        self.DtEt = np.array(tree.D_t) @ self.E.T
        self.Dt_T = np.array(tree.D_t.T)
        self.Minv = 1.0 / np.asarray(network.M)
        self.A = np.array(network.A)
        self.P_d = np.array(network.P_d)
        self.net_input = -self.P_d

    def set_input(self, P_g):
        self.net_input = np.asarray(P_g, dtype=float) - self.P_d

    def __call__(self, t, y):
        n = self.n
        phi, w = y[:n - 1], y[n - 1:]
        flow = self.DtEt @ (self.gamma * np.sin(self.E @ phi))
        return np.concatenate([self.Dt_T @ w, self.Minv * (self.net_input - flow - self.A * w)])


def _integrate_swing(rhs: _Swing, y, t0, t1, h_max, guard):
    y = rk4_span(rhs, t0, y, t1, h_max)
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > guard:
        raise DivergenceError(t1)
    return y


def integrate_physical(network, tree, held_P_g, state: SystemState, dt_span: float, *,
                       h_max: float = 5e-4, guard: float = 1e9, t0: float = 0.0) -> SystemState:
    """Advance ``(phi, omega)`` over ``dt_span`` with the setpoint held; market variables unchanged."""
    if dt_span <= 0:
        raise ValueError("dt_span must be positive")
    rhs = _Swing(network, tree)
    rhs.set_input(held_P_g)
    y = np.concatenate([state.phi, state.omega])
    y = _integrate_swing(rhs, y, t0, t0 + dt_span, min(h_max, dt_span), guard)
    n = network.n
    return state.replace(phi=y[:n - 1], omega=y[n - 1:])


# -- full simulation -------------------------------------------------------------

@dataclass
class Regime:
    """Parameters in force between scenario events, with their equilibrium and certificate."""

    t_start: float
    network: object
    cost: CostModel
    equilibrium: SystemState | None
    certificate: LyapunovCertificate | None = None


@dataclass
class Trajectory:
    """Samples at every event time plus the event log.

    ``anchor_k[i]`` is the sample at the start of the inner step ending at
    sample ``i``; ``anchor_0[i]`` the sample at the start of its round.
    ``P_g_applied`` is the setpoint seen by the swing equations.
    """

    n: int
    t: np.ndarray
    x: np.ndarray
    P_g_applied: np.ndarray
    anchor_k: np.ndarray
    anchor_0: np.ndarray
    regime: np.ndarray
    events: list
    regimes: list
    V: np.ndarray
    W: np.ndarray
    completed: bool = True

    def state(self, i: int) -> SystemState:
        return SystemState.from_vector(self.x[i], self.n)

    def component(self, name: str) -> np.ndarray:
        idx = dict(zip(("phi", "omega", "b", "P_g", "lam"), range(5)))[name]
        return self.x[:, state_slices(self.n)[idx]]

    def deviation_norms(self) -> np.ndarray:
        out = np.full(self.t.size, np.nan)
        for r, reg in enumerate(self.regimes):
            if reg.equilibrium is None:
                continue
            mask = self.regime == r
            out[mask] = np.linalg.norm(self.x[mask] - reg.equilibrium.vector, axis=1)
        return out


class _Recorder:
    def __init__(self, n):
        self.n = n
        self.t, self.x, self.pa, self.ak, self.a0, self.reg = [], [], [], [], [], []
        self.events = []

    def sample(self, t, x, pa, ak, a0, reg):
        self.t.append(t)
        self.x.append(x)
        self.pa.append(pa)
        self.ak.append(ak)
        self.a0.append(a0)
        self.reg.append(reg)
        return len(self.t) - 1

    def build(self, regimes, diagnostics, tree, gains, completed=True):
        t = np.array(self.t)
        x = np.array(self.x).reshape(len(self.t), 4 * self.n)
        reg = np.array(self.reg, dtype=int)
        V = np.full(t.size, np.nan)
        W = np.full(t.size, np.nan)
        if diagnostics:
            for i in range(t.size):
                R = regimes[reg[i]]
                if R.equilibrium is None:
                    continue
                s = SystemState.from_vector(x[i], self.n)
                V[i] = energy_function_V(R.network, tree, gains, s, R.equilibrium)
                if R.certificate is not None:
                    W[i] = w_epsilon(s, R.equilibrium, R.certificate.eps, gains, R.network, tree)
        return Trajectory(
            n=self.n, t=t, x=x, P_g_applied=np.array(self.pa), anchor_k=np.array(self.ak, dtype=int),
            anchor_0=np.array(self.a0, dtype=int), regime=reg, events=self.events, regimes=regimes,
            V=V, W=W, completed=completed,
        )


def _make_regime(t, network, tree, cost, gains, certify, gamma):
    try:
        eq = find_equilibrium(network, tree, cost, gains)
    except InfeasiblePowerFlow as exc:
        log.warning("no secure equilibrium at t = %g: %s", t, exc)
        return Regime(t, network, cost, None)
    cert = None
    if certify:
        try:
            cert = find_epsilon(network, tree, cost, gains, gamma, equilibrium=eq)
        except CertificateError as exc:
            log.warning("no certificate at t = %g: %s", t, exc)
    return Regime(t, network, cost, eq, cert)


def simulate(network, tree, cost, gains, schedule: TriggerSchedule, scenario=(), initial_state=None, *,
             horizon: float | None = None, h_max: float = 5e-4, guard: float = 1e9,
             diagnostics: bool = True, gamma: float | None = None) -> Trajectory:
    """Run the two-level bidding / clearing loop against the swing equations.

    The initial state defaults to the equilibrium of the initial parameters.
    Scenario events change loads or costs at their times; the equilibrium
    (and, with ``diagnostics``, the certificate) is recomputed for each regime.
    """
    n = network.n
    events = list(check_scenario(scenario))
    if horizon is not None and schedule.horizon < horizon - EVENT_TOL:
        raise ScheduleError(f"schedule ends at {schedule.horizon:.6g} s, before the horizon {horizon:.6g} s")
    if events and horizon is not None and events[-1].t > horizon:
        log.info("scenario events after the horizon are ignored")

    regimes = [_make_regime(0.0, network, tree, cost, gains, diagnostics, gamma)]
    if initial_state is None:
        if regimes[0].equilibrium is None:
            raise InfeasiblePowerFlow("initial parameters have no secure equilibrium to start from")
        initial_state = regimes[0].equilibrium
    sl = state_slices(n)
    x = np.array(initial_state.vector)
    phys = np.concatenate([x[sl[0]], x[sl[1]]])
    b, P_g, lam = x[sl[2]].copy(), x[sl[3]].copy(), float(x[sl[4]][0])
    P_applied = P_g.copy()

    rhs = _Swing(network, tree)
    rhs.set_input(P_applied)
    rec = _Recorder(n)
    cur_net, cur_cost = network, cost
    ev_i = 0

    def full_state():
        return np.concatenate([phys[:n - 1], phys[n - 1:], b, P_g, [lam]])

    def apply_events_upto(t, inclusive_tol):
        nonlocal ev_i, cur_net, cur_cost, rhs
        while ev_i < len(events) and events[ev_i].t <= t + inclusive_tol:
            ev = events[ev_i]
            cur_net, cur_cost = ev.apply(cur_net, cur_cost)
            regimes.append(_make_regime(ev.t, cur_net, tree, cur_cost, gains, diagnostics, gamma))
            rhs = _Swing(cur_net, tree)
            rhs.set_input(P_applied)
            rec.events.append((ev.t, "scenario-event", -1, -1))
            ev_i += 1

    stop_at = schedule.horizon if horizon is None else horizon
    apply_events_upto(0.0, EVENT_TOL)
    i0 = rec.sample(0.0, full_state(), P_applied.copy(), 0, 0, len(regimes) - 1)
    completed = True
    try:
        for l, ts in enumerate(schedule.event_times()):
            if ts[0] >= stop_at - EVENT_TOL:
                break
            round_start = i0
            for k in range(ts.size - 1):
                tk, tk1 = ts[k], ts[k + 1]
                apply_events_upto(tk, EVENT_TOL)
                dt = tk1 - tk
                w_sample = phys[n - 1:].copy()
                rec.events.append((tk, "bid-update", l, k))
                rec.events.append((tk, "iso-update", l, k))
                b_next = bid_update_step(cur_cost, gains, b, P_g, dt)
                P_next, lam_next = iso_update_step(gains, b, w_sample, P_g, lam, cur_net.P_d, dt)
                # physical span, cut at scenario events strictly inside it
                t = tk
                while ev_i < len(events) and events[ev_i].t < tk1 - EVENT_TOL:
                    te = events[ev_i].t
                    if te > t:
                        phys = _integrate_swing(rhs, phys, t, te, min(h_max, te - t), guard)
                        t = te
                    apply_events_upto(te, 0.0)
                phys = _integrate_swing(rhs, phys, t, tk1, min(h_max, tk1 - t), guard)
                b, P_g, lam = b_next, P_next, lam_next
                xs = full_state()
                if not np.all(np.isfinite(xs)) or np.max(np.abs(xs)) > guard:
                    raise DivergenceError(tk1)
                last = k + 1 == ts.size - 1
                if last:
                    P_applied = P_g.copy()
                    rhs.set_input(P_applied)
                    rec.events.append((tk1, "market-clear", l, k + 1))
                i0_prev = len(rec.t) - 1
                idx = rec.sample(tk1, xs, P_applied.copy(), i0_prev, round_start, len(regimes) - 1)
                if last:
                    i0 = idx
    except DivergenceError as exc:
        completed = False
        traj = rec.build(regimes, False, tree, gains, completed=False)
        exc.trajectory = traj
        raise
    return rec.build(regimes, diagnostics, tree, gains, completed=completed)


# -- post-hoc checks -------------------------------------------------------------

@dataclass
class MismatchReport:
    checked: int
    violations: int
    inapplicable: int
    max_slack_k: float
    max_slack_0: float
    min_slack: float
    first_violation_time: float | None = None
    rows: list = field(default_factory=list, repr=False)


def _x0_bound_factor(L, Lfg, xi):
    e = math.expm1(Lfg * xi)
    den = Lfg - L * e
    return None if den <= 0 else (L * e / den, Lfg / den)


def mismatch_bound_check(traj: Trajectory, constants: LipschitzConstants, rtol: float = 1e-9,
                         atol: float = 1e-12) -> MismatchReport:
    """Check the Gronwall-type bounds on ``|x(t) - x(t_k)|`` and ``|x(t) - x(t_0)|`` at every sample.

    Where a bound's denominator is not positive the bound is reported as
    inapplicable instead of violated.
    """
    Lf, Lg, Lh, L = constants.L_f, constants.L_g, constants.L_h, constants.L
    Lfg = Lf + Lg
    checked = viol = inapp = 0
    slack_k, slack_0, min_slack = [], [], math.inf
    first = None
    rows = []
    for i in range(1, traj.t.size):
        ik, i0 = traj.anchor_k[i], traj.anchor_0[i]
        r = traj.regime[i]
        if traj.regime[ik] != r or traj.regime[i0] != r or traj.regimes[r].equilibrium is None:
            inapp += 1
            continue
        xbar = traj.regimes[r].equilibrium.vector
        dev = np.linalg.norm(traj.x[i] - xbar)
        zeta = traj.t[i] - traj.t[ik]
        xi = traj.t[i] - traj.t[i0]
        f0 = _x0_bound_factor(L, Lfg, xi)
        ek = math.expm1(Lf * zeta)
        den_k = Lf - Lfg * ek
        if f0 is None or den_k <= 0:
            inapp += 1
            continue
        rhs0 = f0[0] * dev
        rhsk = (Lh * ek / den_k * f0[1] + Lfg * ek / den_k) * dev
        lhs0 = np.linalg.norm(traj.x[i] - traj.x[i0])
        lhsk = np.linalg.norm(traj.x[i] - traj.x[ik])
        checked += 1
        bad = lhs0 > rhs0 * (1 + rtol) + atol or lhsk > rhsk * (1 + rtol) + atol
        if bad:
            viol += 1
            if first is None:
                first = float(traj.t[i])
        slack_k.append(rhsk - lhsk)
        slack_0.append(rhs0 - lhs0)
        min_slack = min(min_slack, rhsk - lhsk, rhs0 - lhs0)
        rows.append((traj.t[i], lhsk, rhsk, lhs0, rhs0))
    return MismatchReport(
        checked=checked, violations=viol, inapplicable=inapp,
        max_slack_k=max(slack_k, default=math.nan), max_slack_0=max(slack_0, default=math.nan),
        min_slack=min_slack, first_violation_time=first, rows=rows,
    )


@dataclass
class MonitorReport:
    t: np.ndarray
    W: np.ndarray
    nonincreasing: np.ndarray
    first_increase_time: float | None
    omega_exits: list
    monotone: bool


def lyapunov_monitor(traj: Trajectory, certificate: LyapunovCertificate, network=None, tree=None,
                     gains=None, *, rtol: float = 1e-12, stop_below: float = 0.0) -> MonitorReport:
    """``W`` at every event time with decrease flags.

    Pairs whose earlier sample is already within ``stop_below`` of the
    equilibrium are not judged. Samples outside the certified region are
    listed in ``omega_exits``; monitoring continues past them.
    """
    R = traj.regimes[0]
    network = network or R.network
    eq = certificate.equilibrium
    region = RegionOmega(certificate.gamma)
    W = np.empty(traj.t.size)
    exits = []
    for i in range(traj.t.size):
        s = traj.state(i)
        W[i] = w_epsilon(s, eq, certificate.eps, gains, network, tree)
        if not region.contains(tree, s.phi):
            exits.append(float(traj.t[i]))
    dev = np.linalg.norm(traj.x - eq.vector, axis=1)
    ok = np.ones(traj.t.size, dtype=bool)
    first = None
    for i in range(1, traj.t.size):
        if dev[i - 1] < stop_below:
            continue
        if W[i] - W[i - 1] > rtol * abs(W[i - 1]):
            ok[i] = False
            if first is None:
                first = float(traj.t[i])
    return MonitorReport(traj.t.copy(), W, ok, first, exits, bool(ok.all()))
