"""Continuous-time closed loop: swing equations, bid dynamics and ISO primal-dual.

The full state is ``x = (phi, omega, b, P_g, lambda)`` with ``phi`` of length
``n - 1`` and a scalar multiplier, so ``x`` has ``4n`` entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .integrators import rk4_step
from .market import CostModel, solve_economic_dispatch
from .network import (
    PowerNetwork,
    TreeCoordinates,
    line_angles,
    potential_derivatives,
    potential_energy,
)


class InfeasiblePowerFlow(RuntimeError):
    """No equilibrium angle satisfies the security constraint."""


def state_slices(n: int):
    return (
        slice(0, n - 1),
        slice(n - 1, 2 * n - 1),
        slice(2 * n - 1, 3 * n - 1),
        slice(3 * n - 1, 4 * n - 1),
        slice(4 * n - 1, 4 * n),
    )


@dataclass(frozen=True)
class SystemState:
    phi: np.ndarray
    omega: np.ndarray
    b: np.ndarray
    P_g: np.ndarray
    lam: float

    @property
    def n(self) -> int:
        return len(self.omega)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.phi, self.omega, self.b, self.P_g, [self.lam]])

    @classmethod
    def from_vector(cls, x, n: int) -> "SystemState":
        x = np.asarray(x, dtype=float)
        if x.shape != (4 * n,):
            raise ValueError(f"state vector must have length {4 * n}, got {x.shape}")
        s = state_slices(n)
        return cls(x[s[0]].copy(), x[s[1]].copy(), x[s[2]].copy(), x[s[3]].copy(), float(x[s[4]][0]))

    def replace(self, **kw) -> "SystemState":
        d = dict(phi=self.phi, omega=self.omega, b=self.b, P_g=self.P_g, lam=self.lam)
        d.update(kw)
        return SystemState(**d)


@dataclass(frozen=True)
class GainSet:
    tau_b: np.ndarray
    tau_g: np.ndarray
    tau_lambda: float
    rho: float
    sigma: float

    def __post_init__(self):
        for name in ("tau_b", "tau_g"):
            v = np.array(getattr(self, name), dtype=float)
            if v.ndim != 1 or np.any(v <= 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a vector of positive gains")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.tau_b.shape != self.tau_g.shape:
            raise ValueError("tau_b and tau_g must have equal length")
        for name in ("tau_lambda", "rho", "sigma"):
            v = float(getattr(self, name))
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class Disturbance:
    """Additive input ``B d(t)``; ``B`` has one row per state entry."""

    B_matrix: np.ndarray
    d: Callable[[float], np.ndarray]

    def __call__(self, t: float) -> np.ndarray:
        return self.B_matrix @ np.atleast_1d(self.d(t))


def constant_disturbance(value, B_matrix=None) -> Disturbance:
    value = np.array(value, dtype=float)
    B = np.eye(value.size) if B_matrix is None else np.asarray(B_matrix, dtype=float)
    return Disturbance(B, lambda t: value)


def sinusoidal_disturbance(amplitude, freq_hz: float, B_matrix=None, phase: float = 0.0) -> Disturbance:
    amplitude = np.array(amplitude, dtype=float)
    B = np.eye(amplitude.size) if B_matrix is None else np.asarray(B_matrix, dtype=float)
    w = 2 * np.pi * freq_hz
    return Disturbance(B, lambda t: amplitude * np.sin(w * t + phase))


def piecewise_constant_disturbance(breaks, values, B_matrix=None) -> Disturbance:
    """``values[i]`` holds on ``[breaks[i], breaks[i+1])``; zero before ``breaks[0]``."""
    breaks = np.asarray(breaks, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    B = np.eye(values.shape[1]) if B_matrix is None else np.asarray(B_matrix, dtype=float)
    zero = np.zeros(values.shape[1])

    def d(t):
        i = np.searchsorted(breaks, t, side="right") - 1
        return zero if i < 0 else values[i]

    return Disturbance(B, d)


class ClosedLoop:
    """Precomputed vector field of the interconnected system on flat vectors."""

    def __init__(self, network: PowerNetwork, tree: TreeCoordinates, cost: CostModel, gains: GainSet):
        n = network.n
        if cost.n != n or gains.tau_b.size != n:
            raise ValueError("network, cost model and gains disagree on the bus count")
        self.network, self.tree, self.cost, self.gains = network, tree, cost, gains
        self.n = n
        self.sl = state_slices(n)
        self.E = np.array(tree.edge_map)
        self.gamma = np.array(network.gamma)
        self.DtEt = np.array(tree.D_t) @ self.E.T  # D_t grad U = DtEt (gamma sin eta)
        self.Dt_T = np.array(tree.D_t.T)
        self.Minv = 1.0 / network.M
        self.A = np.array(network.A)
        self.P_d = np.array(network.P_d)
        self.inv_q = 1.0 / cost.q
        self.c = np.array(cost.c)
        self.inv_tb = 1.0 / gains.tau_b
        self.inv_tg = 1.0 / gains.tau_g

    def __call__(self, x: np.ndarray) -> np.ndarray:
        s = self.sl
        phi, w, b, Pg, lam = x[s[0]], x[s[1]], x[s[2]], x[s[3]], x[s[4]][0]
        g = self.gains
        mismatch = self.P_d.sum() - Pg.sum()
        flow = self.DtEt @ (self.gamma * np.sin(self.E @ phi))
        return np.concatenate([
            self.Dt_T @ w,
            self.Minv * (-flow - self.A * w + Pg - self.P_d),
            self.inv_tb * (Pg - self.inv_q * (b - self.c)),
            self.inv_tg * (lam - b - g.sigma ** 2 * w + g.rho * mismatch),
            [mismatch / g.tau_lambda],
        ])

    def rhs(self, t, x):
        return self(x)


def vector_field(network, tree, cost, gains, state: SystemState) -> SystemState:
    loop = ClosedLoop(network, tree, cost, gains)
    return SystemState.from_vector(loop(state.vector), network.n)


def find_equilibrium(network, tree, cost, gains=None, *, tol: float = 1e-12, max_iter: int = 100) -> SystemState:
    """Equilibrium with zero frequency, efficient bids and secure line angles.

    The angles solve ``D_t grad U(phi) = P_g_bar - P_d`` by damped Newton
    iteration from ``phi = 0`` on the reduced equation
    ``grad U(phi) = D_t^+ (P_g_bar - P_d)``.
    """
    n = network.n
    sol = solve_economic_dispatch(cost, network.P_d)
    lam = sol.lambda_star
    P_g = sol.P_g_star
    target = tree.D_t_pinv @ (P_g - network.P_d)
    gamma = network.gamma

    def resid(phi):
        return potential_derivatives(tree, gamma, phi)[0] - target

    phi = np.zeros(n - 1)
    r = resid(phi)
    scale = max(1.0, float(np.max(np.abs(target), initial=0.0)))
    it = 0
    while np.max(np.abs(r), initial=0.0) > tol * scale:
        if it >= max_iter:
            raise InfeasiblePowerFlow(f"angle Newton iteration did not converge in {max_iter} steps")
        _, H = potential_derivatives(tree, gamma, phi)
        try:
            step = np.linalg.solve(H, -r)
        except np.linalg.LinAlgError as exc:
            raise InfeasiblePowerFlow("singular potential Hessian in angle solve") from exc
        t = 1.0
        rn = np.linalg.norm(r)
        for _ in range(60):
            cand = phi + t * step
            rc = resid(cand)
            if np.linalg.norm(rc) < rn:
                break
            t *= 0.5
        else:
            # no decrease: already at round-off level or stuck
            if np.max(np.abs(r)) <= 1e3 * tol * scale:
                break
            raise InfeasiblePowerFlow("angle Newton iteration stalled (loads exceed line capacity?)")
        phi, r = cand, rc
        it += 1
    eta = line_angles(tree, phi)
    if eta.size and np.max(np.abs(eta)) >= np.pi / 2:
        raise InfeasiblePowerFlow(
            f"equilibrium violates the security constraint: max |angle| = {np.max(np.abs(eta)):.4f} rad"
        )
    return SystemState(phi=phi, omega=np.zeros(n), b=np.full(n, lam), P_g=P_g, lam=lam)


def energy_function_V(network, tree, gains, state: SystemState, equilibrium: SystemState) -> float:
    gamma = network.gamma
    dphi = state.phi - equilibrium.phi
    grad_bar = potential_derivatives(tree, gamma, equilibrium.phi)[0]
    bregman = (potential_energy(tree, gamma, state.phi) - dphi @ grad_bar
               - potential_energy(tree, gamma, equilibrium.phi))
    db = state.b - equilibrium.b
    dp = state.P_g - equilibrium.P_g
    dl = state.lam - equilibrium.lam
    quad = db @ (gains.tau_b * db) + dp @ (gains.tau_g * dp) + gains.tau_lambda * dl ** 2
    return float(bregman + 0.5 * state.omega @ (network.M * state.omega) + quad / (2 * gains.sigma ** 2))


def gradient_V(network, tree, gains, state: SystemState, equilibrium: SystemState) -> np.ndarray:
    gamma = network.gamma
    s2 = gains.sigma ** 2
    grad = potential_derivatives(tree, gamma, state.phi)[0]
    grad_bar = potential_derivatives(tree, gamma, equilibrium.phi)[0]
    return np.concatenate([
        grad - grad_bar,
        network.M * state.omega,
        gains.tau_b * (state.b - equilibrium.b) / s2,
        gains.tau_g * (state.P_g - equilibrium.P_g) / s2,
        [gains.tau_lambda * (state.lam - equilibrium.lam) / s2],
    ])


def structure_matrices(network, tree, cost, gains):
    """The scaling ``Q`` and interconnection ``A`` of ``F = Q^-1 A Q^-1 grad V``."""
    n = network.n
    s = state_slices(n)
    sig = gains.sigma
    Q = np.zeros((4 * n, 4 * n))
    Q[s[0], s[0]] = np.eye(n - 1)
    Q[s[1], s[1]] = np.diag(network.M)
    Q[s[2], s[2]] = np.diag(gains.tau_b) / sig
    Q[s[3], s[3]] = np.diag(gains.tau_g) / sig
    Q[s[4], s[4]] = gains.tau_lambda / sig
    one = np.ones((n, 1))
    I = np.eye(n)
    Acal = np.zeros((4 * n, 4 * n))
    Acal[s[0], s[1]] = tree.D_t.T
    Acal[s[1], s[0]] = -tree.D_t
    Acal[s[1], s[1]] = -np.diag(network.A)
    Acal[s[1], s[3]] = sig * I
    Acal[s[2], s[2]] = -np.diag(1.0 / cost.q)
    Acal[s[2], s[3]] = I
    Acal[s[3], s[1]] = -sig * I
    Acal[s[3], s[2]] = -I
    Acal[s[3], s[3]] = -gains.rho * (one @ one.T)
    Acal[s[3], s[4]] = one
    Acal[s[4], s[3]] = -one.T
    return Q, Acal


def v_dissipation_rate(network, tree, cost, gains, state: SystemState, equilibrium: SystemState) -> float:
    """Time derivative of ``V`` along the undisturbed closed loop."""
    s2 = gains.sigma ** 2
    db = state.b - equilibrium.b
    dp_sum = np.sum(state.P_g - equilibrium.P_g)
    return float(
        -state.omega @ (network.A * state.omega)
        - db @ (db / cost.q) / s2
        - gains.rho * dp_sum ** 2 / s2
    )


def perturbed_vector_field(network, tree, cost, gains, disturbance: Disturbance | None, t: float,
                           state: SystemState) -> SystemState:
    loop = ClosedLoop(network, tree, cost, gains)
    dx = loop(state.vector)
    if disturbance is not None:
        dx = dx + disturbance(t)
    return SystemState.from_vector(dx, network.n)


def integrate_continuous(network, tree, cost, gains, x0, t_end: float, h: float = 5e-4,
                         disturbance: Disturbance | None = None, t0: float = 0.0,
                         sample_every: int = 1):
    """RK4 integration of the (optionally disturbed) closed loop.

    Returns ``(times, states)`` with states as rows of flat vectors.
    """
    loop = ClosedLoop(network, tree, cost, gains)
    if disturbance is None:
        f = loop.rhs
    else:
        def f(t, x):
            return loop(x) + disturbance(t)
    x = np.asarray(x0.vector if isinstance(x0, SystemState) else x0, dtype=float)
    steps = max(1, int(np.ceil((t_end - t0) / h - 1e-9)))
    h = (t_end - t0) / steps
    ts, xs = [t0], [x.copy()]
    for k in range(steps):
        x = rk4_step(f, t0 + k * h, x, h)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state at t = {t0 + (k + 1) * h:.6g}")
        if (k + 1) % sample_every == 0 or k + 1 == steps:
            ts.append(t0 + (k + 1) * h)
            xs.append(x.copy())
    return np.array(ts), np.array(xs)
