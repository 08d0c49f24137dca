"""Economic dispatch, ISO clearing, generator payoffs and the efficient Nash bid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CostModel:
    """Quadratic generation costs ``C_i(P) = q_i P^2 / 2 + c_i P``."""

    q: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        c = np.array(self.c, dtype=float)
        if q.ndim != 1 or q.shape != c.shape:
            raise ValueError(f"q and c must be vectors of equal length, got {q.shape} and {c.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(c))):
            raise ValueError("cost coefficients must be finite")
        if np.any(q <= 0):
            i = int(np.flatnonzero(q <= 0)[0])
            raise ValueError(f"q_{i + 1} = {q[i]}: quadratic cost must be strictly positive")
        if np.any(c < 0):
            i = int(np.flatnonzero(c < 0)[0])
            raise ValueError(f"c_{i + 1} = {c[i]}: linear cost must be nonnegative")
        q.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.q.size

    def with_costs(self, updates: dict) -> "CostModel":
        """Copy with ``{bus_index: (q_i, c_i)}`` replaced (0-based indices)."""
        q, c = self.q.copy(), self.c.copy()
        for i, (qi, ci) in updates.items():
            q[i], c[i] = qi, ci
        return CostModel(q, c)


@dataclass(frozen=True)
class DispatchSolution:
    P_g_star: np.ndarray
    lambda_star: float
    b_star: np.ndarray


@dataclass(frozen=True)
class ClearingReport:
    """Outcome of the bid-based ISO linear program.

    ``value`` and ``allocation`` refer to the program restricted to
    nonnegative generation, whose optimum puts the whole load on the
    cheapest bidders. ``bounded`` tells whether the sign-free program of the
    model has a finite optimum, which only happens when all bids coincide.
    """

    min_bidders: tuple
    value: float
    allocation: np.ndarray
    bounded: bool


def total_cost(cost: CostModel, P_g) -> float:
    P_g = np.asarray(P_g, dtype=float)
    return float(0.5 * P_g @ (cost.q * P_g) + cost.c @ P_g)


def solve_economic_dispatch(cost: CostModel, P_d) -> DispatchSolution:
    """Closed-form KKT solution of ``min C(P_g)`` s.t. ``1^T P_g = 1^T P_d``."""
    P_d = np.asarray(P_d, dtype=float)
    inv_q = 1.0 / cost.q
    lam = float((P_d.sum() + inv_q @ cost.c) / inv_q.sum())
    P_g = inv_q * (lam - cost.c)
    return DispatchSolution(P_g_star=P_g, lambda_star=lam, b_star=np.full(cost.n, lam))


def kkt_residual(cost: CostModel, P_d, sol: DispatchSolution) -> float:
    """Largest relative violation of stationarity and power balance."""
    P_d = np.asarray(P_d, dtype=float)
    stat = cost.q * sol.P_g_star + cost.c - sol.lambda_star
    bal = sol.P_g_star.sum() - P_d.sum()
    scale_s = max(abs(sol.lambda_star), 1.0)
    scale_b = max(abs(P_d.sum()), 1.0)
    return float(max(np.max(np.abs(stat)) / scale_s, abs(bal) / scale_b))


def iso_clearing_diagnostic(b, P_d, rtol: float = 1e-12) -> ClearingReport:
    b = np.asarray(b, dtype=float)
    load = float(np.sum(P_d))
    bmin = b.min()
    tol = rtol * max(1.0, abs(bmin))
    winners = np.flatnonzero(b <= bmin + tol)
    alloc = np.zeros_like(b)
    alloc[winners] = load / winners.size
    return ClearingReport(
        min_bidders=tuple(int(i) for i in winners),
        value=float(bmin * load),
        allocation=alloc,
        bounded=bool(winners.size == b.size),
    )


def generator_payoff(cost: CostModel, i: int, b_i: float, P_gi: float) -> float:
    return float(P_gi * b_i - (0.5 * cost.q[i] * P_gi ** 2 + cost.c[i] * P_gi))


def desired_generation(cost: CostModel, b) -> np.ndarray:
    """Profit-maximising output of each generator at its own bid."""
    return (np.asarray(b, dtype=float) - cost.c) / cost.q


def efficient_nash_equilibrium(cost: CostModel, P_d) -> np.ndarray:
    return solve_economic_dispatch(cost, P_d).b_star
