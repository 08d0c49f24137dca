"""Static figures of a simulated trajectory (frequency, generation, bids, cost)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .market import solve_economic_dispatch, total_cost  # noqa: E402


def _finish(fig, ax, path, ylabel):
    ax.set_xlabel("time [s]")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cost_series(traj):
    """Total generation cost along the trajectory and the optimal cost of the active regime."""
    actual = np.empty(traj.t.size)
    optimal = np.empty(traj.t.size)
    P_g = traj.component("P_g")
    opt_by_regime = []
    for reg in traj.regimes:
        sol = solve_economic_dispatch(reg.cost, reg.network.P_d)
        opt_by_regime.append(total_cost(reg.cost, sol.P_g_star))
    for i, r in enumerate(traj.regime):
        actual[i] = total_cost(traj.regimes[r].cost, P_g[i])
        optimal[i] = opt_by_regime[r]
    return actual, optimal


def write_plots(traj, out_dir, base_mva: float = 1.0, fmt: str = "svg") -> list:
    """Write ``freq``, ``pg``, ``bids`` and ``cost`` figures; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = traj.t
    labels = [f"{i + 1}" for i in range(traj.n)]
    paths = []

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, traj.component("omega"))
    paths.append(out_dir / f"freq.{fmt}")
    _finish(fig, ax, paths[-1], "frequency deviation [rad/s]")

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, traj.component("P_g") * base_mva)
    ax.legend(labels, ncol=7, fontsize="x-small")
    paths.append(out_dir / f"pg.{fmt}")
    _finish(fig, ax, paths[-1], "generation setpoint [MW]" if base_mva != 1 else "generation setpoint")

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, traj.component("b"), lw=0.8)
    ax.plot(t, traj.component("lam")[:, 0], "k--", lw=1.2, label="lambda")
    ax.legend(handles=[ax.lines[-1]], loc="best", fontsize="small")
    paths.append(out_dir / f"bids.{fmt}")
    _finish(fig, ax, paths[-1], "bids and multiplier")

    actual, optimal = cost_series(traj)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, actual, label="generation cost")
    ax.plot(t, optimal, "k--", label="optimal cost")
    ax.legend(fontsize="small")
    paths.append(out_dir / f"cost.{fmt}")
    _finish(fig, ax, paths[-1], "total cost")
    return paths
