"""Command-line workbench: ``dispatch``, ``certify`` and ``simulate``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .casefile import CaseFormatError, bundled, load_case, load_scenario
from .certificates import (
    CertificateError,
    certificate_report,
    certified_period,
    find_epsilon,
    lipschitz_constants,
    step_bounds,
)
from .dynamics import InfeasiblePowerFlow
from .hybrid import DivergenceError, ScheduleError, generate_schedule, parse_policy, simulate
from .market import kkt_residual, solve_economic_dispatch
from .network import select_spanning_tree

log = logging.getLogger("gridbid")

# published snapshot outputs (MW) at the generator buses, per regime of the bundled scenario
REFERENCE_DISPATCH = {
    "ieee14": {
        "buses": (1, 2, 3, 6, 8),
        "regimes": [(85, 15, 42, 31, 63), (94, 16, 46, 34, 69), (108, 23, 40, 28, 60)],
    }
}


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    try:
        return bundled(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: no such file (and not a bundled case)") from None


def _apply_until(network, cost, events, t):
    applied = 0
    for ev in events:
        if ev.t <= t:
            network, cost = ev.apply(network, cost)
            applied += 1
    return network, cost, applied


def run_dispatch(args, out=None) -> int:
    out = out or sys.stdout
    path = _resolve(args.case)
    network, cost, _ = load_case(path)
    regime = 0
    if args.scenario:
        events = load_scenario(_resolve(args.scenario), network)
        network, cost, regime = _apply_until(network, cost, events, args.at)
    t0 = time.perf_counter()
    sol = solve_economic_dispatch(cost, network.P_d)
    elapsed = time.perf_counter() - t0
    base = network.base_mva
    load = float(network.P_d.sum())
    balance = float(sol.P_g_star.sum() - load)
    print(f"case: {path.name}  regime: {regime}  buses: {network.n}  lines: {network.m}", file=out)
    print(f"lambda* = {sol.lambda_star!r}", file=out)
    print(f"total load = {load * base:.6f} MW   total generation = {sol.P_g_star.sum() * base:.6f} MW", file=out)
    print(f"balance residual = {balance * base:.3e} MW   KKT residual = {kkt_residual(cost, network.P_d, sol):.3e}"
          f"   solve time = {elapsed * 1e3:.3f} ms", file=out)
    ref = REFERENCE_DISPATCH.get(path.stem)
    refmap = {}
    if ref and regime < len(ref["regimes"]):
        refmap = dict(zip(ref["buses"], ref["regimes"][regime]))
    print(f"{'bus':>4} {'P_g* [MW]':>12} {'b*':>12} {'reference [MW]':>15}", file=out)
    for i in range(network.n):
        r = refmap.get(i + 1)
        rs = f"{r:>15}" if r is not None else f"{'':>15}"
        print(f"{i + 1:>4} {sol.P_g_star[i] * base:>12.4f} {sol.b_star[i]:>12.6f} {rs}", file=out)
    return 0


def run_certify(args, out=None) -> int:
    out = out or sys.stdout
    network, cost, gains = load_case(_resolve(args.case))
    tree = select_spanning_tree(network)
    cert = find_epsilon(network, tree, cost, gains, args.gamma)
    if args.beta is not None and not 0 < args.beta < cert.alpha:
        raise UsageError(f"--beta must satisfy 0 < beta < alpha = {cert.alpha!r}, got {args.beta!r}")
    lips = lipschitz_constants(network, tree, cost, gains, cert)
    beta = args.beta if args.beta is not None else 0.5 * cert.alpha
    bounds = step_bounds(lips, cert.alpha, beta)
    report = certificate_report(cert, lips, bounds, beta)
    report["certified_period"] = certified_period(*bounds)
    report["min_eig_Xi"] = cert.xi_matrix_min_eig
    for key in ("gamma", "c1", "c2", "alpha_hat", "alpha", "chi", "beta", "xi_bar", "zeta_bar", "min_eig_Xi"):
        print(f"{key:>12} = {report[key]!r}", file=out)
    print(f"{'eps':>12} = {report['eps']}", file=out)
    print(f"{'lipschitz':>12} = {report['lipschitz']}", file=out)
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2) + "\n")
    return 0


TRAJ_PREFIXES = ("omega", "Pg", "b")


def trajectory_header(n: int):
    cols = ["t"]
    for p in TRAJ_PREFIXES:
        cols += [f"{p}_{i + 1}" for i in range(n)]
    return cols + ["lambda", "V", "W_eps"]


def write_trajectory_csv(traj, path):
    n = traj.n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_header(n))
        om, pg, b, lam = (traj.component(k) for k in ("omega", "P_g", "b", "lam"))
        for i in range(traj.t.size):
            row = [traj.t[i], *om[i], *pg[i], *b[i], lam[i, 0], traj.V[i], traj.W[i]]
            w.writerow([repr(float(v)) for v in row])


def write_events_csv(traj, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "round", "step"])
        for t, kind, l, k in traj.events:
            w.writerow([repr(float(t)), kind, l, k])


def run_simulation(args, out=None) -> int:
    out = out or sys.stdout
    from .plotting import write_plots

    network, cost, gains = load_case(_resolve(args.case))
    events = load_scenario(_resolve(args.scenario), network) if args.scenario else ()
    tree = select_spanning_tree(network)
    policy = parse_policy(args.schedule)
    schedule = generate_schedule(policy, args.horizon, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status = 0
    try:
        traj = simulate(network, tree, cost, gains, schedule, events, horizon=args.horizon,
                        h_max=args.h_max, guard=args.guard, diagnostics=not args.no_diagnostics)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        traj = exc.trajectory
        status = 1
    write_trajectory_csv(traj, out_dir / "trajectory.csv")
    write_events_csv(traj, out_dir / "events.csv")
    if not args.no_plots:
        write_plots(traj, out_dir, network.base_mva)
    w = np.abs(traj.component("omega"))
    print(f"schedule: {policy}  rounds: {len(schedule.rounds)}  samples: {traj.t.size}  "
          f"wall time: {time.perf_counter() - t0:.2f} s", file=out)
    print(f"peak |omega| = {w.max():.6e}  final |omega| = {w[-1].max():.6e}", file=out)
    print(f"wrote {out_dir}/trajectory.csv, events.csv" + ("" if args.no_plots else " and plots"), file=out)
    return status


class UsageError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridbid", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dispatch", help="solve the economic dispatch of a case")
    d.add_argument("--case", required=True, help="case file or name of a bundled case")
    d.add_argument("--scenario", help="apply the scenario's events up to --at first")
    d.add_argument("--at", type=float, default=float("inf"), help="time up to which events apply")
    d.set_defaults(func=run_dispatch)

    c = sub.add_parser("certify", help="search the Lyapunov certificate and inter-event bounds")
    c.add_argument("--case", required=True)
    c.add_argument("--gamma", type=float, help="half-width of the angle region (default: midpoint)")
    c.add_argument("--beta", type=float, help="decrease margin, 0 < beta < alpha (default alpha/2)")
    c.add_argument("--json", help="also write the report as JSON")
    c.set_defaults(func=run_certify)

    s = sub.add_parser("simulate", help="run the time-triggered market against the swing equations")
    s.add_argument("--case", required=True)
    s.add_argument("--scenario")
    s.add_argument("--schedule", required=True, help="periodic:gap,N or random:gap_lo,gap_hi,N_lo,N_hi (s)")
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--h-max", type=float, default=5e-4, help="largest RK4 step")
    s.add_argument("--guard", type=float, default=1e9, help="divergence threshold")
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--no-diagnostics", action="store_true", help="skip V and W_eps columns")
    s.set_defaults(func=run_simulation)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CaseFormatError, ScheduleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CertificateError, InfeasiblePowerFlow) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
