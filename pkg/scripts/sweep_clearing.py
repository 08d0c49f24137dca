"""Sweep the clearing period on the 14-bus scenario and report which runs stay bounded."""

import argparse

import numpy as np

from gridbid import Periodic, bundled, generate_schedule, load_case, load_scenario, select_spanning_tree, simulate
from gridbid.hybrid import DivergenceError


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gap", type=float, default=0.002, help="inner step (s)")
    ap.add_argument("--steps", type=int, nargs="+", default=[10, 25, 50, 80, 90, 100, 125, 150])
    ap.add_argument("--horizon", type=float, default=25.0)
    ap.add_argument("--guard", type=float, default=1e9)
    args = ap.parse_args()

    net, cost, gains = load_case(bundled("ieee14.case"))
    events = load_scenario(bundled("ieee14_load_step.scenario"), net)
    tree = select_spanning_tree(net)
    print(f"{'clearing [ms]':>14} {'status':>22} {'peak |omega|':>14} {'late peak':>12}")
    for steps in args.steps:
        sched = generate_schedule(Periodic(args.gap, steps), args.horizon)
        try:
            traj = simulate(net, tree, cost, gains, sched, events, horizon=args.horizon,
                            guard=args.guard, diagnostics=False)
            status = "bounded"
        except DivergenceError as exc:
            traj, status = exc.trajectory, f"diverged at {exc.t:.2f} s"
        w = np.abs(traj.component("omega"))
        late = w[traj.t > args.horizon - 5].max() if traj.t[-1] > args.horizon - 5 else float("nan")
        print(f"{args.gap * steps * 1e3:>14.0f} {status:>22} {w.max():>14.4e} {late:>12.3e}")


if __name__ == "__main__":
    main()
