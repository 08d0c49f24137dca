"""Write the bundled 14-bus case, its load/cost scenario and the 2-bus toy case.

Run once; the generated files hold literal values so the package never
depends on this script's random draws at runtime.
"""

from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "gridbid" / "data"

# (from, to, r, x) of the standard 14-bus benchmark, per unit on 100 MVA
BRANCHES = [
    (1, 2, 0.01938, 0.05917), (1, 5, 0.05403, 0.22304), (2, 3, 0.04699, 0.19797),
    (2, 4, 0.05811, 0.17632), (2, 5, 0.05695, 0.17388), (3, 4, 0.06701, 0.17103),
    (4, 5, 0.01335, 0.04211), (4, 7, 0.0, 0.20912), (4, 9, 0.0, 0.55618),
    (5, 6, 0.0, 0.25202), (6, 11, 0.09498, 0.19890), (6, 12, 0.12291, 0.25581),
    (6, 13, 0.06615, 0.13027), (7, 8, 0.0, 0.17615), (7, 9, 0.0, 0.11001),
    (9, 10, 0.03181, 0.08450), (9, 14, 0.12711, 0.27038), (10, 11, 0.08205, 0.19207),
    (12, 13, 0.22092, 0.19988), (13, 14, 0.17093, 0.34802),
]
GEN_BUSES = (1, 2, 3, 6, 8)
GEN_Q = (22, 128, 45, 60, 30)
GEN_C = 7.5
LOAD_Q, LOAD_C = 1500, 26
P_D = (0, 20, 86, 43, 7, 10, 0, 0, 27, 8, 3, 6, 12, 14)
SEED = 327


def ieee14():
    rng = np.random.default_rng(SEED)
    n = 14
    A = rng.uniform(1.5, 2.5, n).round(4)
    V = rng.uniform(1.0, 1.06, n).round(4)
    tau_b = rng.uniform(0.0005, 0.001, n).round(6)
    M = np.full(n, 0.01)
    M[[b - 1 for b in GEN_BUSES]] = np.linspace(4.0, 5.5, len(GEN_BUSES))
    q = np.full(n, float(LOAD_Q))
    c = np.full(n, float(LOAD_C))
    for b, qi in zip(GEN_BUSES, GEN_Q):
        q[b - 1], c[b - 1] = qi, GEN_C
    out = [
        "# 14-bus benchmark topology; loads in MW, susceptances and costs per unit on base_mva",
        "[meta]", "base_mva = 100", "",
        "[gains]", "tau_lambda = 0.0004", "rho = 900  # alternate setting: 3", "sigma = 17", "",
        "[buses]", "# id  M  A  V  P_d  q  c  tau_b  tau_g",
    ]
    for i in range(n):
        out.append(f"{i + 1}  {M[i]:g}  {A[i]:g}  {V[i]:g}  {P_D[i]:g}  {q[i]:g}  {c[i]:g}  {tau_b[i]:g}  13.5")
    out += ["", "[lines]", "# from  to  B = x / (r^2 + x^2)"]
    for f, t, r, x in BRANCHES:
        out.append(f"{f}  {t}  {x / (r * r + x * x):.6f}")
    return "\n".join(out) + "\n"


def scenario():
    out = ["# loads +10% and load-side price 28 at t = 1 s",
           "[event t=1.0]", "scale_all_loads 1.1"]
    load_buses = [b for b in range(1, 15) if b not in GEN_BUSES]
    out += [f"set_costs {b} {LOAD_Q} 28" for b in load_buses]
    out += ["", "# new generator and load-side costs at t = 15 s", "[event t=15.0]"]
    for b, q, c in zip(GEN_BUSES, (23, 116, 48, 63, 38), (7.5, 6, 13.5, 15, 10.5)):
        out.append(f"set_costs {b} {q} {c}")
    out += [f"set_costs {b} {LOAD_Q} 33" for b in load_buses]
    return "\n".join(out) + "\n"


TWO_BUS = """\
# two buses, one line; unit inertia, damping and gains
[meta]
base_mva = 1

[gains]
tau_lambda = 1
rho = 1
sigma = 1

[buses]
# id  M  A  V  P_d  q  c  tau_b  tau_g
1  1  1  1  0.2  1  1    1  1
2  1  1  1  0.6  2  1.5  1  1

[lines]
# from  to  B
1  2  1
"""


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "ieee14.case").write_text(ieee14())
    (DATA / "ieee14_load_step.scenario").write_text(scenario())
    (DATA / "two_bus.case").write_text(TWO_BUS)
    print("wrote", *sorted(p.name for p in DATA.iterdir()))
