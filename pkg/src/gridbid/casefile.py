"""Plain-text case and scenario files.

Loads are written in MW and converted to per unit on ``base_mva`` when
read; line susceptances and cost coefficients refer to per-unit power.

Case file::

    # comments start with '#'
    [meta]
    base_mva = 100
    [gains]
    tau_lambda = 0.0004
    rho = 900
    sigma = 17
    [buses]
    # id  M  A  V  P_d  q  c  tau_b  tau_g
    1  4.0  1.8  1.06  0  22  7.5  0.0007  13.5
    [lines]
    # from  to  B
    1  2  15.25

Scenario file (bus ids are 1-based)::

    [event t=1.0]
    scale_all_loads 1.1
    set_costs 4 1500 28
    [event t=15.0]
    set_loads 0 20 86 ...
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import GainSet
from .hybrid import ScenarioEvent, check_scenario
from .market import CostModel
from .network import PowerNetwork, build_network

BUS_COLUMNS = ("id", "M", "A", "V", "P_d", "q", "c", "tau_b", "tau_g")
LINE_COLUMNS = ("from", "to", "B")
GAIN_KEYS = ("tau_lambda", "rho", "sigma")
DATA_DIR = Path(__file__).resolve().parent / "data"


class CaseFormatError(ValueError):
    def __init__(self, source, line: int | None, field: str, message: str):
        where = f"{source}:{line}" if line is not None else str(source)
        super().__init__(f"{where}: {field}: {message}")
        self.line = line
        self.field = field


@dataclass(frozen=True)
class Case:
    network: PowerNetwork
    cost: CostModel
    gains: GainSet

    def __iter__(self):
        return iter((self.network, self.cost, self.gains))


def bundled(name: str) -> Path:
    """Path of a data file shipped with the package (``ieee14.case`` etc.)."""
    p = DATA_DIR / name
    if not p.exists():
        raise FileNotFoundError(f"no bundled file {name!r}; available: {sorted(f.name for f in DATA_DIR.iterdir())}")
    return p


def _lines(text):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line


def _number(tok, source, no, field):
    try:
        v = float(tok)
    except ValueError:
        raise CaseFormatError(source, no, field, f"not a number: {tok!r}") from None
    if not np.isfinite(v):
        raise CaseFormatError(source, no, field, f"must be finite, got {tok!r}")
    return v


def parse_case(text: str, source: str = "<case>") -> Case:
    section = None
    meta, gains = {}, {}
    buses, bus_lines, lines, line_lines = [], [], [], []
    for no, line in _lines(text):
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            section = m.group(1)
            if section not in ("meta", "gains", "buses", "lines"):
                raise CaseFormatError(source, no, section, "unknown section")
            continue
        if section is None:
            raise CaseFormatError(source, no, "-", "data before the first section header")
        if section in ("meta", "gains"):
            if "=" not in line:
                raise CaseFormatError(source, no, section, "expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            allowed = ("base_mva",) if section == "meta" else GAIN_KEYS
            if key not in allowed:
                raise CaseFormatError(source, no, f"{section}.{key}", "unknown key")
            (meta if section == "meta" else gains)[key] = (_number(val, source, no, f"{section}.{key}"), no)
        else:
            cols = BUS_COLUMNS if section == "buses" else LINE_COLUMNS
            toks = line.split()
            if len(toks) != len(cols):
                raise CaseFormatError(source, no, section, f"expected {len(cols)} columns ({' '.join(cols)}), got {len(toks)}")
            rec = {c: _number(t, source, no, f"{section}.{c}") for c, t in zip(cols, toks)}
            if section == "buses":
                buses.append(rec)
                bus_lines.append(no)
            else:
                lines.append(rec)
                line_lines.append(no)

    if not buses:
        raise CaseFormatError(source, None, "buses", "no buses given")
    for key in GAIN_KEYS:
        if key not in gains:
            raise CaseFormatError(source, None, f"gains.{key}", "missing")
    n = len(buses)
    for rec, no in zip(buses, bus_lines):
        if rec["id"] != int(rec["id"]) or not 1 <= rec["id"] <= n:
            raise CaseFormatError(source, no, "buses.id", f"ids must be 1..{n}")
        for col in ("M", "A", "V", "tau_b", "tau_g"):
            if rec[col] <= 0:
                raise CaseFormatError(source, no, f"buses.{col}", "must be positive")
        if rec["q"] <= 0:
            raise CaseFormatError(source, no, "buses.q", "quadratic cost must be strictly positive (strong convexity)")
        if rec["c"] < 0:
            raise CaseFormatError(source, no, "buses.c", "linear cost must be nonnegative")
    ids = [int(r["id"]) for r in buses]
    if len(set(ids)) != n:
        dup = next(i for i in ids if ids.count(i) > 1)
        raise CaseFormatError(source, bus_lines[ids.index(dup, ids.index(dup) + 1)], "buses.id", f"duplicate bus {dup}")
    seen = set()
    for rec, no in zip(lines, line_lines):
        f, t = rec["from"], rec["to"]
        if f != int(f) or t != int(t) or not (1 <= f <= n and 1 <= t <= n):
            raise CaseFormatError(source, no, "lines.from/to", f"bus ids must be integers in 1..{n}")
        if f == t:
            raise CaseFormatError(source, no, "lines.from/to", "self-loop")
        if rec["B"] <= 0:
            raise CaseFormatError(source, no, "lines.B", "susceptance must be positive")
        key = (min(f, t), max(f, t))
        if key in seen:
            raise CaseFormatError(source, no, "lines", f"duplicate line {int(f)}-{int(t)}")
        seen.add(key)

    base = meta.get("base_mva", (1.0, None))
    if base[0] <= 0:
        raise CaseFormatError(source, base[1], "meta.base_mva", "must be positive")
    for rec in buses:
        rec["P_d"] = rec["P_d"] / base[0]
    try:
        network = build_network(buses, [(r["from"], r["to"], r["B"]) for r in lines], base[0])
    except ValueError as exc:
        raise CaseFormatError(source, None, "network", str(exc)) from None
    order = np.argsort([r["id"] for r in buses])
    col = lambda k: np.array([buses[i][k] for i in order])  # noqa: E731
    cost = CostModel(col("q"), col("c"))
    try:
        gs = GainSet(col("tau_b"), col("tau_g"), gains["tau_lambda"][0], gains["rho"][0], gains["sigma"][0])
    except ValueError as exc:
        raise CaseFormatError(source, None, "gains", str(exc)) from None
    return Case(network, cost, gs)


def load_case(path) -> Case:
    path = Path(path)
    return parse_case(path.read_text(), str(path))


def dump_case(case: Case) -> str:
    net, cost, g = case
    out = ["[meta]", f"base_mva = {net.base_mva!r}", "", "[gains]"]
    out += [f"{k} = {float(getattr(g, k))!r}" for k in GAIN_KEYS]
    out += ["", "[buses]", "# " + "  ".join(BUS_COLUMNS)]
    for i in range(net.n):
        vals = (net.M[i], net.A[i], net.V[i], net.P_d[i] * net.base_mva, cost.q[i], cost.c[i], g.tau_b[i], g.tau_g[i])
        out.append("  ".join([str(i + 1)] + [repr(float(v)) for v in vals]))
    out += ["", "[lines]", "# " + "  ".join(LINE_COLUMNS)]
    for i, j, B in net.edges:
        out.append(f"{i + 1}  {j + 1}  {float(B)!r}")
    return "\n".join(out) + "\n"


def parse_scenario(text: str, n: int, source: str = "<scenario>", base_mva: float = 1.0) -> tuple:
    """Scenario events with 0-based bus indices.

    ``n`` is the bus count of the case; ``set_loads`` values are MW and are
    divided by ``base_mva``.
    """
    events = []
    cur_t, actions = None, []

    def flush():
        if cur_t is not None:
            events.append(ScenarioEvent(cur_t, tuple(actions)))

    for no, line in _lines(text):
        m = re.fullmatch(r"\[event\s+t\s*=\s*(\S+)\]", line)
        if m:
            flush()
            t = _number(m.group(1), source, no, "event.t")
            if t < 0:
                raise CaseFormatError(source, no, "event.t", "must be nonnegative")
            if events and t <= events[-1].t:
                raise CaseFormatError(source, no, "event.t", "event times must be strictly increasing")
            cur_t, actions = t, []
            continue
        if cur_t is None:
            raise CaseFormatError(source, no, "-", "action before the first [event t=...] header")
        toks = line.split()
        kind, args = toks[0], toks[1:]
        if kind == "scale_all_loads":
            if len(args) != 1:
                raise CaseFormatError(source, no, kind, "expects one factor")
            f = _number(args[0], source, no, kind)
            if f <= 0:
                raise CaseFormatError(source, no, kind, "factor must be positive")
            actions.append((kind, f))
        elif kind == "set_loads":
            if len(args) != n:
                raise CaseFormatError(source, no, kind, f"expects {n} values, got {len(args)}")
            actions.append((kind, np.array([_number(a, source, no, kind) for a in args]) / base_mva))
        elif kind == "set_costs":
            if len(args) != 3:
                raise CaseFormatError(source, no, kind, "expects 'bus q c'")
            bus = _number(args[0], source, no, f"{kind}.bus")
            q = _number(args[1], source, no, f"{kind}.q")
            c = _number(args[2], source, no, f"{kind}.c")
            if bus != int(bus) or not 1 <= bus <= n:
                raise CaseFormatError(source, no, f"{kind}.bus", f"must be in 1..{n}")
            if q <= 0:
                raise CaseFormatError(source, no, f"{kind}.q", "quadratic cost must be strictly positive")
            if c < 0:
                raise CaseFormatError(source, no, f"{kind}.c", "linear cost must be nonnegative")
            actions.append((kind, {int(bus) - 1: (q, c)}))
        else:
            raise CaseFormatError(source, no, kind, "unknown action")
    flush()
    return check_scenario(events)


def load_scenario(path, network) -> tuple:
    path = Path(path)
    return parse_scenario(path.read_text(), network.n, str(path), network.base_mva)
