"""Transmission network graph, spanning-tree coordinates and line potential energy."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class NetworkError(ValueError):
    """Raised when network data violates a structural or physical invariant."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PowerNetwork:
    """Buses, lines and swing-equation parameters of a transmission grid.

    Buses are indexed ``0..n-1`` internally. Each edge is ``(i, j, B_ij)``
    and bus ``i`` is its positive end; line strengths are
    ``gamma_k = B_ij * V_i * V_j``. Powers are per unit; ``base_mva`` only
    converts them to MW for reporting.
    """

    n: int
    edges: tuple
    V: np.ndarray
    M: np.ndarray
    A: np.ndarray
    P_d: np.ndarray
    base_mva: float = 1.0
    D: np.ndarray = field(init=False, repr=False)
    gamma: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise NetworkError("network needs at least one bus")
        edges = []
        seen = set()
        for k, e in enumerate(self.edges):
            i, j, B = int(e[0]), int(e[1]), float(e[2])
            if i == j:
                raise NetworkError(f"edge {k}: self-loop at bus {i + 1}")
            if not (0 <= i < n and 0 <= j < n):
                raise NetworkError(f"edge {k}: endpoint out of range ({i + 1}, {j + 1})")
            if B < 0 or not np.isfinite(B):
                raise NetworkError(f"edge {k}: B_ij must be >= 0, got {B}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise NetworkError(f"edge {k}: duplicate line ({i + 1}, {j + 1})")
            seen.add(key)
            edges.append((i, j, B))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(edges))
        for name in ("V", "M", "A", "P_d"):
            arr = _frozen(getattr(self, name))
            if arr.shape != (n,):
                raise NetworkError(f"{name} must have length {n}, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NetworkError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        for name in ("V", "M", "A"):
            bad = np.flatnonzero(getattr(self, name) <= 0)
            if bad.size:
                raise NetworkError(f"{name} must be positive (bus {bad[0] + 1})")
        if self.base_mva <= 0:
            raise NetworkError("base_mva must be positive")

        m = len(edges)
        D = np.zeros((n, m))
        gamma = np.empty(m)
        for k, (i, j, B) in enumerate(edges):
            D[i, k] = 1.0
            D[j, k] = -1.0
            gamma[k] = B * self.V[i] * self.V[j]
        if np.any(gamma <= 0):
            k = int(np.flatnonzero(gamma <= 0)[0])
            raise NetworkError(f"edge {k}: line strength must be positive (B_ij = 0)")
        object.__setattr__(self, "D", _frozen(D))
        object.__setattr__(self, "gamma", _frozen(gamma))
        if not _connected(n, edges):
            raise NetworkError("network graph is not connected")

    @property
    def m(self) -> int:
        return len(self.edges)

    def with_loads(self, P_d) -> "PowerNetwork":
        return PowerNetwork(self.n, self.edges, self.V, self.M, self.A, P_d, self.base_mva)

    def with_inertia(self, M) -> "PowerNetwork":
        return PowerNetwork(self.n, self.edges, self.V, M, self.A, self.P_d, self.base_mva)


def _adjacency(n, edges):
    adj = [[] for _ in range(n)]
    for k, (i, j, _) in enumerate(edges):
        adj[i].append((j, k))
        adj[j].append((i, k))
    return adj


def _connected(n, edges) -> bool:
    adj = _adjacency(n, edges)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v, _ in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def build_network(bus_records, edge_records, base_mva: float = 1.0) -> PowerNetwork:
    """Build a network from bus and line records with 1-based bus ids.

    ``bus_records`` are mappings with keys ``id, M, A, V, P_d``;
    ``edge_records`` are ``(from, to, B)`` triples.
    """
    buses = sorted(bus_records, key=lambda r: int(r["id"]))
    ids = [int(r["id"]) for r in buses]
    if ids != list(range(1, len(ids) + 1)):
        raise NetworkError(f"bus ids must be 1..n without gaps, got {ids}")
    # lower-numbered bus is the positive end
    edges = [(min(int(f), int(t)) - 1, max(int(f), int(t)) - 1, float(B))
             for f, t, B in edge_records]
    return PowerNetwork(
        n=len(buses),
        edges=tuple(edges),
        V=[r["V"] for r in buses],
        M=[r["M"] for r in buses],
        A=[r["A"] for r in buses],
        P_d=[r["P_d"] for r in buses],
        base_mva=base_mva,
    )


@dataclass(frozen=True)
class TreeCoordinates:
    """Spanning-tree incidence ``D_t``, its pseudoinverse and the edge map.

    ``edge_map`` is ``D^T D_t^{+T}``: it sends tree coordinates ``phi`` to
    the angle differences across every line.
    """

    D_t: np.ndarray
    D_t_pinv: np.ndarray
    tree_edges: tuple
    edge_map: np.ndarray
    root: int = 0


def select_spanning_tree(network: PowerNetwork, root: int = 0) -> TreeCoordinates:
    """Breadth-first spanning tree from ``root`` (0-based), visiting lines by id."""
    n = network.n
    if not 0 <= root < n:
        raise NetworkError(f"root bus {root + 1} out of range")
    adj = _adjacency(n, network.edges)
    seen = {root}
    queue = deque([root])
    tree = []
    while queue:
        u = queue.popleft()
        for v, k in sorted(adj[u], key=lambda p: p[1]):
            if v not in seen:
                seen.add(v)
                tree.append(k)
                queue.append(v)
    tree = sorted(tree)
    D_t = network.D[:, tree]
    if n > 1:
        D_t_pinv = np.linalg.solve(D_t.T @ D_t, D_t.T)
    else:
        D_t_pinv = np.zeros((0, 1))
    edge_map = network.D.T @ D_t_pinv.T
    return TreeCoordinates(
        D_t=_frozen(D_t),
        D_t_pinv=_frozen(D_t_pinv),
        tree_edges=tuple(tree),
        edge_map=_frozen(edge_map),
        root=root,
    )


def line_angles(tree: TreeCoordinates, phi) -> np.ndarray:
    """Angle differences ``D^T D_t^{+T} phi`` across all lines."""
    return tree.edge_map @ np.asarray(phi, dtype=float)


def potential_energy(tree: TreeCoordinates, gamma, phi) -> float:
    return float(-np.sum(gamma * np.cos(line_angles(tree, phi))))


def hessian_at_angles(tree: TreeCoordinates, gamma, eta) -> np.ndarray:
    """The matrix ``D_t^+ D Gamma diag(cos eta) D^T D_t^{+T}``.

    Evaluated at the actual line angles it is the Hessian of the potential;
    at ``eta = 0`` and ``eta = gamma_max * 1`` it gives the upper and lower
    bounds used over the security region.
    """
    E = tree.edge_map
    w = np.asarray(gamma) * np.cos(np.broadcast_to(eta, (E.shape[0],)))
    H = E.T @ (w[:, None] * E)
    return 0.5 * (H + H.T)


def potential_derivatives(tree: TreeCoordinates, gamma, phi):
    """Gradient and Hessian of the line potential at ``phi``."""
    eta = line_angles(tree, phi)
    grad = tree.edge_map.T @ (gamma * np.sin(eta))
    return grad, hessian_at_angles(tree, gamma, eta)
