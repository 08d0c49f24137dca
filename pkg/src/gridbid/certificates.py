"""LISS-Lyapunov certificate for the closed loop and inter-event time bounds.

The certificate function is ``W(x) = V(x) + V_eps(x)`` where ``V_eps`` adds
three cross terms weighted by ``eps0 * eps_i``. Its Hessian is bounded on the
angle region ``|D^T D_t^{+T} phi| <= gamma`` by the block matrices
``K1 <= H1(phi) <= K2`` and ``H2``, and its derivative along the flow is
bounded by the quadratic form of ``Xi`` in the scaled coordinates
``(omega, b/sigma, P_g/sigma, lambda/sigma, phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SystemState, energy_function_V, find_equilibrium, gradient_V, state_slices
from .network import hessian_at_angles, line_angles

PD_TOL = 1e-10


class CertificateError(RuntimeError):
    """The epsilon search could not certify the given region and gains."""


@dataclass(frozen=True)
class EpsilonParameters:
    eps0: float
    eps1: float
    eps2: float
    eps3: float

    def __post_init__(self):
        for k in ("eps0", "eps1", "eps2", "eps3"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")


@dataclass(frozen=True)
class RegionOmega:
    """States whose line angles all lie in ``[-gamma, gamma]``."""

    gamma: float

    def __post_init__(self):
        if not 0 < self.gamma < math.pi / 2:
            raise ValueError(f"gamma must lie in (0, pi/2), got {self.gamma}")

    def contains(self, tree, phi, slack: float = 0.0) -> bool:
        eta = line_angles(tree, phi)
        return bool(eta.size == 0 or np.max(np.abs(eta)) <= self.gamma + slack)


@dataclass(frozen=True)
class LyapunovCertificate:
    eps: EpsilonParameters
    gamma: float
    c1: float
    c2: float
    alpha_hat: float
    chi: float
    alpha: float
    xi_matrix_min_eig: float
    equilibrium: SystemState = field(repr=False)
    B_norm: float = 1.0
    checks: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class LipschitzConstants:
    L_f: float
    L_g: float
    L_h: float
    L_W: float

    @property
    def L(self) -> float:
        return self.L_f + self.L_g + self.L_h


def _min_eig(S) -> float:
    S = np.atleast_2d(S)
    if S.size == 0:
        return math.inf
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])


def _max_eig(S) -> float:
    S = np.atleast_2d(S)
    if S.size == 0:
        return -math.inf
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


def admissible_gamma_range(network, tree, equilibrium: SystemState):
    eta = line_angles(tree, equilibrium.phi)
    lo = float(np.max(np.abs(eta))) if eta.size else 0.0
    return lo, math.pi / 2


def default_gamma(network, tree, equilibrium: SystemState) -> float:
    """Midpoint between the equilibrium's largest line angle and pi/2."""
    lo, hi = admissible_gamma_range(network, tree, equilibrium)
    return 0.5 * (lo + hi)


def w_epsilon(state: SystemState, equilibrium: SystemState, eps: EpsilonParameters, gains, network, tree) -> float:
    V = energy_function_V(network, tree, gains, state, equilibrium)
    e0 = eps.eps0
    s2 = gains.sigma ** 2
    dphi = state.phi - equilibrium.phi
    db = state.b - equilibrium.b
    dp = state.P_g - equilibrium.P_g
    dl = state.lam - equilibrium.lam
    cross = (
        e0 * eps.eps1 * dphi @ (tree.D_t_pinv @ (network.M * state.omega))
        - e0 * eps.eps2 / s2 * db @ (gains.tau_g * dp)
        - e0 * eps.eps3 / s2 * dl * np.sum(gains.tau_g * dp)
    )
    return float(V + cross)


def gradient_w_epsilon(state, equilibrium, eps: EpsilonParameters, gains, network, tree) -> np.ndarray:
    n = network.n
    s = state_slices(n)
    g = gradient_V(network, tree, gains, state, equilibrium)
    e0, e1, e2, e3 = eps.eps0, eps.eps1, eps.eps2, eps.eps3
    s2 = gains.sigma ** 2
    dphi = state.phi - equilibrium.phi
    db = state.b - equilibrium.b
    dp = state.P_g - equilibrium.P_g
    dl = state.lam - equilibrium.lam
    tg = gains.tau_g
    g[s[0]] += e0 * e1 * tree.D_t_pinv @ (network.M * state.omega)
    g[s[1]] += e0 * e1 * network.M * (tree.D_t_pinv.T @ dphi)
    g[s[2]] += -e0 * e2 / s2 * tg * dp
    g[s[3]] += -e0 * e2 / s2 * tg * db - e0 * e3 / s2 * dl * tg
    g[s[4]] += -e0 * e3 / s2 * np.sum(tg * dp)
    return g


def hessian_blocks(eps: EpsilonParameters, gamma: float, network, tree, gains):
    """``K1``, ``K2`` over ``(phi, omega)`` and the constant block ``H2`` over ``(b, P_g, lambda)``."""
    n = network.n
    Mdiag = np.diag(network.M)
    Delta = eps.eps0 * eps.eps1 * tree.D_t_pinv @ Mdiag
    U_lo = hessian_at_angles(tree, network.gamma, gamma)
    U_hi = hessian_at_angles(tree, network.gamma, 0.0)
    K1 = np.block([[U_lo, Delta], [Delta.T, Mdiag]])
    K2 = np.block([[U_hi, Delta], [Delta.T, Mdiag]])
    a = eps.eps0 * eps.eps2
    c = eps.eps0 * eps.eps3
    tg = np.diag(gains.tau_g)
    H2 = np.zeros((2 * n + 1, 2 * n + 1))
    H2[:n, :n] = np.diag(gains.tau_b)
    H2[:n, n:2 * n] = -a * tg
    H2[n:2 * n, :n] = -a * tg
    H2[n:2 * n, n:2 * n] = tg
    H2[n:2 * n, 2 * n] = -c * gains.tau_g
    H2[2 * n, n:2 * n] = -c * gains.tau_g
    H2[2 * n, 2 * n] = gains.tau_lambda
    return K1, K2, H2 / gains.sigma ** 2


def xi_blocks(n: int):
    """Index slices of ``Xi`` in the order ``(omega, b/sigma, P_g/sigma, lambda/sigma, phi)``."""
    return (
        slice(0, n),
        slice(n, 2 * n),
        slice(2 * n, 3 * n),
        slice(3 * n, 3 * n + 1),
        slice(3 * n + 1, 4 * n),
    )


def assemble_xi_matrix(eps: EpsilonParameters, gamma: float, network, tree, cost, gains) -> np.ndarray:
    n = network.n
    e0, e1, e2, e3 = eps.eps0, eps.eps1, eps.eps2, eps.eps3
    sig, rho = gains.sigma, gains.rho
    M = np.diag(network.M)
    A = np.diag(network.A)
    Qinv = np.diag(1.0 / cost.q)
    Dt, Dp = np.asarray(tree.D_t), np.asarray(tree.D_t_pinv)
    t_gb = np.diag(gains.tau_g / gains.tau_b)
    t_gl = np.diag(gains.tau_g / gains.tau_lambda)
    one = np.ones((n, 1))
    J = one @ one.T
    Mcal = M @ Dp.T @ Dt.T + Dt @ Dp @ M
    Tcal = t_gl @ J + J @ t_gl
    U_lo = hessian_at_angles(tree, network.gamma, gamma)

    w, bb, p, lm, ph = xi_blocks(n)
    X = np.zeros((4 * n, 4 * n))

    def put(r, c, block):
        X[r, c] = block
        if r != c:
            X[c, r] = np.asarray(block).T

    put(w, w, 2.0 / e0 * A - e1 * Mcal)
    put(w, bb, -e2 * sig * np.eye(n))
    put(w, lm, -e3 * sig * one)
    put(w, ph, e1 * A @ Dp.T)
    put(bb, bb, -2.0 * e2 * np.eye(n) + 2.0 / e0 * Qinv)
    put(bb, p, -e2 * (Qinv @ t_gb + rho * J))
    put(bb, lm, (e2 - e3) * one)
    put(p, p, 2.0 * e2 * t_gb + 2.0 / e0 * rho * J - e3 * Tcal)
    put(p, lm, -e3 * n * rho * one)
    put(p, ph, -e1 * sig * Dp.T)
    put(lm, lm, np.array([[2.0 * n * e3]]))
    put(ph, ph, 2.0 * e1 * U_lo)
    return 0.5 * (X + X.T)


def scaling_matrix(n: int, sigma: float) -> np.ndarray:
    """Maps ``x - x_bar`` in state order to the scaled order used by ``Xi``."""
    s = state_slices(n)
    w, bb, p, lm, ph = xi_blocks(n)
    P = np.zeros((4 * n, 4 * n))
    P[w, s[1]] = np.eye(n)
    P[bb, s[2]] = np.eye(n) / sigma
    P[p, s[3]] = np.eye(n) / sigma
    P[lm, s[4]] = 1.0 / sigma
    P[ph, s[0]] = np.eye(n - 1)
    return P


def epsilon_conditions(eps: EpsilonParameters, gamma: float, network, tree, gains):
    """Smallest eigenvalues of the three Schur-complement conditions on ``eps0``."""
    a2 = (eps.eps0 * eps.eps2) ** 2
    c2 = (eps.eps0 * eps.eps3) ** 2
    U_lo = hessian_at_angles(tree, network.gamma, gamma)
    Dp = np.asarray(tree.D_t_pinv)
    k1 = _min_eig(U_lo - (eps.eps0 * eps.eps1) ** 2 * Dp @ np.diag(network.M) @ Dp.T)
    diff = gains.tau_b - a2 * gains.tau_g
    k2 = float(np.min(diff))
    if k2 > 0:
        k3 = float(gains.tau_lambda - c2 * np.sum(gains.tau_b * gains.tau_g / diff))
    else:
        k3 = -math.inf
    return k1, k2, k3


def _lower_right_min_eig(eps, gamma, network, tree, cost, gains) -> float:
    n = network.n
    X = assemble_xi_matrix(eps, gamma, network, tree, cost, gains)
    return _min_eig(X[2 * n:, 2 * n:])


def find_epsilon(network, tree, cost, gains, gamma: float | None = None, *, equilibrium=None,
                 B_norm: float = 1.0, max_doublings: int = 60, max_halvings: int = 200) -> LyapunovCertificate:
    """Search ``eps`` making ``W`` an LISS-Lyapunov function on the gamma-region.

    ``eps1 = eps3 = 1``; ``eps2`` doubles from 1 until the trailing
    ``(P_g, lambda, phi)`` block of ``Xi`` is positive definite, then
    ``eps0`` halves from 1 until ``Xi`` and the Hessian conditions hold.
    """
    if equilibrium is None:
        equilibrium = find_equilibrium(network, tree, cost, gains)
    lo, hi = admissible_gamma_range(network, tree, equilibrium)
    if gamma is None:
        gamma = default_gamma(network, tree, equilibrium)
    if not lo < gamma < hi:
        raise CertificateError(f"gamma = {gamma} is not admissible: need {lo:.6g} < gamma < pi/2")
    if not B_norm > 0:
        raise ValueError("B_norm must be positive")

    e2 = 1.0
    for _ in range(max_doublings + 1):
        tail = _lower_right_min_eig(EpsilonParameters(1.0, 1.0, e2, 1.0), gamma, network, tree, cost, gains)
        if tail > PD_TOL:
            break
        e2 *= 2.0
    else:
        raise CertificateError(
            f"no certificate found for given gamma/gains: trailing block of Xi not positive definite "
            f"after {max_doublings} doublings of eps2 (min eig {tail:.3e})"
        )

    e0 = 1.0
    last = None
    for _ in range(max_halvings + 1):
        eps = EpsilonParameters(e0, 1.0, e2, 1.0)
        conds = epsilon_conditions(eps, gamma, network, tree, gains)
        xi_min = _min_eig(assemble_xi_matrix(eps, gamma, network, tree, cost, gains))
        last = (conds, xi_min)
        if min(conds) > PD_TOL and xi_min > PD_TOL:
            break
        e0 *= 0.5
    else:
        conds, xi_min = last
        names = ["Hessian angle block", "bid/setpoint block", "multiplier block", "Xi"]
        vals = list(conds) + [xi_min]
        worst = names[int(np.argmin(vals))]
        raise CertificateError(
            f"no certificate found for given gamma/gains: {worst} condition violated after "
            f"{max_halvings} halvings of eps0 (min eigenvalues {', '.join(f'{v:.3e}' for v in vals)})"
        )

    K1, K2, H2 = hessian_blocks(eps, gamma, network, tree, gains)
    c1 = min(_min_eig(K1), _min_eig(H2))
    c2 = max(_max_eig(K2), _max_eig(H2))
    X = assemble_xi_matrix(eps, gamma, network, tree, cost, gains)
    P = scaling_matrix(network.n, gains.sigma)
    alpha_hat = 0.5 * e0 * _min_eig(P.T @ X @ P)
    L_W = c2
    chi = 0.5 * alpha_hat / (L_W * B_norm)
    alpha = alpha_hat - L_W * B_norm * chi
    checks = {
        "K1": _min_eig(K1),
        "H2": _min_eig(H2),
        "Xi": xi_min,
        "Xi_trailing_block": _lower_right_min_eig(eps, gamma, network, tree, cost, gains),
        "cond_angle": conds[0],
        "cond_bid": conds[1],
        "cond_multiplier": conds[2],
    }
    return LyapunovCertificate(
        eps=eps, gamma=float(gamma), c1=c1, c2=c2, alpha_hat=alpha_hat, chi=chi, alpha=alpha,
        xi_matrix_min_eig=xi_min, equilibrium=equilibrium, B_norm=float(B_norm), checks=checks,
    )


def sampled_matrices(network, tree, cost, gains):
    """Linear parts of the split ``x' = f(x) + g(x) + h(x)``.

    Returns ``(F0, F1, G, Hm)``: ``f``'s Jacobian is ``F0 + F1 @ hess(phi)``
    embedded in the ``(phi, omega)`` rows, ``G`` is the matrix of the affine
    market map ``g`` and ``Hm`` that of ``h``.
    """
    n = network.n
    s = state_slices(n)
    N = 4 * n
    Minv = np.diag(1.0 / network.M)
    F0 = np.zeros((N, N))
    F0[s[0], s[1]] = tree.D_t.T
    F0[s[1], s[1]] = -Minv @ np.diag(network.A)
    F1 = np.zeros((N, n - 1))
    F1[s[1], :] = -Minv @ tree.D_t
    one = np.ones((n, 1))
    G = np.zeros((N, N))
    tb = np.diag(1.0 / gains.tau_b)
    tg = np.diag(1.0 / gains.tau_g)
    G[s[2], s[2]] = -tb @ np.diag(1.0 / cost.q)
    G[s[2], s[3]] = tb
    G[s[3], s[1]] = -gains.sigma ** 2 * tg
    G[s[3], s[2]] = -tg
    G[s[3], s[3]] = -gains.rho * tg @ (one @ one.T)
    G[s[3], s[4]] = tg @ one
    G[s[4], s[3]] = -one.T / gains.tau_lambda
    Hm = np.zeros((N, N))
    Hm[s[1], s[3]] = Minv
    return F0, F1, G, Hm


def lipschitz_constants(network, tree, cost, gains, certificate: LyapunovCertificate) -> LipschitzConstants:
    """Global Lipschitz constants of ``f``, ``g``, ``h`` and of ``grad W`` on the region.

    ``f``'s Jacobian is ``F0 + F1 hess U(phi)`` and ``|hess U| <= |U(0)|``,
    so ``|F0| + |F1| |U(0)|`` bounds it everywhere.
    """
    F0, F1, G, Hm = sampled_matrices(network, tree, cost, gains)
    U_hi = hessian_at_angles(tree, network.gamma, 0.0)
    L_f = np.linalg.norm(F0, 2) + (np.linalg.norm(F1, 2) * np.linalg.norm(U_hi, 2) if U_hi.size else 0.0)
    return LipschitzConstants(
        L_f=float(L_f),
        L_g=float(np.linalg.norm(G, 2)),
        L_h=float(np.linalg.norm(Hm, 2)),
        L_W=float(certificate.c2),
    )


def step_bounds(constants: LipschitzConstants, alpha: float, beta: float | None = None):
    """Upper bounds ``(xi_bar, zeta_bar)`` on the inter-event times.

    Needs only the Lipschitz constants and the decrease rate, no equilibrium data.
    """
    if beta is None:
        beta = 0.5 * alpha
    if not 0 < beta < alpha:
        raise ValueError(f"need 0 < beta < alpha, got beta = {beta}, alpha = {alpha}")
    Lf, Lg, Lh, LW = constants.L_f, constants.L_g, constants.L_h, constants.L_W
    L = constants.L
    xi = math.log1p(beta * (Lf + Lg) / (L * (LW * Lh + beta))) / (Lf + Lg)
    zeta = math.log1p(Lf * (alpha - beta) / (Lg * (L * LW + alpha) + (alpha - beta) * (Lf + Lg))) / Lf
    return xi, zeta


def certified_period(xi_bar: float, zeta_bar: float):
    """Largest gap and round length admissible under both bounds.

    Inner gaps and rounds are each kept below ``min(xi_bar, zeta_bar)``.
    """
    return min(xi_bar, zeta_bar)


def certificate_report(cert: LyapunovCertificate, lips: LipschitzConstants | None = None, bounds=None,
                       beta: float | None = None) -> dict:
    out = {
        "eps": {"eps0": cert.eps.eps0, "eps1": cert.eps.eps1, "eps2": cert.eps.eps2, "eps3": cert.eps.eps3},
        "gamma": cert.gamma,
        "c1": cert.c1,
        "c2": cert.c2,
        "alpha_hat": cert.alpha_hat,
        "alpha": cert.alpha,
        "chi": cert.chi,
        "B_norm": cert.B_norm,
        "min_eigenvalues": dict(cert.checks),
    }
    if lips is not None:
        out["lipschitz"] = {"L_f": lips.L_f, "L_g": lips.L_g, "L_h": lips.L_h, "L": lips.L, "L_W": lips.L_W}
    if bounds is not None:
        out["beta"] = beta
        out["xi_bar"], out["zeta_bar"] = bounds
    return out
