"""Lossless power flow as a convex program, with angle recovery.

The AC power flow on a lossless, voltage-uniform network is equivalent
to minimizing the reactive-loss proxy

    sum_k beta_k psi(rho_k),    psi(x) = x arcsin(x) + sqrt(1-x^2) - pi/2

over per-arc sines rho_k subject to flow conservation, with |rho_k|
capped at min(1, pbar_k/beta_k). psi is the antiderivative of arcsin
started at -1, so at an interior optimum the conservation duals are
exactly the phase angles: arcsin(rho_k) = theta_i - theta_j. When the
optimum pins some |rho_k| at its cap no consistent angles exist and the
grid cannot be synchronized at that injection profile; solve_pf then
reports boundary_hit.

Two independent solvers are provided. solve_pf eliminates conservation
exactly through a spanning-tree parameterization and runs Newton on the
chord flows; energy_function_solve minimizes the classical energy
function in angle space. Their agreement on interior instances is a
standing cross-check used by the test suite.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DomainError, NoConvergenceError, UnbalancedInjectionsError
from .network import Network

logger = logging.getLogger(__name__)

MARGIN = 1e-6


def psi(x):
    """Reactive-loss integrand, the antiderivative of arcsin from -1.

    Accepts scalars or arrays; raises DomainError outside [-1, 1].
    psi(-1) = psi(1) = 0 and psi(0) = 1 - pi/2.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(np.abs(arr) > 1.0 + 1e-12):
        raise DomainError("psi argument outside [-1, 1]")
    arr = np.clip(arr, -1.0, 1.0)
    val = arr * np.arcsin(arr) + np.sqrt(1.0 - arr * arr) - np.pi / 2.0
    if np.isscalar(x):
        return float(val)
    return val


def psi_prime(x):
    return np.arcsin(x)


def psi_second(x):
    return 1.0 / np.sqrt(1.0 - np.asarray(x, dtype=float) ** 2)


@dataclass
class FlowState:
    """Result of a power flow solve.

    rho are the per-arc sines sin(theta_i - theta_j); theta the bus
    angles with the slack grounded at zero. feasible is False when the
    optimum was pinned at a |rho| cap (boundary_hit True), in which
    case rho is the clipped boundary point and theta is a best-effort
    tree-consistent recovery kept for diagnostics. objective is the
    value of the solving formulation at the returned point.
    """

    rho: np.ndarray
    theta: np.ndarray
    feasible: bool
    boundary_hit: bool
    objective: float
    iterations: int = 0

    def flows(self, net: Network) -> np.ndarray:
        return net.beta * self.rho


def pf_objective(net: Network, rho: np.ndarray) -> float:
    """The convex PF objective sum_k beta_k psi(rho_k)."""
    return float(np.sum(net.beta * psi(np.asarray(rho, dtype=float))))


class _TreeBasis:
    """Spanning-tree factorization of the conservation equations.

    Flow vectors satisfying A (beta rho) = q form an affine set
    f = f0 + K y indexed by chord flows y; the tree block of the
    reduced incidence matrix is invertible, so conservation holds
    exactly for every y.
    """

    def __init__(self, net: Network):
        n, m = net.n_bus, net.n_line
        parent_arc = {}
        seen = {net.slack_index}
        order = [net.slack_index]
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for k in range(m):
            adj[net.from_index[k]].append((net.to_index[k], k))
            adj[net.to_index[k]].append((net.from_index[k], k))
        queue = [net.slack_index]
        tree: list[int] = []
        while queue:
            v = queue.pop(0)
            for w, k in adj[v]:
                if w not in seen:
                    seen.add(w)
                    parent_arc[w] = k
                    tree.append(k)
                    order.append(w)
                    queue.append(w)
        self.tree = np.array(sorted(tree), dtype=int)
        in_tree = np.zeros(m, dtype=bool)
        in_tree[self.tree] = True
        self.chords = np.flatnonzero(~in_tree)
        keep = [i for i in range(n) if i != net.slack_index]
        a_red = net.incidence[keep, :]
        t_mat = a_red[:, self.tree]
        self._lu = scipy.linalg.lu_factor(t_mat)
        self._a_red = a_red
        self._keep = keep
        self.m = m
        self.net = net

    def particular_flow(self, q: np.ndarray) -> np.ndarray:
        f = np.zeros(self.m)
        f[self.tree] = scipy.linalg.lu_solve(self._lu, q[self._keep])
        return f

    def chord_map(self) -> np.ndarray:
        """Columns give the tree-flow response to a unit chord flow."""
        K = np.zeros((self.m, self.chords.size))
        if self.chords.size:
            rhs = -self._a_red[:, self.chords]
            K[self.tree, :] = scipy.linalg.lu_solve(self._lu, rhs)
            K[self.chords, np.arange(self.chords.size)] = 1.0
        return K


def _extended_psi_terms(rho, cap):
    """psi value/derivatives with a C1 quadratic continuation beyond cap.

    Inside |rho| <= cap the true psi applies. Beyond, the function
    continues with matching value and slope and constant curvature
    psi''(cap), preserving convexity and smoothness so the interior
    optimum is untouched while boundary-seeking solves stay finite.
    """
    rho = np.asarray(rho, dtype=float)
    cap = np.asarray(cap, dtype=float)
    s = np.sign(rho)
    edge = s * cap
    inside = np.abs(rho) <= cap
    safe = np.where(inside, rho, edge)
    v_in = psi(safe)
    g_in = psi_prime(safe)
    h_in = psi_second(safe)
    d = rho - edge
    v_out = v_in + g_in * d + 0.5 * h_in * d * d
    g_out = g_in + h_in * d
    val = np.where(inside, v_in, v_out)
    grad = np.where(inside, g_in, g_out)
    hess = h_in  # already the edge curvature where outside
    return val, grad, hess


def solve_pf(
    net: Network,
    injections: np.ndarray,
    enforce_thermal_cap: bool = True,
    margin: float = MARGIN,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> FlowState:
    """Solve the convex lossless power flow for balanced injections.

    Parameters
    ----------
    net : Network
    injections : array
        Per-bus net injections, summing to zero within 1e-9.
    enforce_thermal_cap : bool
        When True the per-arc cap is min(1, pbar/beta); when False only
        the synchronization cap |rho| < 1 applies (used by Monte Carlo
        counting, where thermal overloads are events, not constraints).
    margin : float
        Offset turning the strict cap into a closed one.

    Returns
    -------
    FlowState
        With boundary_hit True (and feasible False) when the optimum is
        pinned within 10*margin of a cap, the loss-of-synchrony
        signal.
    """
    q = np.asarray(injections, dtype=float)
    if q.shape != (net.n_bus,):
        raise UnbalancedInjectionsError(
            f"injection vector length {q.shape} != ({net.n_bus},)"
        )
    if abs(q.sum()) > 1e-9:
        raise UnbalancedInjectionsError(f"injections sum to {q.sum():.3e}, not 0")

    if enforce_thermal_cap:
        cap_full = net.effective_cap
    else:
        cap_full = np.ones(net.n_line)
    cap = cap_full - margin

    basis = _TreeBasis(net)
    f0 = basis.particular_flow(q)
    K = basis.chord_map()
    beta = net.beta

    y = np.zeros(basis.chords.size)
    iters = 0
    if y.size:
        for iters in range(1, max_iter + 1):
            rho = (f0 + K @ y) / beta
            _, g, h = _extended_psi_terms(rho, cap)
            grad = K.T @ g
            gnorm = np.max(np.abs(grad))
            if gnorm <= tol:
                break
            H = K.T @ ((h / beta)[:, None] * K)
            try:
                step = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), grad)
            except scipy.linalg.LinAlgError:
                step = -grad
            # Armijo backtracking on the extended objective
            val0 = float(np.sum(beta * _extended_psi_terms(rho, cap)[0]))
            slope = float(grad @ step)
            t = 1.0
            for _ in range(60):
                rho_t = (f0 + K @ (y + t * step)) / beta
                val_t = float(np.sum(beta * _extended_psi_terms(rho_t, cap)[0]))
                if val_t <= val0 + 1e-4 * t * slope:
                    break
                t *= 0.5
            y = y + t * step
        else:
            rho = (f0 + K @ y) / beta
            gnorm = np.max(np.abs(K.T @ _extended_psi_terms(rho, cap)[1]))
            if gnorm > 1e-6:
                raise NoConvergenceError(
                    f"pf newton stalled, gradient norm {gnorm:.3e}"
                )

    rho = (f0 + K @ y) / beta if y.size else f0 / beta
    boundary_hit = bool(np.any(np.abs(rho) >= cap_full - 10.0 * margin))
    rho_clipped = np.clip(rho, -cap, cap)
    theta = _tree_angles(net, basis, rho_clipped)
    feasible = not boundary_hit
    objective = pf_objective(net, rho_clipped)
    return FlowState(
        rho=rho_clipped,
        theta=theta,
        feasible=feasible,
        boundary_hit=boundary_hit,
        objective=objective,
        iterations=iters,
    )


def _tree_angles(net: Network, basis: _TreeBasis, rho: np.ndarray) -> np.ndarray:
    """Angles from arcsin(rho) accumulated along the spanning tree."""
    theta = np.zeros(net.n_bus)
    gamma = np.arcsin(np.clip(rho, -1.0, 1.0))
    in_tree = np.zeros(net.n_line, dtype=bool)
    in_tree[basis.tree] = True
    adj: list[list[tuple[int, int, float]]] = [[] for _ in range(net.n_bus)]
    for k in basis.tree:
        i, j = net.from_index[k], net.to_index[k]
        # arc k = (i, j): theta_i - theta_j = gamma_k
        adj[i].append((j, k, -1.0))
        adj[j].append((i, k, +1.0))
    seen = np.zeros(net.n_bus, dtype=bool)
    seen[net.slack_index] = True
    stack = [net.slack_index]
    while stack:
        v = stack.pop()
        for w, k, sgn in adj[v]:
            if not seen[w]:
                seen[w] = True
                theta[w] = theta[v] + sgn * gamma[k]
                stack.append(w)
    return theta


def energy_function_solve(
    net: Network,
    injections: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> FlowState:
    """Minimize the energy function in angle space as an independent check.

    V(theta) = [sum_k beta_k (1 - cos(theta_i - theta_j)) - theta . q] / 2;
    its stationary points satisfy the sine flow equations
    sum_j beta_ij sin(theta_i - theta_j) = q_i. Started from zero angles
    (whose first Newton step is the DC solution), this finds the
    small-angle stationary point when one exists. No thermal caps are
    applied here; the function exists to cross-check solve_pf.
    """
    q = np.asarray(injections, dtype=float)
    if abs(q.sum()) > 1e-9:
        raise UnbalancedInjectionsError(f"injections sum to {q.sum():.3e}, not 0")
    n = net.n_bus
    keep = [i for i in range(n) if i != net.slack_index]
    a_red = net.incidence[keep, :]
    q_red = q[keep]
    beta = net.beta
    theta_red = np.zeros(n - 1)

    def value(tr):
        diff = a_red.T @ tr
        return 0.5 * (np.sum(beta * (1.0 - np.cos(diff))) - tr @ q_red)

    converged = False
    iters = 0
    for iters in range(1, max_iter + 1):
        diff = a_red.T @ theta_red
        residual = a_red @ (beta * np.sin(diff)) - q_red
        if np.max(np.abs(residual), initial=0.0) <= tol:
            converged = True
            break
        weights = beta * np.cos(diff)
        # keep the Newton matrix positive definite; the line search on
        # the true energy keeps this a descent method regardless.
        # the overall 1/2 scaling cancels between gradient and Hessian.
        H = a_red @ (np.maximum(weights, 1e-3 * beta)[:, None] * a_red.T)
        try:
            step = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), residual)
        except scipy.linalg.LinAlgError:
            step = -0.5 * residual
        # full Newton step when it contracts the residual (always true
        # near the solution); otherwise damp on the energy value, whose
        # decrease is resolvable far from the optimum
        r_full = a_red @ (beta * np.sin(a_red.T @ (theta_red + step))) - q_red
        if np.linalg.norm(r_full) <= 0.9 * np.linalg.norm(residual):
            theta_red = theta_red + step
            continue
        val0 = value(theta_red)
        slope = float(0.5 * residual @ step)
        t = 1.0
        for _ in range(60):
            if value(theta_red + t * step) <= val0 + 1e-4 * t * slope:
                break
            t *= 0.5
        theta_red = theta_red + t * step

    if not converged:
        diff = a_red.T @ theta_red
        residual = a_red @ (beta * np.sin(diff)) - q_red
        if np.max(np.abs(residual), initial=0.0) > tol:
            raise NoConvergenceError(
                f"energy newton residual {np.max(np.abs(residual)):.3e} after "
                f"{max_iter} iterations"
            )

    theta = np.zeros(n)
    theta[keep] = theta_red
    diff = theta[net.from_index] - theta[net.to_index]
    rho = np.sin(diff)
    return FlowState(
        rho=rho,
        theta=theta,
        feasible=True,
        boundary_hit=False,
        objective=float(value(theta_red)),
        iterations=iters,
    )
