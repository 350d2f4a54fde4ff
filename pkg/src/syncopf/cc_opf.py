"""Chance-constrained OPF with affine wind balancing.

Wind deviations at the sigma-positive buses are independent Gaussians;
generators absorb the aggregate imbalance through participation factors
alpha (p_i(w) = p_i - alpha_i * sum(w)). Angle differences are then
Gaussian with mean from the deterministic linear flow map and standard
deviation

    S_ij(alpha) = sqrt(sum_k sigma_k^2 (Bred_ik - Bred_jk - d_i + d_j)^2)

where d = Bred * M * alpha. Each line carries two conic constraints,

    |mean gap| + eta(eps) * S  <=  pbar/beta   (thermal)
    |mean gap| + eta(eps) * S  <=  1           (synchronization)

with eta the Gaussian tail multiplier. S is convex in alpha, so the
conic terms are handled by cutting planes: tangents of S are substituted
into the linear rows and the QP is re-solved until no constraint is
violated beyond tol_cut. Tangent substitution keeps the active set of
the dense QP engine at the size of the truly binding rows; an auxiliary
epigraph variable per line would pin one always-active row per line and
scale cubically on large cases. The feasible sets are identical.

Generator limits are tightened by eta(eps_gen) times the total wind
standard deviation, not scaled by alpha.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .case_io import ChanceSpec, IterationRecord
from .errors import DomainError, InfeasibleError, IterLimitError, ValidationError
from .network import Dispatch, Network
from .qp import INFEASIBLE, ITER_LIMIT, QuadraticProgram, solve_qp

logger = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


def eta(eps: float, tol: float = 1e-12) -> float:
    """Gaussian tail multiplier: P(Z > eta) = eps for standard normal Z.

    Solves erfc(z / sqrt(2)) = 2 eps by safeguarded Newton (bisection
    fallback keeps the iterate inside a maintained bracket) to 1e-12
    relative accuracy. Defined for eps in (0, 0.5]; eta(0.5) = 0.
    """
    eps = float(eps)
    if not 0.0 < eps <= 0.5:
        raise DomainError(f"eta requires eps in (0, 0.5], got {eps}")
    if eps == 0.5:
        return 0.0
    target = 2.0 * eps
    lo, hi = 0.0, 1.0
    while erfc(hi) > target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e3:  # pragma: no cover - erfc underflows long before this
            break
    z = 0.5 * (lo + hi)
    for _ in range(200):
        f = erfc(z) - target
        if f == 0.0:
            break
        if f > 0.0:  # erfc too large, z too small
            lo = z
        else:
            hi = z
        fp = -_TWO_OVER_SQRT_PI * math.exp(-z * z)
        step = f / fp if fp != 0.0 else 0.0
        z_new = z - step
        if not lo < z_new < hi:
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= tol * max(1.0, abs(z_new)):
            z = z_new
            break
        z = z_new
    return _SQRT2 * z


def _qfun(x: float) -> float:
    # Gaussian upper-tail probability
    return 0.5 * erfc(x / _SQRT2)


@dataclass(frozen=True)
class ConicConstraint:
    """One linearized-flow chance constraint |mean| + eta * S <= bound."""

    line: int
    kind: str  # thermal | sync
    bound: float
    eta: float
    mean_offset: float
    rowdiff_gen: np.ndarray  # angle-gap sensitivity to p (length n_gen)
    rowdiff_wind: np.ndarray  # Bred row difference at wind buses
    sigma_wind: np.ndarray

    def __post_init__(self):
        if self.kind not in ("thermal", "sync"):
            raise ValidationError(f"unknown constraint kind {self.kind!r}")
        if not self.bound > 0.0:
            raise ValidationError(f"conic bound must be positive, got {self.bound}")
        if self.eta < 0.0:
            raise ValidationError("eta must be nonnegative")


def build_conic_constraints(net: Network, chance: ChanceSpec) -> list:
    """Thermal and sync conic constraints, line-major order."""
    if len(chance.eps_line) != net.n_line or len(chance.eps_gen) != net.n_gen:
        raise ValidationError("chance spec does not match network dimensions")
    bred = net.bred
    cons = []
    mu_minus_d = net.wind_mean - net.demand
    for k in range(net.n_line):
        rowdiff = bred[net.from_index[k]] - bred[net.to_index[k]]
        gw = rowdiff[net.wind_index].copy()
        dvec = rowdiff @ net.gen_matrix
        offset = float(rowdiff @ mu_minus_d)
        sig = net.wind_sigma[net.wind_index].copy()
        cons.append(
            ConicConstraint(
                line=k,
                kind="thermal",
                bound=float(net.pbar[k] / net.beta[k]),
                eta=eta(chance.eps_line[k]),
                mean_offset=offset,
                rowdiff_gen=dvec,
                rowdiff_wind=gw,
                sigma_wind=sig,
            )
        )
        cons.append(
            ConicConstraint(
                line=k,
                kind="sync",
                bound=1.0,
                eta=eta(chance.eps_sync[k]),
                mean_offset=offset,
                rowdiff_gen=dvec,
                rowdiff_wind=gw,
                sigma_wind=sig,
            )
        )
    return cons


def mean_angle_gap(con: ConicConstraint, dispatch: Dispatch) -> float:
    return float(con.rowdiff_gen @ dispatch.p + con.mean_offset)


def conic_lhs(con: ConicConstraint, dispatch: Dispatch) -> float:
    """Standard deviation S of the line's angle gap under the dispatch."""
    d = float(con.rowdiff_gen @ dispatch.alpha)
    return float(np.linalg.norm(con.sigma_wind * (con.rowdiff_wind - d)))


def violation(con: ConicConstraint, dispatch: Dispatch) -> float:
    """Signed slack: positive means the conic constraint is violated."""
    return abs(mean_angle_gap(con, dispatch)) + con.eta * conic_lhs(con, dispatch) - con.bound


def analytic_violation_prob(con: ConicConstraint, dispatch: Dispatch) -> float:
    """Exact two-sided Gaussian probability that |angle gap| > bound."""
    s = conic_lhs(con, dispatch)
    m = abs(mean_angle_gap(con, dispatch))
    if s <= 1e-300:
        return 1.0 if m > con.bound else 0.0
    p = _qfun((con.bound - m) / s) + _qfun((con.bound + m) / s)
    return min(p, 1.0)


def one_sided_violation_probs(con: ConicConstraint, dispatch: Dispatch) -> tuple:
    """(upper, lower) tail probabilities of the signed angle gap."""
    s = conic_lhs(con, dispatch)
    m = mean_angle_gap(con, dispatch)
    if s <= 1e-300:
        return (1.0 if m > con.bound else 0.0, 1.0 if -m > con.bound else 0.0)
    return (_qfun((con.bound - m) / s), _qfun((con.bound + m) / s))


def generator_violation_prob(
    p: float, alpha: float, pmin: float, pmax: float, sigma_tot: float
) -> float:
    """Two-sided probability the responding output p - alpha*W leaves its box."""
    sd = abs(alpha) * sigma_tot
    if sd <= 1e-300:
        return 1.0 if (p > pmax or p < pmin) else 0.0
    return min(_qfun((pmax - p) / sd) + _qfun((p - pmin) / sd), 1.0)


def expected_cost(net: Network, dispatch: Dispatch, sigma_tot_sq: float) -> float:
    """Expected quadratic cost under affine response to total wind W."""
    p, a = dispatch.p, dispatch.alpha
    return float(
        np.sum(net.cost_quad * (p * p + sigma_tot_sq * a * a))
        + net.cost_lin @ p
        + np.sum(net.cost_const)
    )


@dataclass(frozen=True)
class Cut:
    """Tangent underestimator of S_l at response level d_hat."""

    line: int
    iteration: int
    d_hat: float
    s_hat: float
    grad: float

    def value(self, d: float) -> float:
        return self.s_hat + self.grad * (d - self.d_hat)


def _tangent(con: ConicConstraint, d_hat: float, iteration: int) -> Cut | None:
    r = con.sigma_wind * (con.rowdiff_wind - d_hat)
    s_hat = float(np.linalg.norm(r))
    if s_hat <= 1e-14:
        return None
    grad = float(-np.sum(con.sigma_wind * r) / s_hat)
    return Cut(line=con.line, iteration=iteration, d_hat=d_hat, s_hat=s_hat, grad=grad)


@dataclass
class CcSolution:
    """Chance-constrained dispatch with its certification data."""

    dispatch: Dispatch
    objective: float
    status: str
    iterations: int
    iteration_log: list = field(default_factory=list)  # of IterationRecord
    objective_trace: list = field(default_factory=list)
    violated_counts: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    cuts: list = field(default_factory=list)
    violations: np.ndarray | None = None  # line-major (thermal, sync) pairs
    binding_thermal: np.ndarray | None = None
    binding_sync: np.ndarray | None = None
    prob_thermal: np.ndarray | None = None
    prob_sync: np.ndarray | None = None
    prob_gen: np.ndarray | None = None
    mean_flow: np.ndarray | None = None


def _assemble_inequalities(net, cons, cuts, eta_t, eta_s):
    """Base deterministic rows plus substituted tangent rows.

    Base rows are the zero tangent S >= 0:  +-mean <= min(bound_t, 1).
    Each stored cut contributes +-mean + eta * tangent(alpha) <= bound
    for every kind with eta > 0 (eta = 0 rows duplicate the base).
    """
    g = net.n_gen
    m = net.n_line
    dmat = np.vstack([cons[2 * k].rowdiff_gen for k in range(m)])
    off = np.array([cons[2 * k].mean_offset for k in range(m)])
    cap = np.minimum(np.array([cons[2 * k].bound for k in range(m)]), 1.0)

    zeros = np.zeros((m, g))
    rows_a = [np.hstack([dmat, zeros]), np.hstack([-dmat, zeros])]
    rows_b = [cap - off, cap + off]

    for cut in cuts:
        k = cut.line
        dvec = cons[2 * k].rowdiff_gen
        intercept = cut.s_hat - cut.grad * cut.d_hat
        kinds = []
        if abs(eta_t[k] - eta_s[k]) < 1e-15:
            if eta_t[k] > 0.0:
                kinds.append((eta_t[k], min(cons[2 * k].bound, 1.0)))
        else:
            if eta_t[k] > 0.0:
                kinds.append((eta_t[k], cons[2 * k].bound))
            if eta_s[k] > 0.0:
                kinds.append((eta_s[k], 1.0))
        for eta_k, bound in kinds:
            coeff = eta_k * cut.grad * dvec
            base = np.zeros(2 * g)
            base[g:] = coeff
            row_p = base.copy()
            row_p[:g] = dvec
            row_m = base.copy()
            row_m[:g] = -dvec
            rhs = bound - eta_k * intercept
            rows_a.append(np.vstack([row_p, row_m]))
            rows_b.append(np.array([rhs - off[k], rhs + off[k]]))

    return np.vstack(rows_a), np.concatenate(rows_b)


def solve_cc_opf(
    net: Network,
    chance: ChanceSpec,
    tol_cut: float = 1e-7,
    max_iter: int = 200,
    add_all_violated: bool = False,
) -> CcSolution:
    """Cutting-plane solve of the chance-constrained OPF.

    Each iteration solves a QP over (p, alpha) whose inequality rows are
    the accumulated tangents, evaluates the true conic violations, and
    either terminates (all <= tol_cut) or cuts the most violated line
    (ties broken toward the lowest line id; add_all_violated cuts every
    violated line at once). Raises InfeasibleError if the tightened
    generation bounds or the QP are infeasible, IterLimitError if the
    loop does not settle within max_iter iterations.
    """
    g, m = net.n_gen, net.n_line
    cons = build_conic_constraints(net, chance)
    eta_t = np.array([cons[2 * k].eta for k in range(m)])
    eta_s = np.array([cons[2 * k + 1].eta for k in range(m)])
    eta_g = np.array([eta(e) for e in chance.eps_gen])

    sigma_tot_sq = float(np.sum(net.wind_sigma**2))
    sigma_tot = math.sqrt(sigma_tot_sq)

    lo_p = np.maximum(net.pmin + eta_g * sigma_tot, 0.0)
    hi_p = net.pmax - eta_g * sigma_tot
    bad = lo_p > hi_p + 1e-12
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise InfeasibleError(
            f"tightened bounds empty for generator {idx}: "
            f"[{lo_p[idx]:.6g}, {hi_p[idx]:.6g}]"
        )
    total = float(np.sum(net.demand - net.wind_mean))
    if np.sum(lo_p) > total + 1e-9 or np.sum(hi_p) < total - 1e-9:
        raise InfeasibleError(
            "tightened generation range cannot meet net demand "
            f"{total:.6g} in [{np.sum(lo_p):.6g}, {np.sum(hi_p):.6g}]"
        )

    quad = np.concatenate([2.0 * net.cost_quad, 2.0 * net.cost_quad * sigma_tot_sq])
    lin = np.concatenate([net.cost_lin, np.zeros(g)])
    a_eq = np.zeros((2, 2 * g))
    a_eq[0, :g] = 1.0
    a_eq[1, g:] = 1.0
    b_eq = np.array([total, 1.0])
    lo = np.concatenate([lo_p, np.zeros(g)])
    hi = np.concatenate([hi_p, np.full(g, np.inf)])
    c3_total = float(np.sum(net.cost_const))

    cuts: list[Cut] = []
    for k in range(m):
        tangent = _tangent(cons[2 * k], 0.0, 0)
        if tangent is not None:
            cuts.append(tangent)

    log: list[IterationRecord] = []
    trace: list[float] = []
    violated_counts: list[int] = []

    for it in range(1, max_iter + 1):
        a_in, b_in = _assemble_inequalities(net, cons, cuts, eta_t, eta_s)
        qp = QuadraticProgram(
            Q=np.diag(quad),
            c=lin,
            A_eq=a_eq,
            b_eq=b_eq,
            A_in=a_in,
            b_in=b_in,
            lo=lo,
            hi=hi,
        )
        sol = solve_qp(qp)
        if sol.status == INFEASIBLE:
            raise InfeasibleError("chance-constrained QP relaxation is infeasible")
        if sol.status == ITER_LIMIT:
            raise IterLimitError("QP engine hit its iteration cap", iterations=it)
        dispatch = Dispatch(p=sol.x[:g], alpha=sol.x[g:])
        viol = np.array([violation(c, dispatch) for c in cons])
        trace.append(sol.objective + c3_total)
        violated_counts.append(int(np.sum(viol > tol_cut)))

        worst = int(np.argmax(viol))
        if viol[worst] <= tol_cut:
            return _package(
                net, cons, dispatch, trace, violated_counts, log, cuts, it, viol, sigma_tot
            )

        log.append(
            IterationRecord(
                iteration=it,
                line=cons[worst].line,
                kind=cons[worst].kind,
                violation=float(viol[worst]),
            )
        )
        if add_all_violated:
            lines_to_cut = sorted(
                {cons[i].line for i in np.flatnonzero(viol > tol_cut)}
            )
        else:
            lines_to_cut = [cons[worst].line]
        for k in lines_to_cut:
            d_hat = float(cons[2 * k].rowdiff_gen @ dispatch.alpha)
            tangent = _tangent(cons[2 * k], d_hat, it)
            if tangent is not None:
                cuts.append(tangent)
        logger.info(
            "cut iteration %d: line %d %s violation %.3e (%d violated)",
            it,
            cons[worst].line,
            cons[worst].kind,
            viol[worst],
            violated_counts[-1],
        )

    raise IterLimitError(
        f"cutting-plane loop did not converge in {max_iter} iterations",
        iterations=max_iter,
    )


def _package(net, cons, dispatch, trace, violated_counts, log, cuts, it, viol, sigma_tot):
    m = net.n_line
    prob_t = np.array([analytic_violation_prob(cons[2 * k], dispatch) for k in range(m)])
    prob_s = np.array([analytic_violation_prob(cons[2 * k + 1], dispatch) for k in range(m)])
    prob_g = np.array(
        [
            generator_violation_prob(
                float(dispatch.p[i]),
                float(dispatch.alpha[i]),
                float(net.pmin[i]),
                float(net.pmax[i]),
                sigma_tot,
            )
            for i in range(net.n_gen)
        ]
    )
    mean_gap = np.array([mean_angle_gap(cons[2 * k], dispatch) for k in range(m)])
    return CcSolution(
        dispatch=dispatch,
        objective=trace[-1],
        status="optimal",
        iterations=it,
        iteration_log=log,
        objective_trace=trace,
        violated_counts=violated_counts,
        constraints=cons,
        cuts=cuts,
        violations=viol,
        binding_thermal=np.array([viol[2 * k] >= -1e-6 for k in range(m)]),
        binding_sync=np.array([viol[2 * k + 1] >= -1e-6 for k in range(m)]),
        prob_thermal=prob_t,
        prob_sync=prob_s,
        prob_gen=prob_g,
        mean_flow=net.beta * mean_gap,
    )
