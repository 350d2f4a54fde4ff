"""Tests for deterministic OPF: DC, sync-constrained, and barrier.

Covers: hand-solvable 2-bus dispatches, infeasibility detection, a
brute-force grid-search oracle for the 3-bus DC-OPF, SCOPF dominance
and tree exactness, and the barrier solve's certificates (cost bound,
angle-from-dual recovery, separation, divergence on loaded lines).
"""
import math

import numpy as np
import pytest

from syncopf import Bus, Generator, InfeasibleError, Line, Network
from syncopf.det_opf import (
    BarrierConfig,
    barrier_config_from_dc,
    generation_cost,
    solve_barrier_opf,
    solve_dc_opf,
    solve_scopf,
)
from syncopf.errors import BarrierDivergenceError
from syncopf.network import injection_vector
from syncopf.powerflow import solve_pf


def two_bus(pbar=2.0, d2=0.5, c1=1.0, c2=0.0):
    return Network(
        buses=[Bus(1), Bus(2, demand=d2)],
        generators=[Generator(bus=1, pmin=0.0, pmax=3.0, c1=c1, c2=c2)],
        lines=[Line(1, 2, beta=1.0, pbar=pbar)],
        slack_bus=2,
    )


def triangle_two_gen():
    return Network(
        buses=[Bus(1), Bus(2), Bus(3, demand=1.5)],
        generators=[
            Generator(bus=1, pmin=0.0, pmax=2.0, c1=1.0, c2=0.1),
            Generator(bus=2, pmin=0.0, pmax=2.0, c1=0.5, c2=0.3),
        ],
        lines=[
            Line(1, 2, beta=1.0, pbar=5.0),
            Line(2, 3, beta=1.0, pbar=5.0),
            Line(1, 3, beta=1.0, pbar=5.0),
        ],
        slack_bus=3,
    )


def test_dc_two_bus_forced_dispatch():
    net = two_bus()
    res = solve_dc_opf(net)
    assert abs(res.dispatch.p[0] - 0.5) < 1e-9
    assert abs(res.flows[0] - 0.5) < 1e-9
    assert abs(res.objective - 0.25) < 1e-9


def test_dc_two_bus_thermal_infeasible():
    net = two_bus(pbar=0.4)
    with pytest.raises(InfeasibleError):
        solve_dc_opf(net)


def test_dc_triangle_matches_grid_search():
    net = triangle_two_gen()
    res = solve_dc_opf(net)

    # oracle: refine a 2-d grid over (p1, p2) with p1 + p2 = 1.5 enforced,
    # exact DC flows checked explicitly
    bred = net.bred
    R = net.beta[:, None] * (bred[net.from_index] - bred[net.to_index])

    def feasible_cost(p1):
        p2 = 1.5 - p1
        if not (0 <= p1 <= 2 and 0 <= p2 <= 2):
            return np.inf
        q = np.array([p1, p2, -1.5])
        if np.any(np.abs(R @ q) > net.pbar + 1e-12):
            return np.inf
        return 1.0 * p1**2 + 0.1 * p1 + 0.5 * p2**2 + 0.3 * p2

    lo_v, hi_v = 0.0, 1.5
    best = None
    for _ in range(30):
        grid = np.linspace(lo_v, hi_v, 41)
        costs = [feasible_cost(g) for g in grid]
        i = int(np.argmin(costs))
        best = grid[i]
        span = (hi_v - lo_v) / 40.0
        lo_v, hi_v = max(0.0, best - span), min(1.5, best + span)
    oracle_cost = feasible_cost(best)
    assert abs(res.objective - oracle_cost) < 1e-4
    assert abs(res.dispatch.p[0] - best) < 1e-3


def test_scopf_matches_dc_when_caps_loose():
    net = triangle_two_gen()
    dc = solve_dc_opf(net)
    sc = solve_scopf(net)
    # DC-optimal angle spreads are well inside min(pbar/beta, 1) here
    diff = dc.theta[net.from_index] - dc.theta[net.to_index]
    assert np.max(np.abs(diff)) < np.min(net.effective_cap)
    assert np.allclose(sc.dispatch.p, dc.dispatch.p, atol=1e-8)
    assert abs(sc.objective - dc.objective) < 1e-8


def test_scopf_sync_bound_binds_before_thermal():
    net = two_bus(pbar=2.0, d2=1.2)
    dc = solve_dc_opf(net)
    assert abs(dc.flows[0] - 1.2) < 1e-9  # thermally fine
    with pytest.raises(InfeasibleError):
        solve_scopf(net)


def test_scopf_objective_dominates_dc():
    net = two_bus(pbar=0.9, d2=0.7)
    dc = solve_dc_opf(net)
    sc = solve_scopf(net)
    assert sc.objective >= dc.objective - 1e-10


def test_scopf_tree_flows_exact():
    net = Network(
        buses=[Bus(1), Bus(2, demand=0.3), Bus(3, demand=0.45)],
        generators=[Generator(bus=1, pmin=0.0, pmax=2.0, c1=1.0)],
        lines=[Line(1, 2, beta=1.2, pbar=2.0), Line(2, 3, beta=0.8, pbar=2.0)],
        slack_bus=3,
    )
    sc = solve_scopf(net)
    assert sc.sync_recovered
    q = injection_vector(net, sc.dispatch)
    fs = solve_pf(net, q)
    assert np.allclose(sc.flows, fs.flows(net), atol=1e-8)


def test_scopf_recovery_attached():
    net = two_bus(d2=0.6)
    sc = solve_scopf(net)
    assert sc.recovery is not None
    assert sc.sync_recovered
    assert abs(math.sin(sc.recovery.theta[0]) - 0.6) < 1e-9


# --- barrier ---------------------------------------------------------------

def test_barrier_two_bus_near_optimal():
    net = two_bus()
    cfg = barrier_config_from_dc(net, epsilon=0.01)
    res = solve_barrier_opf(net, cfg)
    # exact optimum dispatches 0.5 at cost 0.25
    assert res.objective <= (1.0 + 2 * 0.01) * 0.25 + 1e-8
    assert abs(res.cost - 0.25) < 0.01
    assert res.recovery.feasible


def test_barrier_angle_certificate():
    net = triangle_two_gen()
    cfg = barrier_config_from_dc(net, epsilon=0.01)
    res = solve_barrier_opf(net, cfg)
    assert res.eps_separation >= 0.05
    assert res.lemma_c_ok
    # delta sits at its cap 1 - |rho|/u at the optimum
    assert np.allclose(res.delta, 1.0 - np.abs(res.rho) / net.effective_cap, atol=1e-5)


def test_barrier_recovery_cost_bound():
    net = triangle_two_gen()
    cfg = barrier_config_from_dc(net, epsilon=0.01)
    res = solve_barrier_opf(net, cfg)
    assert res.recovery_cost_bound_ok(net)


def test_barrier_epsilon_refines_cost():
    net = two_bus()
    gaps = []
    for eps in (0.2, 0.05, 0.01):
        cfg = BarrierConfig(epsilon=eps, cost_floor=0.25)
        res = solve_barrier_opf(net, cfg)
        gaps.append(abs(res.cost - 0.25))
    assert gaps[2] <= gaps[0] + 1e-12


def test_barrier_loaded_line_diverges_or_separates_to_zero():
    # demand close to the sine cap: sin(theta) = 0.995 needs theta ~ 1.47
    net = two_bus(pbar=5.0, d2=0.995)
    cfg = BarrierConfig(epsilon=0.01, cost_floor=0.995**2)
    try:
        res = solve_barrier_opf(net, cfg)
    except BarrierDivergenceError:
        return
    assert res.eps_separation < 0.02


def test_barrier_stage_objectives_nonincreasing():
    net = triangle_two_gen()
    cfg = barrier_config_from_dc(net, epsilon=0.01)
    res = solve_barrier_opf(net, cfg)
    stages = np.array(res.stage_objectives)
    assert np.all(np.diff(stages) <= 1e-9)


def test_barrier_infeasible_balance():
    net = Network(
        buses=[Bus(1), Bus(2, demand=5.0)],
        generators=[Generator(bus=1, pmin=0.0, pmax=1.0, c1=1.0)],
        lines=[Line(1, 2, beta=1.0, pbar=10.0)],
        slack_bus=2,
    )
    with pytest.raises(InfeasibleError):
        solve_barrier_opf(net, BarrierConfig(epsilon=0.01, cost_floor=1.0))


def test_generation_cost_helper():
    net = triangle_two_gen()
    assert abs(generation_cost(net, np.array([1.0, 0.5])) - (1.0 + 0.1 + 0.125 + 0.15)) < 1e-12
