"""Tests for the grid model and Laplacian operators.

Covers: construction validation, incidence/Laplacian structure, the
grounded reduced inverse, injection vectors under affine response, and
randomized consistency of the linear solve.
"""
import numpy as np
import pytest

from syncopf import (
    Bus,
    DimensionMismatchError,
    DisconnectedGraphError,
    Dispatch,
    Generator,
    Line,
    Network,
    NonPositiveSusceptanceError,
    ValidationError,
    injection_vector,
)


def two_bus(beta=1.0, slack=2):
    return Network(
        buses=[Bus(1), Bus(2, demand=0.5)],
        generators=[Generator(bus=1, pmin=0.0, pmax=2.0, c1=1.0)],
        lines=[Line(1, 2, beta=beta, pbar=1.0)],
        slack_bus=slack,
    )


def triangle(beta=1.0):
    return Network(
        buses=[Bus(1), Bus(2), Bus(3, demand=1.0)],
        generators=[Generator(bus=1, pmin=0.0, pmax=2.0)],
        lines=[
            Line(1, 2, beta=beta, pbar=10.0),
            Line(2, 3, beta=beta, pbar=10.0),
            Line(1, 3, beta=beta, pbar=10.0),
        ],
        slack_bus=3,
    )


def random_connected(rng, n):
    buses = [Bus(i) for i in range(1, n + 1)]
    lines = []
    for i in range(2, n + 1):
        j = int(rng.integers(1, i))
        lines.append(Line(j, i, beta=float(rng.uniform(0.5, 3.0)), pbar=10.0))
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        a, b = rng.choice(np.arange(1, n + 1), size=2, replace=False)
        lines.append(Line(int(a), int(b), beta=float(rng.uniform(0.5, 3.0)), pbar=10.0))
    gens = [Generator(bus=1, pmin=0.0, pmax=5.0)]
    return Network(buses, gens, lines)


def test_two_bus_laplacian_entries():
    net = two_bus()
    assert np.allclose(net.laplacian_op.matrix, [[1.0, -1.0], [-1.0, 1.0]])


def test_two_bus_reduced_inverse_application():
    net = two_bus()
    theta = net.solve_angles(np.array([0.5, -0.5]))
    assert np.allclose(theta, [0.5, 0.0])


def test_laplacian_row_sums_zero():
    rng = np.random.default_rng(7)
    for n in (3, 8, 20):
        net = random_connected(rng, n)
        assert np.allclose(net.laplacian_op.matrix.sum(axis=1), 0.0, atol=1e-12)


def test_triangle_reduced_inverse_matches_hand_computation():
    net = triangle()
    # slack is bus 3, so the reduced system keeps buses 1 and 2
    bred = net.bred
    expect = np.array([[2.0, 1.0], [1.0, 2.0]]) / 3.0
    assert np.allclose(bred[:2, :2], expect, atol=1e-12)
    assert np.allclose(bred[2, :], 0.0)
    assert np.allclose(bred[:, 2], 0.0)


def test_incidence_one_plus_one_minus_per_column():
    net = triangle()
    A = net.incidence
    assert A.shape == (3, 3)
    assert np.all(A.sum(axis=0) == 0)
    assert np.all(np.abs(A).sum(axis=0) == 2)


def test_balanced_solve_reproduces_injections():
    rng = np.random.default_rng(42)
    for n in (4, 17, 50):
        net = random_connected(rng, n)
        q = rng.normal(size=n)
        q -= q.mean()
        theta = net.solve_angles(q)
        assert abs(theta[net.slack_index]) == 0.0
        assert np.allclose(net.laplacian_op.matrix @ theta, q, atol=1e-10)


def test_reduced_inverse_symmetric():
    rng = np.random.default_rng(3)
    net = random_connected(rng, 12)
    bred = net.bred
    assert np.allclose(bred, bred.T, atol=1e-12)


def test_disconnected_graph_rejected():
    with pytest.raises(DisconnectedGraphError):
        Network(
            buses=[Bus(1), Bus(2), Bus(3)],
            generators=[Generator(bus=1, pmin=0.0, pmax=1.0)],
            lines=[Line(1, 2, beta=1.0, pbar=1.0)],
        )


def test_nonpositive_susceptance_rejected():
    with pytest.raises(NonPositiveSusceptanceError):
        Line(1, 2, beta=0.0, pbar=1.0)
    with pytest.raises(NonPositiveSusceptanceError):
        Line(1, 2, beta=-2.0, pbar=1.0)


def test_self_loop_rejected():
    with pytest.raises(ValidationError):
        Line(1, 1, beta=1.0, pbar=1.0)


def test_generator_bounds_validated():
    with pytest.raises(ValidationError):
        Generator(bus=1, pmin=2.0, pmax=1.0)


def test_default_slack_is_highest_bus():
    net = Network(
        buses=[Bus(5), Bus(2)],
        generators=[Generator(bus=2, pmin=0.0, pmax=1.0)],
        lines=[Line(2, 5, beta=1.0, pbar=1.0)],
    )
    assert net.slack_bus == 5


def test_injection_vector_zero_wind():
    net = triangle()
    disp = Dispatch(p=np.array([1.0]), alpha=np.array([1.0]))
    q = injection_vector(net, disp)
    assert np.allclose(q, [1.0, 0.0, -1.0])


def test_injection_vector_affine_response():
    # p=(1,0) at buses 1,2; d=(0,0.8); alpha=(1,0); w=(0.1,0)
    net = Network(
        buses=[Bus(1), Bus(2, demand=0.8)],
        generators=[
            Generator(bus=1, pmin=0.0, pmax=2.0),
            Generator(bus=2, pmin=0.0, pmax=2.0),
        ],
        lines=[Line(1, 2, beta=1.0, pbar=5.0)],
    )
    disp = Dispatch(p=np.array([1.0, 0.0]), alpha=np.array([1.0, 0.0]))
    q = injection_vector(net, disp, wind=np.array([0.1, 0.0]))
    assert np.allclose(q, [1.0, -0.8])


def test_injection_vector_sum_invariant_under_wind():
    rng = np.random.default_rng(11)
    net = triangle()
    disp = Dispatch(p=np.array([1.0]), alpha=np.array([1.0]))
    for _ in range(20):
        w = rng.normal(size=3)
        q = injection_vector(net, disp, wind=w)
        assert abs(q.sum() - (1.0 - 1.0)) < 1e-12


def test_injection_vector_slope_in_wind():
    # finite-difference slope wrt w_j is (indicator_j - M alpha) exactly
    net = triangle()
    disp = Dispatch(p=np.array([1.0]), alpha=np.array([1.0]))
    base = injection_vector(net, disp, wind=np.zeros(3))
    for j in range(3):
        w = np.zeros(3)
        w[j] = 1.0
        slope = injection_vector(net, disp, wind=w) - base
        expect = np.zeros(3)
        expect[j] += 1.0
        expect -= net.gen_matrix @ disp.alpha
        assert np.allclose(slope, expect, atol=1e-12)


def test_injection_vector_dimension_mismatch():
    net = triangle()
    disp = Dispatch(p=np.array([1.0, 2.0]), alpha=np.array([0.5, 0.5]))
    with pytest.raises(DimensionMismatchError):
        injection_vector(net, disp)


def test_unknown_bus_reference_rejected():
    with pytest.raises(ValidationError):
        Network(
            buses=[Bus(1), Bus(2)],
            generators=[Generator(bus=9, pmin=0.0, pmax=1.0)],
            lines=[Line(1, 2, beta=1.0, pbar=1.0)],
        )
