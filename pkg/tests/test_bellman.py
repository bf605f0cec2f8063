import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import random_flow, random_instance, random_kernel
from finmfg.bellman import backward_sweep, best_response_value, solve_backward
from finmfg.core import CostModel, EntropySeparableCost, FiniteMFGInstance, StateSet, TimeGrid, total_cost
from finmfg.errors import ConvergenceError, DimensionError


def test_zero_costs_uniform_kernel_zero_value_without_entropy_offset():
    inst = FiniteMFGInstance(StateSet.labelled(3), TimeGrid(2), EntropySeparableCost(np.zeros((3, 3)), 0.2), [1, 0, 0])
    U, P = solve_backward(inst, np.full((3, 3), 1 / 3))
    np.testing.assert_allclose(P, 1 / 3, atol=1e-15)
    # the entropy term makes each step worth -eps*log 3
    np.testing.assert_allclose(U[0], -2 * 0.2 * np.log(3), atol=1e-14)


def test_zero_costs_zero_value():
    inst = FiniteMFGInstance(StateSet.labelled(3), TimeGrid(2), EntropySeparableCost(np.zeros((3, 3)), 0.0), [1, 0, 0])
    U, _ = solve_backward(inst, np.full((3, 3), 1 / 3))
    np.testing.assert_array_equal(U, 0.0)
    assert best_response_value(inst, np.full((3, 3), 1 / 3)) == 0.0


def test_single_softmax_step():
    cost = EntropySeparableCost(np.zeros((2, 2)), 1.0, terminal_fn=lambda M: np.array([0.0, np.log(3)]))
    inst = FiniteMFGInstance(StateSet.labelled(2), TimeGrid(1), cost, [0.5, 0.5])
    belief = np.array([[0.2, 0.8], [0.9, 0.1]])
    U, P = solve_backward(inst, belief)
    np.testing.assert_allclose(U[0], -np.log(4 / 3), atol=1e-15)
    np.testing.assert_allclose(P[0], [[0.75, 0.25], [0.75, 0.25]], atol=1e-15)
    assert best_response_value(inst, belief) == pytest.approx(-np.log(4 / 3), abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_dpp_consistency(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 3, 3)
    belief = random_flow(rng, inst)
    U, P = solve_backward(inst, belief)
    assert total_cost(inst, P, belief) == pytest.approx(float(inst.initial @ U[0]), abs=1e-9)
    np.testing.assert_array_equal(U[-1], inst.cost.terminal_vector(belief[-1]))


def test_best_response_beats_random_kernels():
    rng = np.random.default_rng(11)
    inst = random_instance(rng, 4, 3)
    belief = random_flow(rng, inst)
    v = best_response_value(inst, belief)
    for _ in range(100):
        assert v <= total_cost(inst, random_kernel(rng, inst, alpha=0.5), belief) + 1e-9


def test_zero_entropy_matches_deterministic_policy_search():
    rng = np.random.default_rng(12)
    inst = random_instance(rng, 3, 2, eps=0.0)
    belief = random_flow(rng, inst)
    U, P = solve_backward(inst, belief)
    best = np.inf
    # every deterministic Markov policy: a next state per (k, x)
    for choice in itertools.product(range(3), repeat=6):
        Q = np.zeros((2, 3, 3))
        for i, y in enumerate(choice):
            Q[i // 3, i % 3, y] = 1.0
        best = min(best, total_cost(inst, Q, belief))
    assert float(inst.initial @ U[0]) == pytest.approx(best, abs=1e-12)
    assert set(np.unique(P)) <= {0.0, 1.0}


def test_general_cost_path_matches_entropy_path():
    rng = np.random.default_rng(13)
    inst = random_instance(rng, 3, 2, eps=0.5)
    c = inst.cost
    general = FiniteMFGInstance(inst.states, inst.time, CostModel(c.running, c.terminal), inst.initial)
    belief = random_flow(rng, inst)
    U1, P1 = solve_backward(inst, belief)
    U2, P2 = solve_backward(general, belief)
    np.testing.assert_allclose(U2, U1, atol=1e-8)
    np.testing.assert_allclose(P2, P1, atol=1e-6)


def test_row_dependent_cost_uses_general_solver():
    # c_xy(p) = y-cost + p(y): a congestion-on-own-row cost, strictly convex
    w = np.array([0.0, 0.2, 0.4])
    cost = CostModel(lambda x, y, p, M: w[y] + p[y], lambda x, M: 0.0)
    inst = FiniteMFGInstance(StateSet.labelled(3), TimeGrid(1), cost, [1, 0, 0])
    U, P = solve_backward(inst, np.full((2, 3), 1 / 3))
    # KKT: w + 2p = const on the support
    expected = np.array([0.4, 0.3, 0.2]) + (1 - 0.9) / 3
    np.testing.assert_allclose(P[0, 0], expected, atol=1e-7)


def test_inner_failure_carries_position():
    cost = CostModel(lambda x, y, p, M: float(np.sin(40 * p[y])) * (y + 1), lambda x, M: 0.0)
    inst = FiniteMFGInstance(StateSet.labelled(3), TimeGrid(1), cost, [1, 0, 0])
    import finmfg.bellman as bellman

    original = bellman.general_minimizer

    def fail(problem, tol):
        raise ConvergenceError("stuck", 0.5)

    bellman.general_minimizer = fail
    try:
        with pytest.raises(ConvergenceError) as e:
            solve_backward(inst, np.full((2, 3), 1 / 3))
    finally:
        bellman.general_minimizer = original
    assert e.value.context["k"] == 0 and "x" in e.value.context


def test_belief_dimension_checked():
    rng = np.random.default_rng(14)
    inst = random_instance(rng, 3, 2)
    with pytest.raises(DimensionError):
        solve_backward(inst, np.full((2, 3), 1 / 3))


def test_kinetic_rows_from_sweep():
    rng = np.random.default_rng(15)
    inst = random_instance(rng, 4, 3)
    belief = random_flow(rng, inst)
    _, P, kin = backward_sweep(inst, belief)
    from finmfg.core import kinetic_rows

    np.testing.assert_allclose(kin, kinetic_rows(inst.cost.kinetic_matrix[None], inst.cost.entropy, P), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(1, 5))
def test_backward_growth_bound(seed, S, N):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, S, N, eps=0.0)
    belief = random_flow(rng, inst)
    U, _ = solve_backward(inst, belief)
    K = inst.cost.kinetic_matrix
    cmax = max(np.abs(K).max() + np.abs(inst.cost.coupling_vector(m)).max() for m in belief)
    gmax = np.abs(inst.cost.terminal_vector(belief[-1])).max()
    for k in range(N + 1):
        assert np.all(np.abs(U[k]) <= (N - k) * cmax + gmax + 1e-12)
