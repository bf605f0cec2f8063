import math

import numpy as np
import pytest

from finmfg.bellman import solve_backward
from finmfg.bundled import QUAD_DOMAIN, congestion, quadratic_ell, quadratic_spec, squared_terminal, uniform_cells
from finmfg.core import FiniteMFGInstance, StateSet, TimeGrid, EntropySeparableCost, identity_kernel, propagate_marginals
from finmfg.discretizer import (
    ContinuousMFGSpec,
    DiscretizationLevel,
    FPConfig,
    Schedule,
    bellman_residual,
    build_instance,
    default_eps,
    density_cells,
    energy_estimate,
    interpolate_flow,
    lattice,
    sample_paths,
    sequence_levels,
    solve_level,
    tail_mass_bound,
)
from finmfg.errors import DomainError
from finmfg.wasserstein import GroundMetric, d1


def _zero(x, m):
    return np.zeros(np.asarray(x).shape[0])


def _spec(coupling=_zero, terminal=_zero, cells=uniform_cells, support=(-0.5, 0.5), horizon=1.0):
    return ContinuousMFGSpec(
        dim=1, horizon=horizon, q=2.0, ell=quadratic_ell, coupling=coupling, terminal=terminal,
        m0_cells=cells, support=support, growth=(0.5, 0.5, 1.0), data_bound=1.0,
    )


def test_lattice_count():
    x = lattice(DiscretizationLevel(2, 1, 0.1), (-1, 1), 1)
    np.testing.assert_allclose(x[:, 0], [-1, -0.5, 0, 0.5, 1])


def test_lattice_two_dimensional():
    x = lattice(DiscretizationLevel(2, 1, 0.1), ([0, 0], [1, 0.5]), 2)
    assert x.shape == (6, 2)


def test_kinetic_entry_before_entropy():
    inst = build_instance(_spec(), DiscretizationLevel(2, 2, 0.01), (-1, 1))
    x = inst.states.coords[:, 0]
    i, j = int(np.argmin(np.abs(x))), int(np.argmin(np.abs(x - 0.5)))
    assert inst.cost.kinetic_matrix[i, j] == pytest.approx(0.25, abs=1e-15)


def test_dirac_like_initial_mass():
    def one_cell(lo, hi):
        # all mass in the cell around 0.25
        return ((lo[:, 0] <= 0.25) & (0.25 < hi[:, 0])).astype(float)

    inst = build_instance(_spec(cells=one_cell, support=(0.25, 0.25)), DiscretizationLevel(4, 2, 0.1), (-1, 1))
    x = inst.states.coords[:, 0]
    np.testing.assert_array_equal(inst.initial, (np.abs(x - 0.25) < 1e-12).astype(float))


def test_initial_mass_fidelity():
    inst = build_instance(quadratic_spec(), DiscretizationLevel(20, 8, 0.01), QUAD_DOMAIN)
    assert abs(inst.initial.sum() - 1) < 1e-15
    assert abs(inst.meta["normalization_defect"]) < 1e-6


def test_half_open_cells_split_edge_mass():
    # m0 uniform on [-0.5, 0.5]: the lattice points at the edges get half cells
    inst = build_instance(quadratic_spec(), DiscretizationLevel(10, 4, 0.01), QUAD_DOMAIN)
    x = inst.states.coords[:, 0]
    edge = inst.initial[np.argmin(np.abs(x - 0.5))]
    mid = inst.initial[np.argmin(np.abs(x))]
    assert edge == pytest.approx(mid / 2, rel=1e-12)


def test_support_outside_box_is_rejected():
    with pytest.raises(DomainError):
        build_instance(quadratic_spec(), DiscretizationLevel(10, 4, 0.01), (-0.3, 1))


def test_density_adapter_reports_defect():
    cells = density_cells(lambda p: np.where(np.abs(p[:, 0]) <= 0.5, 1.0, 0.0), 16)
    inst = build_instance(_spec(cells=cells), DiscretizationLevel(10, 4, 0.01), QUAD_DOMAIN)
    assert abs(inst.meta["normalization_defect"]) < 1e-12
    assert abs(inst.initial.sum() - 1) < 1e-15


def test_kernel_window_discards_negligible_mass():
    spec = quadratic_spec()
    level = DiscretizationLevel(40, 12, default_eps(40, 12))
    inst = build_instance(spec, level, QUAD_DOMAIN)
    assert inst.meta["window_tail_bound"] < 1e-12
    K = inst.cost.kinetic_matrix
    assert np.isinf(K).any() and inst.meta["window_max_row_support"] < inst.n_states
    # the untruncated softmax puts less than the bound outside the window on any continuation
    x = inst.states.coords[:, 0]
    dt = level.dt(spec.horizon)
    Kfull = dt * 0.5 * ((x[None, :] - x[:, None]) / dt) ** 2
    rng = np.random.default_rng(0)
    osc = inst.meta["window_cut"] - level.eps * (math.log(inst.n_states) + 28)
    for _ in range(5):
        U = rng.uniform(0, osc, size=inst.n_states)
        base = Kfull + U[None, :]
        w = np.exp(-(base - base.min(axis=1, keepdims=True)) / level.eps)
        w /= w.sum(axis=1, keepdims=True)
        lost = np.where(np.isinf(K), w, 0.0).sum(axis=1)
        assert lost.max() < 1e-12


def test_schedule_findings():
    good = sequence_levels([(20, 8), (40, 12), (80, 16)])
    assert good.findings() == []
    const_eps = Schedule(tuple(DiscretizationLevel(s, t, 0.01, i) for i, (s, t) in enumerate([(20, 8), (40, 12), (80, 16)])))
    assert any("epsilon schedule violates o(1/(N_t log N_s))" in f for f in const_eps.findings())
    fast_t = sequence_levels([(20, 8), (30, 16), (40, 32)])
    assert any("N_t/N_s -> 0" in f for f in fast_t.findings())


def test_level_validation():
    with pytest.raises(ValueError):
        DiscretizationLevel(0, 3, 0.1)
    with pytest.raises(ValueError):
        DiscretizationLevel(3, 3, 0.0)


def test_growth_and_data_checks():
    spec = quadratic_spec()
    spec.check_growth()
    spec.check_data_bound(QUAD_DOMAIN)
    bad = ContinuousMFGSpec(
        dim=1, horizon=1.0, q=2.0, ell=lambda v: np.sum(v**4, axis=-1), coupling=_zero, terminal=_zero,
        m0_cells=uniform_cells, support=(-0.5, 0.5), growth=(0.5, 0.5, 1.0), data_bound=1.0,
    )
    with pytest.raises(ValueError):
        bad.check_growth()
    with pytest.raises(ValueError):
        spec.check_data_bound((-3, 3))


def test_decoupled_level_matches_standalone_sweep():
    spec = _spec()
    level = DiscretizationLevel(10, 4, 0.05)
    sol = solve_level(spec, level, QUAD_DOMAIN, FPConfig(max_iter=50, tol=1e-12))
    inst = sol.instance
    x = inst.states.coords[:, 0]
    dt = level.dt(1.0)
    # standalone log-sum-exp recursion with the full kinetic matrix and no coupling
    K = inst.cost.kinetic_matrix
    U = np.zeros(x.size)
    for _ in range(level.n_t):
        base = K + U[None, :]
        m = base.min(axis=1)
        U = m - level.eps * np.log(np.exp(-(base - m[:, None]) / level.eps).sum(axis=1))
    np.testing.assert_allclose(sol.values[0], U, atol=1e-12)
    np.testing.assert_allclose(sol.flow, propagate_marginals(inst, sol.kernel), atol=0)
    assert dt == 0.25


def test_bellman_residual_is_the_coupling_mismatch():
    spec = quadratic_spec()
    level = DiscretizationLevel(10, 4, default_eps(10, 4))
    sol = solve_level(spec, level, QUAD_DOMAIN, FPConfig(max_iter=300, tol=1e-3))
    inst = sol.instance
    cost = inst.cost
    # values solve the backward equation against the belief, so the residual is the coupling gap
    gap = max(
        float(np.max(np.abs(cost.coupling_vector(sol.belief[k]) - cost.coupling_vector(sol.flow[k]))))
        for k in range(level.n_t)
    )
    gap = max(gap, float(np.max(np.abs(cost.terminal_vector(sol.belief[-1]) - cost.terminal_vector(sol.flow[-1])))))
    assert sol.bellman_residual <= gap + 1e-12
    assert bellman_residual(inst, sol.values, sol.belief) < 1e-12


def test_interpolation_at_grid_times_is_exact():
    rng = np.random.default_rng(1)
    inst = build_instance(quadratic_spec(), DiscretizationLevel(10, 4, 0.05), QUAD_DOMAIN)
    P = rng.dirichlet(np.ones(inst.n_states), size=(4, inst.n_states))
    M = propagate_marginals(inst, P)
    for k in range(5):
        m = interpolate_flow(inst, M, P, k * 0.25)
        np.testing.assert_array_equal(m.weights, M[k])


def test_interpolation_identity_and_midpoint():
    x = np.array([0.0, 1.0])
    inst = FiniteMFGInstance(StateSet.from_points(x), TimeGrid(1), EntropySeparableCost(np.zeros((2, 2)), 0.1), [1, 0])
    move = np.array([[[0.0, 1.0], [0.0, 1.0]]])
    m = interpolate_flow(inst, propagate_marginals(inst, move), move, 0.5)
    np.testing.assert_allclose(m.points[:, 0], [0.5])
    P = identity_kernel(inst)
    M = propagate_marginals(inst, P)
    for t in (0.2, 0.7):
        mt = interpolate_flow(inst, M, P, t)
        np.testing.assert_allclose(mt.points[:, 0], [0.0])
    with pytest.raises(ValueError):
        interpolate_flow(inst, M, P, 1.5)


def test_energy_examples():
    x = np.array([0.0, 1.0])
    inst = FiniteMFGInstance(StateSet.from_points(x), TimeGrid(1, 1.0), EntropySeparableCost(np.zeros((2, 2)), 0.1), [1, 0])
    move = np.array([[[0.0, 1.0], [0.0, 1.0]]])
    assert energy_estimate(inst, propagate_marginals(inst, move), move, 2) == 1.0
    P = identity_kernel(inst)
    assert energy_estimate(inst, propagate_marginals(inst, P), P, 2) == 0.0


def test_energy_matches_monte_carlo():
    rng = np.random.default_rng(2)
    x = np.linspace(0, 1, 6)
    inst = FiniteMFGInstance(
        StateSet.from_points(x), TimeGrid(4, 1.0), EntropySeparableCost(np.zeros((6, 6)), 0.1), rng.dirichlet(np.ones(6))
    )
    P = rng.dirichlet(np.ones(6), size=(4, 6))
    E = energy_estimate(inst, propagate_marginals(inst, P), P, 2)
    paths = sample_paths(inst, P, 100_000, 7)
    dt = 0.25
    pos = x[paths.states]
    per_path = np.sum(dt * (np.diff(pos, axis=1) / dt) ** 2, axis=1)
    se = per_path.std(ddof=1) / math.sqrt(per_path.size)
    assert abs(per_path.mean() - E) <= 3 * se


def test_sample_paths_deterministic_chain():
    x = np.arange(4.0)
    inst = FiniteMFGInstance(StateSet.from_points(x), TimeGrid(3), EntropySeparableCost(np.zeros((4, 4)), 0.1), [1, 0, 0, 0])
    shift = np.zeros((3, 4, 4))
    for k in range(3):
        shift[k, np.arange(4), np.minimum(np.arange(4) + 1, 3)] = 1.0
    paths = sample_paths(inst, shift, 50, 0)
    assert np.all(paths.states == [0, 1, 2, 3])
    np.testing.assert_allclose(paths.at(1.5), 1.5)


def test_sample_paths_marginals_and_seed():
    rng = np.random.default_rng(3)
    x = np.linspace(0, 1, 11)
    inst = FiniteMFGInstance(
        StateSet.from_points(x), TimeGrid(3), EntropySeparableCost(np.zeros((11, 11)), 0.1), rng.dirichlet(np.ones(11))
    )
    P = rng.dirichlet(np.ones(11), size=(3, 11))
    M = propagate_marginals(inst, P)
    a = sample_paths(inst, P, 100_000, 11)
    b = sample_paths(inst, P, 100_000, 11)
    np.testing.assert_array_equal(a.states, b.states)
    metric = GroundMetric.euclidean(x)
    for k in range(4):
        assert d1(a.marginal(k), M[k], metric) <= 0.01
    with pytest.raises(ValueError):
        sample_paths(inst, P, 0, 1)


def test_tail_mass_bound():
    spec = quadratic_spec()
    assert tail_mass_bound(spec, 0.0, QUAD_DOMAIN) == 0.0
    assert tail_mass_bound(spec, 0.05, QUAD_DOMAIN) == pytest.approx(0.05 / 0.25)
    assert tail_mass_bound(spec, 0.05, (-0.5, 0.5)) == 1.0


def test_bundled_spec_pieces():
    from finmfg.core import FiniteMeasure

    m = FiniteMeasure([-0.2, 0.0, 0.3], [0.25, 0.5, 0.25])
    np.testing.assert_allclose(congestion(np.array([[0.0], [0.5]]), m), [0.5 * 0.75, 0.5 * 0.25])
    np.testing.assert_allclose(squared_terminal(np.array([[2.0]]), m), [4.0])
