import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finmfg.core import FiniteMeasure, StateSet
from finmfg.errors import DimensionError, LipschitzError
from finmfg.wasserstein import GroundMetric, d1, d1_line, d1_lp, d1_measures, dual_lower_bound, flow_distance


def _plane_metric(rng, n):
    return GroundMetric.euclidean(rng.random((n, 2)))


def test_identical_distributions():
    rng = np.random.default_rng(0)
    m = _plane_metric(rng, 6)
    mu = rng.dirichlet(np.ones(6))
    assert d1(mu, mu, m) == pytest.approx(0.0, abs=1e-12)


def test_diracs():
    rng = np.random.default_rng(1)
    m = _plane_metric(rng, 5)
    e = np.eye(5)
    assert d1(e[1], e[3], m) == pytest.approx(m.distances[1, 3], abs=1e-12)


def test_three_point_grid_both_routes():
    m = GroundMetric.euclidean([0.0, 0.5, 1.0])
    mu, nu = np.array([1.0, 0, 0]), np.array([0, 0, 1.0])
    assert d1(mu, nu, m) == 1.0
    assert d1_lp(mu, nu, m)[0] == pytest.approx(d1_line(mu, nu, [0, 0.5, 1]), abs=1e-12)


def test_lp_plan_is_a_coupling():
    rng = np.random.default_rng(2)
    m = _plane_metric(rng, 7)
    mu, nu = rng.dirichlet(np.ones(7), size=2)
    value, plan = d1_lp(mu, nu, m)
    np.testing.assert_allclose(plan.sum(axis=1), mu, atol=1e-9)
    np.testing.assert_allclose(plan.sum(axis=0), nu, atol=1e-9)
    assert float(np.sum(plan * m.distances)) == pytest.approx(value, abs=1e-10)


def test_cdf_and_lp_agree_on_random_line_pairs():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(2, 51))
        x = np.sort(rng.random(n)) * 3
        metric = GroundMetric.euclidean(x)
        mu, nu = rng.dirichlet(np.ones(n), size=2)
        assert d1_lp(mu, nu, metric)[0] == pytest.approx(d1_line(mu, nu, x), abs=1e-12)


def test_unsorted_line_points():
    x = np.array([1.0, 0.0, 0.5])
    metric = GroundMetric.euclidean(x)
    mu, nu = np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])
    assert d1(mu, nu, metric) == pytest.approx(1.0, abs=1e-15)


def test_discrete_metric_is_total_variation():
    rng = np.random.default_rng(4)
    m = GroundMetric.discrete(6)
    mu, nu = rng.dirichlet(np.ones(6), size=2)
    assert d1(mu, nu, m) == pytest.approx(0.5 * np.abs(mu - nu).sum(), abs=1e-15)
    assert d1_lp(mu, nu, m)[0] == pytest.approx(d1(mu, nu, m), abs=1e-10)


def test_for_states_picks_metric():
    assert GroundMetric.for_states(StateSet.labelled(3)).is_discrete
    assert not GroundMetric.euclidean(np.eye(3)).is_discrete
    assert GroundMetric.for_states(StateSet.from_points([0.0, 1.0])).line is not None


def test_metric_validation():
    with pytest.raises(ValueError):
        GroundMetric(np.array([[0, 1], [2, 0.0]]))
    with pytest.raises(ValueError):
        GroundMetric(np.array([[1, 1], [1, 0.0]]))
    with pytest.raises(ValueError):
        GroundMetric(np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0.0]]))


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        d1(np.ones(3) / 3, np.ones(4) / 4, GroundMetric.discrete(3))


def test_dual_examples():
    m = GroundMetric.euclidean([0.0, 0.5, 1.0])
    mu, nu = np.array([1.0, 0, 0]), np.array([0, 0, 1.0])
    assert dual_lower_bound(mu, nu, m, np.zeros(3)) == 0.0
    assert dual_lower_bound(mu, nu, m, -np.array([0.0, 0.5, 1.0])) == pytest.approx(d1(mu, nu, m), abs=1e-15)
    with pytest.raises(LipschitzError) as e:
        dual_lower_bound(mu, nu, m, [0.0, 2.0, 0.0])
    assert e.value.pair in {(0, 1), (1, 0), (1, 2), (2, 1)}


def _random_lipschitz(rng, D):
    # McShane extension of random values on a few anchors is 1-Lipschitz
    n = D.shape[0]
    anchors = rng.choice(n, size=min(3, n), replace=False)
    vals = rng.normal(size=anchors.size) * 0.1
    return np.min(vals[None, :] + D[:, anchors], axis=1)


def test_dual_never_exceeds_primal():
    rng = np.random.default_rng(5)
    for _ in range(10):
        n = int(rng.integers(3, 12))
        m = _plane_metric(rng, n)
        mu, nu = rng.dirichlet(np.ones(n), size=2)
        primal = d1(mu, nu, m)
        best = max(dual_lower_bound(mu, nu, m, _random_lipschitz(rng, m.distances)) for _ in range(50))
        assert best <= primal + 1e-10


def test_flow_distance_is_sup_over_slices():
    m = GroundMetric.euclidean([0.0, 1.0])
    A = np.array([[1.0, 0.0], [0.5, 0.5]])
    B = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert flow_distance(A, B, m) == 0.5


def test_measures_on_union_support():
    a = FiniteMeasure([0.0, 1.0], [0.5, 0.5])
    b = FiniteMeasure([0.25], [1.0])
    assert d1_measures(a, b) == pytest.approx(0.5 * 0.25 + 0.5 * 0.75, abs=1e-15)
    c = FiniteMeasure([[0.0, 0.0], [3.0, 4.0]], [0.5, 0.5])
    e = FiniteMeasure([[0.0, 0.0]], [1.0])
    assert d1_measures(c, e) == pytest.approx(2.5, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 9))
def test_metric_axioms(seed, n):
    rng = np.random.default_rng(seed)
    m = _plane_metric(rng, n)
    mu, nu, la = rng.dirichlet(np.ones(n), size=3)
    a, b = d1(mu, nu, m), d1(nu, mu, m)
    assert a == pytest.approx(b, abs=1e-10)
    assert d1(mu, la, m) <= a + d1(nu, la, m) + 1e-10
    assert a >= -1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 50))
def test_line_route_agrees_with_lp(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    mu, nu = rng.dirichlet(np.full(n, 0.5), size=2)
    assert d1_lp(mu, nu, GroundMetric.euclidean(x))[0] == pytest.approx(d1_line(mu, nu, x), abs=1e-12)
