"""Wasserstein-1 distance between distributions on a finite metric space.

Two routes compute the same number. States on a line use the CDF formula
``sum_i |F_mu(i) - F_nu(i)| * (x_{i+1} - x_i)``; everything else solves the
transport linear program with the HiGHS dual simplex from scipy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix, identity, kron, vstack

from .core import FiniteMeasure, StateSet
from .errors import DimensionError, LipschitzError, MFGError

TRIANGLE_TOL = 1e-12
LP_MAX_STATES = 2000
_EXACT_TRIANGLE_LIMIT = 200


@dataclass(frozen=True)
class GroundMetric:
    """Pairwise distance matrix over a finite state set.

    ``line`` holds sorted 1-d coordinates when the metric is the Euclidean
    distance of points on a line; ``order`` maps sorted position to state.
    ``is_discrete`` marks the 0/1 metric, for which d1 is total variation.
    """

    distances: np.ndarray
    line: np.ndarray | None = None
    order: np.ndarray | None = None
    is_discrete: bool = False

    def __post_init__(self):
        D = np.array(self.distances, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise DimensionError("metric", "square matrix", D.shape)
        if not np.all(np.isfinite(D)) or np.any(D < 0):
            raise ValueError("distances must be finite and nonnegative")
        if not np.allclose(D, D.T, rtol=0, atol=TRIANGLE_TOL):
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.abs(np.diag(D)) > TRIANGLE_TOL):
            raise ValueError("distance matrix has a nonzero diagonal")
        _check_triangle(D)
        D.setflags(write=False)
        object.__setattr__(self, "distances", D)

    @property
    def size(self) -> int:
        return self.distances.shape[0]

    @classmethod
    def euclidean(cls, coords) -> "GroundMetric":
        c = np.asarray(coords, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        D = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1))
        if c.shape[1] == 1:
            order = np.argsort(c[:, 0], kind="stable")
            return cls(D, line=c[order, 0], order=order)
        return cls(D)

    @classmethod
    def discrete(cls, n: int) -> "GroundMetric":
        return cls(1.0 - np.eye(n), is_discrete=True)

    @classmethod
    def for_states(cls, states: StateSet) -> "GroundMetric":
        """Euclidean for embedded states, the 0/1 metric otherwise."""
        if states.embedded:
            return cls.euclidean(states.coords)
        return cls.discrete(states.size)


def _check_triangle(D: np.ndarray) -> None:
    n = D.shape[0]
    if n <= _EXACT_TRIANGLE_LIMIT:
        for z in range(n):
            viol = D - (D[:, z][:, None] + D[z, :][None, :])
            if viol.max() > TRIANGLE_TOL:
                x, y = np.unravel_index(np.argmax(viol), viol.shape)
                raise ValueError(f"triangle inequality fails for ({x}, {z}, {y})")
        return
    rng = np.random.default_rng(0)
    idx = rng.integers(0, n, size=(20000, 3))
    x, z, y = idx.T
    viol = D[x, y] - D[x, z] - D[z, y]
    if viol.max() > TRIANGLE_TOL:
        i = int(np.argmax(viol))
        raise ValueError(f"triangle inequality fails for ({x[i]}, {z[i]}, {y[i]})")


def _check_pair(mu, nu, metric: GroundMetric) -> tuple[np.ndarray, np.ndarray]:
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != (metric.size,):
        raise DimensionError("mu", metric.size, mu.shape)
    if nu.shape != (metric.size,):
        raise DimensionError("nu", metric.size, nu.shape)
    return mu, nu


def d1_line(mu, nu, points) -> float:
    """CDF formula for distributions on points of the real line."""
    x = np.asarray(points, dtype=float)
    order = np.argsort(x, kind="stable")
    diff = np.cumsum(np.asarray(mu, dtype=float)[order] - np.asarray(nu, dtype=float)[order])
    return float(np.sum(np.abs(diff[:-1]) * np.diff(x[order])))


def d1_lp(mu, nu, metric: GroundMetric) -> tuple[float, np.ndarray]:
    """Transport linear program; returns the value and an optimal coupling."""
    mu, nu = _check_pair(mu, nu, metric)
    n = metric.size
    if n > LP_MAX_STATES:
        raise MFGError(f"transport LP is limited to {LP_MAX_STATES} states")
    # only states with mass enter the program
    rows = np.flatnonzero(mu > 0)
    cols = np.flatnonzero(nu > 0)
    C = metric.distances[np.ix_(rows, cols)]
    a, b = mu[rows], nu[cols]
    b = b * (a.sum() / b.sum())
    r, c = C.shape
    A = vstack([kron(identity(r), np.ones((1, c))), kron(np.ones((1, r)), identity(c))])
    res = linprog(
        C.ravel(),
        A_eq=csr_matrix(A),
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise MFGError(f"transport LP failed: {res.message}")
    plan = np.zeros((n, n))
    plan[np.ix_(rows, cols)] = res.x.reshape(r, c)
    return float(res.fun), plan


def d1(mu, nu, metric: GroundMetric) -> float:
    """Wasserstein-1 distance between two distributions over the metric's states."""
    mu, nu = _check_pair(mu, nu, metric)
    if metric.line is not None:
        return d1_line(mu[metric.order], nu[metric.order], metric.line)
    if metric.is_discrete:
        return 0.5 * float(np.abs(mu - nu).sum())
    return d1_lp(mu, nu, metric)[0]


def dual_lower_bound(mu, nu, metric: GroundMetric, f) -> float:
    """``sum f (mu - nu)`` for a verified 1-Lipschitz test function ``f``."""
    mu, nu = _check_pair(mu, nu, metric)
    f = np.asarray(f, dtype=float)
    if f.shape != (metric.size,):
        raise DimensionError("f", metric.size, f.shape)
    gap = np.abs(f[:, None] - f[None, :]) - metric.distances
    worst = np.unravel_index(np.argmax(gap), gap.shape)
    if gap[worst] > TRIANGLE_TOL:
        raise LipschitzError((int(worst[0]), int(worst[1])), float(gap[worst]))
    return float(f @ (mu - nu))


def flow_distance(M1: np.ndarray, M2: np.ndarray, metric: GroundMetric) -> float:
    """``sup_k d1(M1[k], M2[k])`` over the time slices of two flows."""
    return max(d1(a, b, metric) for a, b in zip(M1, M2))


def d1_measures(a: FiniteMeasure, b: FiniteMeasure) -> float:
    """Wasserstein-1 between finitely supported measures on R^d.

    On the line this is the CDF formula over the union support; otherwise the
    transport LP on the union support with Euclidean ground metric.
    """
    if a.dim != b.dim:
        raise DimensionError("dim", a.dim, b.dim)
    pts = np.concatenate([a.points, b.points])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.ravel()
    wa = np.zeros(uniq.shape[0])
    wb = np.zeros(uniq.shape[0])
    np.add.at(wa, inv[: a.points.shape[0]], a.weights)
    np.add.at(wb, inv[a.points.shape[0]:], b.weights)
    if a.dim == 1:
        return d1_line(wa, wb, uniq[:, 0])
    return d1(wa, wb, GroundMetric.euclidean(uniq))
