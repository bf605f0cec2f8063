"""The two example models shipped with the package.

* ``crowd_aversion_instance``: 11 states on a line, 10 steps, entropy 0.1,
  kinetic ``|y - x|``, coupling ``f(x, M) = M(x)`` (players dislike crowded
  states), no terminal cost, everyone starts at the middle state.
* ``quadratic_spec``: a one-dimensional continuous game with
  ``l(a) = a^2/2``, congestion ``f(x, m) = 0.5 m([x - 0.2, x + 0.2])``,
  ``g(x) = x^2`` and ``m0`` uniform on ``[-0.5, 0.5]`` over ``T = 1``.
"""

from __future__ import annotations

import numpy as np

from .core import EntropySeparableCost, FiniteMeasure, FiniteMFGInstance, StateSet, TimeGrid
from .discretizer import ContinuousMFGSpec, Schedule, sequence_levels

CROWD_SPACING = 0.02
CROWD_STATES = 11
CROWD_STEPS = 10
CROWD_EPS = 0.1

QUAD_RADIUS = 0.2
QUAD_WEIGHT = 0.5
QUAD_DOMAIN = (-1.0, 1.0)
QUAD_WINDOW = (-0.5, 0.5)
QUAD_LEVELS = ((20, 8), (40, 12), (80, 16))


def crowd_coupling(M: np.ndarray) -> np.ndarray:
    return np.array(M, dtype=float)


def crowd_aversion_instance(
    n_states: int = CROWD_STATES,
    n_steps: int = CROWD_STEPS,
    eps: float = CROWD_EPS,
    spacing: float = CROWD_SPACING,
    start: int | None = None,
) -> FiniteMFGInstance:
    x = np.arange(n_states) * spacing
    K = np.abs(x[:, None] - x[None, :])
    m0 = np.zeros(n_states)
    m0[n_states // 2 if start is None else start] = 1.0
    cost = EntropySeparableCost(K, eps, coupling_fn=crowd_coupling)
    meta = {"name": "crowd-aversion", "spacing": spacing}
    return FiniteMFGInstance(StateSet.from_points(x), TimeGrid(n_steps), cost, m0, meta)


def quadratic_ell(v: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(np.asarray(v) ** 2, axis=-1)


def window_mass(x: np.ndarray, m: FiniteMeasure, radius: float = QUAD_RADIUS) -> np.ndarray:
    """``m([x - radius, x + radius])`` for 1-d points ``x`` (closed interval)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    order = np.argsort(m.points[:, 0], kind="stable")
    pts = m.points[order, 0]
    cum = np.concatenate([[0.0], np.cumsum(m.weights[order])])
    # tiny slack keeps lattice points at exactly +-radius inside
    lo = np.searchsorted(pts, x - radius - 1e-12, side="left")
    hi = np.searchsorted(pts, x + radius + 1e-12, side="right")
    return cum[hi] - cum[lo]


def congestion(x: np.ndarray, m: FiniteMeasure) -> np.ndarray:
    return QUAD_WEIGHT * window_mass(x, m)


def squared_terminal(x: np.ndarray, m: FiniteMeasure) -> np.ndarray:
    return np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)


def uniform_cells(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Cell masses of the uniform law on ``[-0.5, 0.5]``."""
    a = np.clip(np.asarray(lo, dtype=float)[:, 0], -0.5, 0.5)
    b = np.clip(np.asarray(hi, dtype=float)[:, 0], -0.5, 0.5)
    return np.maximum(b - a, 0.0)


def quadratic_spec() -> ContinuousMFGSpec:
    # on the domain box |f| <= 0.5 and |g| <= 1
    return ContinuousMFGSpec(
        dim=1,
        horizon=1.0,
        q=2.0,
        ell=quadratic_ell,
        coupling=congestion,
        terminal=squared_terminal,
        m0_cells=uniform_cells,
        support=(-0.5, 0.5),
        growth=(0.5, 0.5, 1.0),
        data_bound=1.0,
        name="quadratic-congestion",
    )


def quadratic_schedule(pairs=QUAD_LEVELS) -> Schedule:
    return sequence_levels(pairs)

