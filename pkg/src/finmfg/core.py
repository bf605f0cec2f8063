"""Finite mean field game model: states, time grid, costs, marginal flows.

Kernels and flows are plain numpy arrays:

* a transition kernel ``P`` has shape ``(N, S, S)`` and ``P[k, x]`` is the
  distribution of the next state when at ``x`` at step ``k``;
* a marginal flow ``M`` has shape ``(N + 1, S)`` and ``M[k]`` is the
  population distribution at step ``k``.

The validators in this module check those invariants at the boundary; the
solvers trust arrays they produce themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, NumericDomainError, SimplexError, UnsupportedModelError

INGEST_TOL = 1e-9
INTERNAL_TOL = 1e-12
# p(y) at or below this is treated as exactly zero in p*log(p).
LOG_FLOOR = 1e-300


def xlogx(p: np.ndarray) -> np.ndarray:
    """Elementwise ``p*log(p)`` with ``0*log(0) = 0``."""
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    pos = p > LOG_FLOOR
    out[pos] = p[pos] * np.log(p[pos])
    return out


def as_simplex(v, tol: float = INGEST_TOL, name: str = "vector") -> np.ndarray:
    """Validate a probability vector from outside and renormalize it."""
    arr = np.asarray(v, dtype=float).copy()
    if arr.ndim != 1 or arr.size == 0:
        raise SimplexError(f"{name} must be a non-empty 1-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SimplexError(f"{name} has non-finite entries")
    if np.any(arr < -tol):
        raise SimplexError(f"{name} has negative entries (min {arr.min():.3e})")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise SimplexError(f"{name} sums to {total!r}, not 1 within {tol:g}")
    arr = np.clip(arr, 0.0, None)
    return arr / arr.sum()


def check_simplex(v: np.ndarray, tol: float = INTERNAL_TOL, name: str = "vector") -> None:
    arr = np.asarray(v)
    if np.any(arr < -tol) or np.any(arr > 1 + tol) or abs(arr.sum() - 1.0) > tol:
        raise SimplexError(f"{name} is not a probability vector within {tol:g}")


@dataclass(frozen=True)
class StateSet:
    """Ordered finite state set, optionally embedded in R^d."""

    labels: tuple[str, ...]
    coords: np.ndarray | None = None

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        if len(labels) == 0:
            raise ValueError("a state set needs at least one state")
        if len(set(labels)) != len(labels):
            raise ValueError("state labels must be unique")
        object.__setattr__(self, "labels", labels)
        if self.coords is not None:
            c = np.array(self.coords, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if c.shape[0] != len(labels):
                raise DimensionError("states", len(labels), c.shape[0])
            if not np.all(np.isfinite(c)):
                raise ValueError("state coordinates must be finite")
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)

    @classmethod
    def labelled(cls, n: int) -> "StateSet":
        return cls(tuple(str(i) for i in range(n)))

    @classmethod
    def from_points(cls, points, labels: Sequence[str] | None = None) -> "StateSet":
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if labels is None:
            labels = [",".join(f"{v:.12g}" for v in row) for row in pts]
        return cls(tuple(labels), pts)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def embedded(self) -> bool:
        return self.coords is not None

    @property
    def dim(self) -> int | None:
        return None if self.coords is None else self.coords.shape[1]

    def require_coords(self) -> np.ndarray:
        if self.coords is None:
            raise UnsupportedModelError("this operation needs states embedded in R^d")
        return self.coords


@dataclass(frozen=True)
class TimeGrid:
    """``steps`` transitions over ``[0, horizon]``; horizon defaults to ``steps``."""

    steps: int
    horizon: float | None = None

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"time grid needs N >= 1 steps, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        if self.horizon is None:
            object.__setattr__(self, "horizon", float(self.steps))
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


class CostModel:
    """Running cost ``c(x, y, p, M)`` and terminal cost ``g(x, M)``.

    States are passed as integer indices. ``p`` is the row ``P(x, ., k)`` and
    ``M`` the belief slice. A model is separable when ``kinetic(x, y, p)`` and
    ``coupling(x, M)`` are supplied with ``running = kinetic + coupling``;
    the entropy term, if any, belongs to ``kinetic``.

    Terms with ``p(y)`` below ``LOG_FLOOR`` are dropped from expectations, so
    a running cost may return ``-inf`` there without harm.
    """

    def __init__(
        self,
        running: Callable[[int, int, np.ndarray, np.ndarray], float],
        terminal: Callable[[int, np.ndarray], float],
        *,
        kinetic: Callable[[int, int, np.ndarray], float] | None = None,
        coupling: Callable[[int, np.ndarray], float] | None = None,
        entropy: float = 0.0,
    ):
        if (kinetic is None) != (coupling is None):
            raise ValueError("a separable model needs both kinetic and coupling parts")
        if entropy < 0:
            raise ValueError("entropy weight must be nonnegative")
        self.running = running
        self.terminal = terminal
        self.kinetic = kinetic
        self.coupling = coupling
        self.entropy = float(entropy)

    @property
    def separable(self) -> bool:
        return self.kinetic is not None

    # vectorized helpers; subclasses override them with array arithmetic
    def row_costs(self, x: int, p: np.ndarray, M: np.ndarray) -> np.ndarray:
        return np.array([self.running(x, y, p, M) for y in range(p.size)], dtype=float)

    def expected_row_cost(self, x: int, p: np.ndarray, M: np.ndarray) -> float:
        total = 0.0
        for y in np.flatnonzero(p > LOG_FLOOR):
            total += p[y] * self.running(x, int(y), p, M)
        return float(total)

    def expected_kinetic(self, x: int, p: np.ndarray) -> float:
        self._need_separable()
        total = 0.0
        for y in np.flatnonzero(p > LOG_FLOOR):
            total += p[y] * self.kinetic(x, int(y), p)
        return float(total)

    def coupling_vector(self, M: np.ndarray) -> np.ndarray:
        self._need_separable()
        return np.array([self.coupling(x, M) for x in range(M.size)], dtype=float)

    def terminal_vector(self, M: np.ndarray) -> np.ndarray:
        return np.array([self.terminal(x, M) for x in range(M.size)], dtype=float)

    def _need_separable(self):
        if not self.separable:
            raise UnsupportedModelError("cost model is not separable")

    def spot_check(self, n_states: int, rng: np.random.Generator, samples: int = 5) -> None:
        """Check ``running == kinetic + coupling`` on random inputs."""
        if not self.separable:
            return
        for _ in range(samples):
            p = rng.dirichlet(np.ones(n_states))
            M = rng.dirichlet(np.ones(n_states))
            x, y = (int(v) for v in rng.integers(0, n_states, size=2))
            lhs = self.running(x, y, p, M)
            rhs = self.kinetic(x, y, p) + self.coupling(x, M)
            if lhs == rhs:
                continue
            if not abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)):
                raise ValueError(
                    f"separable parts do not add up to the running cost at x={x}, y={y}: {lhs} vs {rhs}"
                )


class EntropySeparableCost(CostModel):
    """``c(x, y, p, M) = K[x, y] + eps*log p(y) + f(M)[x]`` with terminal ``g(M)``.

    ``kinetic_matrix`` may hold ``+inf`` for forbidden moves. ``coupling_fn``
    and ``terminal_fn`` map a distribution to a vector over states.
    """

    def __init__(
        self,
        kinetic_matrix,
        entropy: float,
        coupling_fn: Callable[[np.ndarray], np.ndarray] | None = None,
        terminal_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        K = np.array(kinetic_matrix, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"kinetic matrix must be square, got shape {K.shape}")
        if np.any(np.isnan(K)) or np.any(K == -np.inf):
            raise ValueError("kinetic matrix entries must be finite or +inf")
        if np.any(np.all(np.isinf(K), axis=1)):
            raise ValueError("every state needs at least one allowed move")
        K.setflags(write=False)
        self.kinetic_matrix = K
        n = K.shape[0]
        self.coupling_fn = coupling_fn or (lambda M: np.zeros(n))
        self.terminal_fn = terminal_fn or (lambda M: np.zeros(n))
        super().__init__(
            self._running,
            lambda x, M: float(self.terminal_fn(M)[x]),
            kinetic=self._kinetic,
            coupling=lambda x, M: float(self.coupling_fn(M)[x]),
            entropy=entropy,
        )

    @property
    def n_states(self) -> int:
        return self.kinetic_matrix.shape[0]

    def _entropy_term(self, p_y: float) -> float:
        if self.entropy == 0.0 or p_y <= LOG_FLOOR:
            return 0.0
        return self.entropy * float(np.log(p_y))

    def _kinetic(self, x, y, p):
        return float(self.kinetic_matrix[x, y]) + self._entropy_term(p[y])

    def _running(self, x, y, p, M):
        return self._kinetic(x, y, p) + float(self.coupling_fn(M)[x])

    def row_costs(self, x, p, M):
        logs = np.zeros_like(p)
        pos = p > LOG_FLOOR
        logs[pos] = np.log(p[pos])
        return self.kinetic_matrix[x] + self.entropy * logs + self.coupling_fn(M)[x]

    def expected_kinetic(self, x, p):
        return float(kinetic_rows(self.kinetic_matrix[x][None], self.entropy, p[None])[0])

    def expected_row_cost(self, x, p, M):
        return self.expected_kinetic(x, p) + float(self.coupling_fn(M)[x])

    def coupling_vector(self, M):
        return np.asarray(self.coupling_fn(M), dtype=float)

    def terminal_vector(self, M):
        return np.asarray(self.terminal_fn(M), dtype=float)


def kinetic_rows(K: np.ndarray, eps: float, P: np.ndarray) -> np.ndarray:
    """Per-row ``sum_y P[x,y]*(K[x,y] + eps*log P[x,y])``, skipping zero mass."""
    moved = np.where(P > LOG_FLOOR, P * np.where(np.isfinite(K), K, 0.0), 0.0)
    bad = (P > LOG_FLOOR) & ~np.isfinite(K)
    if np.any(bad):
        raise NumericDomainError("kernel puts mass on a move with infinite cost")
    out = moved.sum(axis=-1)
    if eps:
        out = out + eps * xlogx(P).sum(axis=-1)
    return out


@dataclass(frozen=True)
class FiniteMFGInstance:
    """States, time grid, cost model and initial distribution ``M0``."""

    states: StateSet
    time: TimeGrid
    cost: CostModel
    initial: np.ndarray
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        m0 = as_simplex(self.initial, name="initial distribution")
        if m0.size != self.states.size:
            raise DimensionError("initial", self.states.size, m0.size)
        m0.setflags(write=False)
        object.__setattr__(self, "initial", m0)
        if isinstance(self.cost, EntropySeparableCost) and self.cost.n_states != self.states.size:
            raise DimensionError("kinetic_matrix", self.states.size, self.cost.n_states)
        self.cost.spot_check(self.states.size, np.random.default_rng(0))

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def n_steps(self) -> int:
        return self.time.steps


def check_kernel(instance: FiniteMFGInstance, P, tol: float = INGEST_TOL) -> np.ndarray:
    """Validate a kernel's shape and row sums; returns it as a float array."""
    P = np.asarray(P, dtype=float)
    N, S = instance.n_steps, instance.n_states
    if P.ndim != 3:
        raise DimensionError("kernel.ndim", 3, P.ndim)
    if P.shape[0] != N:
        raise DimensionError("time", N, P.shape[0])
    if P.shape[1] != S:
        raise DimensionError("from_state", S, P.shape[1])
    if P.shape[2] != S:
        raise DimensionError("to_state", S, P.shape[2])
    if np.any(P < -tol) or np.any(np.abs(P.sum(axis=2) - 1.0) > tol):
        raise SimplexError("kernel rows must be probability vectors")
    return P


def check_flow(instance: FiniteMFGInstance, M, tol: float = INGEST_TOL) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    N, S = instance.n_steps, instance.n_states
    if M.ndim != 2:
        raise DimensionError("flow.ndim", 2, M.ndim)
    if M.shape[0] != N + 1:
        raise DimensionError("time", N + 1, M.shape[0])
    if M.shape[1] != S:
        raise DimensionError("state", S, M.shape[1])
    if np.any(M < -tol) or np.any(np.abs(M.sum(axis=1) - 1.0) > tol):
        raise SimplexError("flow slices must be probability vectors")
    return M


def uniform_kernel(instance: FiniteMFGInstance) -> np.ndarray:
    S = instance.n_states
    return np.full((instance.n_steps, S, S), 1.0 / S)


def identity_kernel(instance: FiniteMFGInstance) -> np.ndarray:
    return np.tile(np.eye(instance.n_states), (instance.n_steps, 1, 1))


def product_kernel(flow: np.ndarray) -> np.ndarray:
    """Kernel with every row at step ``k`` equal to ``flow[k + 1]``.

    It carries any distribution at step ``k`` to ``flow[k + 1]``, so it
    induces ``flow`` from ``flow[0]``.
    """
    flow = np.asarray(flow, dtype=float)
    S = flow.shape[1]
    return np.repeat(flow[1:, None, :], S, axis=1)


def propagate_marginals(instance: FiniteMFGInstance, P) -> np.ndarray:
    """Forward marginals ``M(., k+1) = M(., k) @ P[k]`` from ``M0``."""
    P = check_kernel(instance, P)
    N = instance.n_steps
    M = np.empty((N + 1, instance.n_states))
    M[0] = instance.initial
    for k in range(N):
        M[k + 1] = M[k] @ P[k]
    return M


def _finite_or_raise(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericDomainError(f"{what} is not finite ({value})")
    return float(value)


def step_running_costs(instance: FiniteMFGInstance, P: np.ndarray, belief: np.ndarray) -> np.ndarray:
    """``r[k, x] = sum_y P[k,x,y] c_xy(P[k,x], belief[k])``, shape ``(N, S)``."""
    cost = instance.cost
    N, S = instance.n_steps, instance.n_states
    if isinstance(cost, EntropySeparableCost):
        out = kinetic_rows(cost.kinetic_matrix[None], cost.entropy, P)
        for k in range(N):
            out[k] += cost.coupling_vector(belief[k])
        return out
    out = np.empty((N, S))
    for k in range(N):
        for x in range(S):
            out[k, x] = cost.expected_row_cost(x, P[k, x], belief[k])
    return out


def total_cost(instance: FiniteMFGInstance, P, M) -> float:
    """Expected cost ``J_M(P)`` of kernel ``P`` against belief flow ``M``."""
    P = check_kernel(instance, P)
    M = check_flow(instance, M)
    own = propagate_marginals(instance, P)
    running = step_running_costs(instance, P, M)
    value = float(np.sum(own[:-1] * running)) + float(own[-1] @ instance.cost.terminal_vector(M[-1]))
    return _finite_or_raise(value, "total cost")


def kinetic_cost(instance: FiniteMFGInstance, P, flow: np.ndarray | None = None) -> float:
    """Belief-independent part of ``J``: expected kinetic cost including entropy.

    ``flow`` may pass the marginals induced by ``P`` when already known.
    """
    cost = instance.cost
    if not cost.separable:
        raise UnsupportedModelError("kinetic_cost needs a separable cost model")
    P = check_kernel(instance, P)
    own = propagate_marginals(instance, P) if flow is None else flow
    if isinstance(cost, EntropySeparableCost):
        rows = kinetic_rows(cost.kinetic_matrix[None], cost.entropy, P)
    else:
        rows = np.array(
            [[cost.expected_kinetic(x, P[k, x]) for x in range(instance.n_states)] for k in range(instance.n_steps)]
        )
    return _finite_or_raise(float(np.sum(own[:-1] * rows)), "kinetic cost")


def coupling_cost(instance: FiniteMFGInstance, flow: np.ndarray, belief: np.ndarray) -> float:
    """Coupling plus terminal part of ``J``; linear in ``flow``."""
    cost = instance.cost
    if not cost.separable:
        raise UnsupportedModelError("coupling_cost needs a separable cost model")
    N = instance.n_steps
    value = sum(float(flow[k] @ cost.coupling_vector(belief[k])) for k in range(N))
    value += float(flow[N] @ cost.terminal_vector(belief[N]))
    return _finite_or_raise(value, "coupling cost")


@dataclass(frozen=True)
class FiniteMeasure:
    """Finitely supported probability measure on R^d."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size != pts.shape[0]:
            raise DimensionError("support", pts.shape[0], w.size)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def compact(self) -> "FiniteMeasure":
        """Drop zero weights and merge coincident points."""
        keep = self.weights > 0
        pts, w = self.points[keep], self.weights[keep]
        if pts.shape[0] == 0:
            return FiniteMeasure(pts, w)
        uniq, inv = np.unique(pts, axis=0, return_inverse=True)
        merged = np.zeros(uniq.shape[0])
        np.add.at(merged, inv.ravel(), w)
        return FiniteMeasure(uniq, merged)
