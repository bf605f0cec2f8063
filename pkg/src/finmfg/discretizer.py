"""Finite games built from a continuous first-order mean field game.

A continuous problem is given by a kinetic cost ``l(alpha)``, a coupling
``f(x, m)``, a terminal cost ``g(x, m)`` and an initial measure ``m0`` on
``R^d``. A discretization level fixes a lattice of spacing ``dx = 1/N_s``,
``N_t`` time steps of length ``dt = T/N_t`` and an entropy weight ``eps``;
the one-step cost from ``x`` to ``y`` is

    dt * l((y - x) / dt) + dt * f(x, M) + eps * log p(y).

The lattice is cut to a user box (the untruncated lattice is far too large
to store), and each kernel row is cut to the moves whose softmax weight can
exceed ``exp(-28)/|S|``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bellman import solve_backward
from .core import (
    EntropySeparableCost,
    FiniteMeasure,
    FiniteMFGInstance,
    StateSet,
    TimeGrid,
    identity_kernel,
    propagate_marginals,
    uniform_kernel,
)
from .errors import DomainError
from .fictitious_play import FPDiagnostics, run_fp
from .simplex import softmax_rows

DEFAULT_EPS_CONSTANT = 0.1
# log of the per-entry weight cut used for the kernel window
WINDOW_LOG_CUT = 28.0


@dataclass(frozen=True)
class ContinuousMFGSpec:
    """Continuous first-order mean field game.

    ``ell`` maps velocities of shape ``(n, d)`` to ``(n,)``; ``coupling`` and
    ``terminal`` map points ``(n, d)`` and a :class:`FiniteMeasure` to
    ``(n,)``; ``m0_cells`` maps half-open boxes ``[lo, hi)`` (two ``(n, d)``
    arrays) to their ``m0`` masses. ``support`` is a box ``(lo, hi)``
    containing the support of ``m0``.

    ``growth = (l_lo, l_hi, C_l)`` are the constants of
    ``l_lo |a|^q - C_l <= l(a) <= l_hi |a|^q + C_l`` and ``data_bound``
    bounds ``|f|`` and ``|g|`` on the domain of interest.
    """

    dim: int
    horizon: float
    q: float
    ell: Callable[[np.ndarray], np.ndarray]
    coupling: Callable[[np.ndarray, FiniteMeasure], np.ndarray]
    terminal: Callable[[np.ndarray, FiniteMeasure], np.ndarray]
    m0_cells: Callable[[np.ndarray, np.ndarray], np.ndarray]
    support: tuple
    growth: tuple[float, float, float]
    data_bound: float
    name: str = "continuous"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.q > 1:
            raise ValueError("exponent q must exceed 1")
        lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (self.dim,)).copy() for v in self.support)
        if np.any(lo > hi):
            raise ValueError("support box has lo > hi")
        object.__setattr__(self, "support", (lo, hi))
        l_lo, l_hi, c_l = self.growth
        if not (l_lo > 0 and l_hi >= l_lo and c_l >= 0):
            raise ValueError("growth constants need 0 < l_lo <= l_hi and C_l >= 0")
        if not self.data_bound >= 0:
            raise ValueError("data_bound must be nonnegative")

    @property
    def q_conj(self) -> float:
        return self.q / (self.q - 1)

    def kinetic(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, self.dim)
        return np.asarray(self.ell(flat), dtype=float).reshape(v.shape[:-1])

    def check_growth(self, radius: float = 10.0, samples: int = 2001) -> None:
        """Assert the two-sided growth bound on sampled velocities."""
        rng = np.random.default_rng(0)
        if self.dim == 1:
            v = np.linspace(-radius, radius, samples)[:, None]
        else:
            v = rng.uniform(-radius, radius, size=(samples, self.dim))
        val = self.kinetic(v)
        r = np.linalg.norm(v, axis=1) ** self.q
        l_lo, l_hi, c_l = self.growth
        slack = 1e-9 * (1 + np.abs(val))
        if np.any(val < l_lo * r - c_l - slack) or np.any(val > l_hi * r + c_l + slack):
            raise ValueError("kinetic cost violates the declared growth bound on samples")

    def check_data_bound(self, box, samples: int = 200) -> None:
        """Assert ``|f|, |g| <= data_bound`` on random points and measures in ``box``."""
        rng = np.random.default_rng(1)
        lo, hi = _box(box, self.dim)
        x = rng.uniform(lo, hi, size=(samples, self.dim))
        for _ in range(5):
            pts = rng.uniform(lo, hi, size=(7, self.dim))
            m = FiniteMeasure(pts, rng.dirichlet(np.ones(7)))
            for name, h in (("coupling", self.coupling), ("terminal", self.terminal)):
                vals = np.asarray(h(x, m), dtype=float)
                if np.max(np.abs(vals)) > self.data_bound * (1 + 1e-12):
                    raise ValueError(f"{name} exceeds data_bound on samples")


def _box(box, dim: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,)).copy()
    if np.any(lo > hi):
        raise DomainError("domain box has lo > hi")
    return lo, hi


def default_eps(n_s: int, n_t: int, c: float = DEFAULT_EPS_CONSTANT) -> float:
    """``c / (N_t (log N_s)^2)``, which is ``o(1/(N_t log N_s))``."""
    if n_s < 2:
        raise ValueError("the default entropy rule needs N_s >= 2")
    return c / (n_t * math.log(n_s) ** 2)


@dataclass(frozen=True)
class DiscretizationLevel:
    n_s: int
    n_t: int
    eps: float
    index: int = 0

    def __post_init__(self):
        if self.n_s < 1 or self.n_t < 1:
            raise ValueError("N_s and N_t must be at least 1")
        if not self.eps > 0:
            raise ValueError("entropy weight must be positive")

    @classmethod
    def with_default_eps(cls, n_s: int, n_t: int, index: int = 0, c: float = DEFAULT_EPS_CONSTANT):
        return cls(n_s, n_t, default_eps(n_s, n_t, c), index)

    @property
    def dx(self) -> float:
        return 1.0 / self.n_s

    def dt(self, horizon: float) -> float:
        return horizon / self.n_t


@dataclass(frozen=True)
class Schedule:
    levels: tuple[DiscretizationLevel, ...]

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ValueError("a schedule needs at least one level")
        object.__setattr__(self, "levels", tuple(self.levels))

    def findings(self) -> list[str]:
        """Asymptotic hypotheses the level sequence fails to reflect."""
        out = []
        ratio = [lv.n_t / lv.n_s for lv in self.levels]
        for a, b, lv in zip(ratio, ratio[1:], self.levels[1:]):
            if not b < a:
                out.append(
                    f"level {lv.index}: N_t/N_s does not decrease ({a:.6g} -> {b:.6g}); "
                    "schedule violates N_t/N_s -> 0"
                )
        prod = [lv.eps * lv.n_t * math.log(lv.n_s) if lv.n_s > 1 else math.inf for lv in self.levels]
        for a, b, lv in zip(prod, prod[1:], self.levels[1:]):
            if not b < a:
                out.append(
                    f"level {lv.index}: eps*N_t*log(N_s) does not decrease ({a:.6g} -> {b:.6g}); "
                    "epsilon schedule violates o(1/(N_t log N_s))"
                )
        return out


def lattice(level: DiscretizationLevel, domain_box, dim: int) -> np.ndarray:
    """Points ``i * dx`` with integer ``i`` inside the box, row-major over dimensions."""
    lo, hi = _box(domain_box, dim)
    dx = level.dx
    # small slack so box edges that are lattice points are kept
    axes = [
        np.arange(math.ceil(a / dx - 1e-9), math.floor(b / dx + 1e-9) + 1) * dx for a, b in zip(lo, hi)
    ]
    if any(ax.size == 0 for ax in axes):
        raise DomainError("the lattice has no points inside the domain box")
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def value_oscillation_bound(spec: ContinuousMFGSpec, level: DiscretizationLevel, n_states: int) -> float:
    """Bound on ``sup U - inf U`` at any step, used to size the kernel window.

    Staying put costs at most ``T (l(0) + C) + C``; any policy costs at
    least ``-T C_l - T C - C - eps N_t log |S|``.
    """
    T = spec.horizon
    l0 = float(spec.kinetic(np.zeros((1, spec.dim)))[0])
    C = spec.data_bound
    c_l = spec.growth[2]
    return T * (l0 + c_l) + 2 * C * (T + 1) + level.eps * level.n_t * math.log(max(n_states, 2))


def build_instance(spec: ContinuousMFGSpec, level: DiscretizationLevel, domain_box) -> FiniteMFGInstance:
    """Finite game on the lattice of ``level`` inside ``domain_box``.

    ``meta`` records the initial normalization defect, the kernel window
    threshold and the bound on the mass each row loses to the window.
    """
    d = spec.dim
    lo, hi = _box(domain_box, d)
    s_lo, s_hi = spec.support
    if np.any(s_lo < lo - 1e-12) or np.any(s_hi > hi + 1e-12):
        raise DomainError("the support of m0 is not inside the domain box")
    x = lattice(level, (lo, hi), d)
    S = x.shape[0]
    dx, dt = level.dx, level.dt(spec.horizon)
    cells = np.asarray(spec.m0_cells(x - dx / 2, x + dx / 2), dtype=float)
    if cells.shape != (S,) or np.any(cells < 0) or not np.all(np.isfinite(cells)):
        raise DomainError("m0 cell masses must be finite and nonnegative")
    total = float(cells.sum())
    if total <= 0:
        raise DomainError("m0 puts no mass on the lattice cells")
    defect = 1.0 - total
    disp = (x[None, :, :] - x[:, None, :]) / dt
    K = dt * spec.kinetic(disp)
    osc = value_oscillation_bound(spec, level, S)
    cut = osc + level.eps * (math.log(S) + WINDOW_LOG_CUT)
    far = K - np.diag(K)[:, None] > cut
    K = np.where(far, np.inf, K)
    coords = x

    def coupling_fn(M, coords=coords, dt=dt):
        return dt * np.asarray(spec.coupling(coords, FiniteMeasure(coords, M)), dtype=float)

    def terminal_fn(M, coords=coords):
        return np.asarray(spec.terminal(coords, FiniteMeasure(coords, M)), dtype=float)

    cost = EntropySeparableCost(K, level.eps, coupling_fn, terminal_fn)
    width = int(np.max(np.sum(~far, axis=1)))
    meta = {
        "level": level,
        "spec": spec.name,
        "domain_box": (lo.tolist(), hi.tolist()),
        "normalization_defect": defect,
        "window_cut": cut,
        "window_max_row_support": width,
        "window_tail_bound": math.exp(-WINDOW_LOG_CUT),
    }
    return FiniteMFGInstance(
        StateSet.from_points(x), TimeGrid(level.n_t, spec.horizon), cost, cells / total, meta
    )


@dataclass(frozen=True)
class FPConfig:
    max_iter: int = 20000
    tol: float = 1e-6
    exploit_every: int = 1
    init: str = "identity"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.exploit_every < 1:
            raise ValueError("exploit_every must be at least 1")
        if self.init not in ("identity", "uniform"):
            raise ValueError("init must be 'identity' or 'uniform'")


@dataclass
class LevelSolution:
    """Converged triple of one level plus its diagnostics.

    ``flow`` is the flow induced by ``kernel`` (so forward propagation holds
    exactly); ``values`` are optimal against ``belief``, the averaged flow
    fictitious play stopped at. ``bellman_residual`` measures how far
    ``values`` is from solving the backward equation against ``flow``.
    """

    instance: FiniteMFGInstance
    level: DiscretizationLevel
    values: np.ndarray
    flow: np.ndarray
    kernel: np.ndarray
    belief: np.ndarray
    diagnostics: FPDiagnostics
    bellman_residual: float
    runtime_seconds: float
    extra: dict = field(default_factory=dict)

    @property
    def coords(self) -> np.ndarray:
        return self.instance.states.coords


def bellman_residual(instance: FiniteMFGInstance, U: np.ndarray, flow: np.ndarray) -> float:
    """``sup_{x,k}`` gap between ``U`` and one backward step against ``flow``."""
    cost = instance.cost
    N = instance.n_steps
    res = float(np.max(np.abs(U[N] - cost.terminal_vector(flow[N]))))
    for k in range(N):
        base = cost.kinetic_matrix + U[k + 1][None, :]
        _, v = softmax_rows(base, cost.entropy)
        res = max(res, float(np.max(np.abs(U[k] - v - cost.coupling_vector(flow[k])))))
    return res


def solve_level(
    spec: ContinuousMFGSpec,
    level: DiscretizationLevel,
    domain_box,
    fp_config: FPConfig | None = None,
) -> LevelSolution:
    """Build the level's game and run fictitious play on it.

    The first kernel is the identity (everyone stays put) by default: on
    fine lattices the uniform kernel is far from any equilibrium and the
    exploitability, which decays like ``C/n``, inherits a huge ``C``.
    """
    cfg = fp_config or FPConfig()
    start = time.perf_counter()
    inst = build_instance(spec, level, domain_box)
    init = identity_kernel(inst) if cfg.init == "identity" else uniform_kernel(inst)
    P, belief, diag = run_fp(
        inst, init_kernel=init, max_iter=cfg.max_iter, tol=cfg.tol, exploit_every=cfg.exploit_every
    )
    U, _ = solve_backward(inst, belief)
    M = propagate_marginals(inst, P)
    res = bellman_residual(inst, U, M)
    return LevelSolution(inst, level, U, M, P, belief, diag, res, time.perf_counter() - start)


def interpolate_flow(instance: FiniteMFGInstance, M: np.ndarray, P: np.ndarray, t: float) -> FiniteMeasure:
    """Time-``t`` marginal of the piecewise-affine path measure.

    Mass ``M[k, x] P[k, x, y]`` sits at ``(1 - theta) x + theta y`` where
    ``t = t_k + theta dt``. At grid times this is ``M[k]`` itself.
    """
    x = instance.states.require_coords()
    T, N = instance.time.horizon, instance.n_steps
    if not (0.0 <= t <= T):
        raise ValueError(f"time {t} is outside [0, {T}]")
    s = t / instance.time.dt
    k = int(round(s))
    if abs(s - k) <= 1e-12 * max(1.0, s):
        return FiniteMeasure(x, np.asarray(M[k], dtype=float).copy())
    k = min(int(math.floor(s)), N - 1)
    theta = s - k
    w = M[k][:, None] * P[k]
    keep = w > 0
    ii, jj = np.nonzero(keep)
    pts = (1 - theta) * x[ii] + theta * x[jj]
    return FiniteMeasure(pts, w[keep]).compact()


def energy_estimate(instance: FiniteMFGInstance, M: np.ndarray, P: np.ndarray, q: float) -> float:
    """``E[sum_k dt |(y - x)/dt|^q]`` under the path measure of ``(M, P)``."""
    x = instance.states.require_coords()
    dt = instance.time.dt
    speed = np.linalg.norm(x[None, :, :] - x[:, None, :], axis=-1) / dt
    step = dt * speed**q
    return float(sum(np.sum(M[k][:, None] * P[k] * step) for k in range(instance.n_steps)))


def tail_mass_bound(spec: ContinuousMFGSpec, energy: float, domain_box) -> float:
    """Markov bound on the path mass that would leave the domain box.

    A path with energy ``E`` moves at most ``T^(1/q') E^(1/q)``, so the mass
    moving farther than the margin ``r`` between the support of ``m0`` and
    the box edge is at most ``energy T^(q-1) / r^q``.
    """
    lo, hi = _box(domain_box, spec.dim)
    s_lo, s_hi = spec.support
    r = float(min(np.min(s_lo - lo), np.min(hi - s_hi)))
    if r <= 0:
        return 1.0
    return min(1.0, energy * spec.horizon ** (spec.q - 1) / r**spec.q)


@dataclass(frozen=True)
class PathBundle:
    """Sampled lattice paths; ``states[i, k]`` is the state index at ``t_k``."""

    states: np.ndarray
    coords: np.ndarray
    dt: float

    @property
    def count(self) -> int:
        return self.states.shape[0]

    def vertices(self, i: int) -> np.ndarray:
        return self.coords[self.states[i]]

    def at(self, t: float) -> np.ndarray:
        """Positions of all paths at time ``t`` by affine interpolation."""
        N = self.states.shape[1] - 1
        s = t / self.dt
        if s < -1e-12 or s > N + 1e-12:
            raise ValueError(f"time {t} is outside the path horizon")
        k = min(max(int(math.floor(s)), 0), N - 1)
        theta = min(max(s - k, 0.0), 1.0)
        a = self.coords[self.states[:, k]]
        b = self.coords[self.states[:, k + 1]]
        return (1 - theta) * a + theta * b

    def marginal(self, k: int) -> np.ndarray:
        return np.bincount(self.states[:, k], minlength=self.coords.shape[0]) / self.count


def sample_paths(instance: FiniteMFGInstance, P: np.ndarray, count: int, rng_seed: int) -> PathBundle:
    """Draw ``count`` paths of the Markov chain ``(M0, P)`` with a seeded generator."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(rng_seed)
    S, N = instance.n_states, instance.n_steps
    out = np.empty((count, N + 1), dtype=np.int64)
    out[:, 0] = _draw(np.cumsum(instance.initial)[None, :].repeat(count, axis=0), rng)
    for k in range(N):
        cdf = np.cumsum(P[k], axis=1)
        out[:, k + 1] = _draw(cdf[out[:, k]], rng)
    coords = instance.states.require_coords()
    return PathBundle(out, coords, instance.time.dt)


def _draw(cdf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(cdf.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def density_cells(density: Callable[[np.ndarray], np.ndarray], points_per_axis: int = 8):
    """Cell-mass adapter for an ``m0`` given by a density.

    Integrates by the midpoint rule on a sub-grid of each cell; the caller
    sees the quadrature error as the normalization defect.
    """

    def cells(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        d = lo.shape[1]
        u = (np.arange(points_per_axis) + 0.5) / points_per_axis
        grid = np.stack(np.meshgrid(*([u] * d), indexing="ij"), axis=-1).reshape(-1, d)
        pts = lo[:, None, :] + grid[None, :, :] * (hi - lo)[:, None, :]
        vals = np.asarray(density(pts.reshape(-1, d)), dtype=float).reshape(lo.shape[0], -1)
        return vals.mean(axis=1) * np.prod(hi - lo, axis=1)

    return cells


def sequence_levels(pairs: Sequence[tuple[int, int]], c: float = DEFAULT_EPS_CONSTANT) -> Schedule:
    """Schedule from ``(N_s, N_t)`` pairs with the default entropy rule."""
    return Schedule(tuple(DiscretizationLevel.with_default_eps(s, t, i, c) for i, (s, t) in enumerate(pairs)))
