"""Entropy-free reference solution of the continuous control problem.

For a frozen flow ``m`` the value ``u(x, t)`` is the infimum of
``int_t^T [l(dot gamma) + f(gamma, m)] ds + g(gamma(T), m(T))`` over curves
starting at ``x``. The oracle approximates it by a semi-Lagrangian sweep

    u(x, t_k) = min_a  dt l(a) + dt f(x, m(t_k)) + u(x + a dt, t_{k+1})

over a symmetric velocity lattice, with piecewise-linear interpolation in
space, and refines space, velocity and time together until the answer
stops moving. Only one space dimension is supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .core import FiniteMeasure, FiniteMFGInstance, propagate_marginals
from .discretizer import ContinuousMFGSpec, interpolate_flow
from .errors import ConvergenceError, UnsupportedModelError


class Hamiltonian:
    """``H(z) = sup_a {-z.a - l(a)}`` for a kinetic cost ``l``.

    Power costs ``s |a|^q`` use the closed form
    ``(q - 1) s (|z| / (s q))^(q/(q-1))``; anything else is maximized
    numerically.
    """

    def __init__(self, ell: Callable[[np.ndarray], np.ndarray], dim: int = 1, power: tuple[float, float] | None = None):
        self.ell = ell
        self.dim = dim
        self.power = power

    @classmethod
    def power_cost(cls, q: float, scale: float | None = None, dim: int = 1) -> "Hamiltonian":
        """``l(a) = scale |a|^q``; ``scale`` defaults to ``1/q``."""
        if not q > 1:
            raise ValueError("q must exceed 1")
        s = 1.0 / q if scale is None else float(scale)
        if not s > 0:
            raise ValueError("scale must be positive")

        def ell(a, q=q, s=s):
            return s * np.linalg.norm(np.atleast_2d(a), axis=-1) ** q

        return cls(ell, dim, power=(q, s))

    def kinetic(self, a) -> float:
        return float(np.asarray(self.ell(np.asarray(a, dtype=float).reshape(1, self.dim)))[0])

    def closed_form(self, z) -> float:
        q, s = self.power
        r = float(np.linalg.norm(np.atleast_1d(z)))
        return (q - 1) * s * (r / (s * q)) ** (q / (q - 1))

    def numeric(self, z, tol: float = 1e-12) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.size != self.dim:
            raise ValueError(f"z must have {self.dim} entries")
        if self.dim == 1:
            return self._numeric_1d(float(z[0]), tol)

        def neg(a):
            return z @ a + self.kinetic(a)

        res = minimize(neg, -z, method="BFGS", options={"gtol": 1e-10})
        if not res.success:
            raise ConvergenceError(f"numeric sup failed: {res.message}", float(np.linalg.norm(res.jac)))
        return float(-res.fun)

    def _numeric_1d(self, z: float, tol: float) -> float:
        def neg(a):
            return z * a + self.kinetic([a])

        # grow a bracket around 0 until the objective rises at both ends
        width = 1.0
        for _ in range(60):
            lo, hi = -width, width
            mid = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": tol})
            if abs(mid.x) < 0.9 * width:
                break
            width *= 2
        else:
            raise ConvergenceError(f"numeric sup did not settle; last bracket [{lo}, {hi}]", width)
        # polish on a tight bracket around the maximizer
        a0 = mid.x
        h = max(1e-3, 1e-3 * abs(a0))
        res = minimize_scalar(neg, bounds=(a0 - h, a0 + h), method="bounded", options={"xatol": tol})
        return float(-min(res.fun, mid.fun))

    def __call__(self, z) -> float:
        if self.power is not None:
            return self.closed_form(z)
        return self.numeric(z)


def hamiltonian_eval(H: Hamiltonian, z) -> float:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    return H(z)


@dataclass(frozen=True)
class OracleConfig:
    """Starting resolution and refinement rule of the semi-Lagrangian oracle.

    Each refinement halves ``dx`` and ``dv`` and doubles ``n_steps``. The
    interpolation error scales like ``dx^2 / dt``, so ``dx`` starts small
    relative to the time step. The sweep stops once successive solutions differ by less than ``tol`` (sup
    norm over ``window``, at the coarser grid points).
    """

    dx: float = 0.002
    n_steps: int = 48
    dv: float = 0.05
    v_radius: float = 1.5
    tol: float = 1e-3
    max_refinements: int = 4
    window: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self):
        if not (self.dx > 0 and self.dv > 0 and self.v_radius > 0 and self.tol > 0):
            raise ValueError("oracle resolutions and tolerance must be positive")
        if self.n_steps < 1 or self.max_refinements < 1:
            raise ValueError("n_steps and max_refinements must be at least 1")

    def refined(self) -> "OracleConfig":
        return replace(self, dx=self.dx / 2, dv=self.dv / 2, n_steps=2 * self.n_steps)


@dataclass
class ReferenceValue:
    """Grid values ``u[k, i]`` at ``(times[k], x[i])``."""

    x: np.ndarray
    times: np.ndarray
    u: np.ndarray
    config: OracleConfig
    deltas: list[float] = field(default_factory=list)
    flow_key: np.ndarray | None = None

    def at(self, x, t: float) -> np.ndarray:
        """Piecewise-linear in ``x`` and ``t``."""
        x = np.asarray(x, dtype=float).reshape(-1)
        T = self.times[-1]
        if t < -1e-12 or t > T + 1e-12:
            raise ValueError(f"time {t} is outside [0, {T}]")
        s = t / (T / (len(self.times) - 1))
        k = int(round(s))
        if abs(s - k) <= 1e-9:
            return np.interp(x, self.x, self.u[k])
        k = min(int(math.floor(s)), len(self.times) - 2)
        th = s - k
        return (1 - th) * np.interp(x, self.x, self.u[k]) + th * np.interp(x, self.x, self.u[k + 1])


def _grid(lo: float, hi: float, dx: float) -> np.ndarray:
    n = int(round((hi - lo) / dx))
    return lo + dx * np.arange(n + 1)


def semi_lagrangian(
    spec: ContinuousMFGSpec,
    flow: Callable[[float], FiniteMeasure],
    cfg: OracleConfig,
    domain: tuple[float, float],
) -> ReferenceValue:
    """One backward sweep at the resolution of ``cfg``."""
    T = spec.horizon
    x = _grid(domain[0], domain[1], cfg.dx)
    nv = int(round(cfg.v_radius / cfg.dv))
    a = cfg.dv * np.arange(-nv, nv + 1)
    dt = T / cfg.n_steps
    times = dt * np.arange(cfg.n_steps + 1)
    run = dt * spec.kinetic(a[:, None])
    u = np.empty((cfg.n_steps + 1, x.size))
    u[-1] = spec.terminal(x[:, None], flow(T))
    feet = x[:, None] + dt * a[None, :]
    for k in range(cfg.n_steps - 1, -1, -1):
        cont = np.interp(feet, x, u[k + 1])
        # only the value is kept, so ties between velocities do not matter
        u[k] = np.min(run[None, :] + cont, axis=1) + dt * spec.coupling(x[:, None], flow(times[k]))
    return ReferenceValue(x, times, u, cfg)


def reference_value(
    spec: ContinuousMFGSpec,
    flow: Callable[[float], FiniteMeasure],
    config: OracleConfig | None = None,
    domain: tuple[float, float] | None = None,
) -> ReferenceValue:
    """Refine the semi-Lagrangian sweep until it changes by less than ``config.tol``.

    ``flow(t)`` returns the frozen measure ``m(t)``. Raises
    :class:`ConvergenceError` carrying the last delta when the refinement
    budget runs out.
    """
    if spec.dim != 1:
        raise UnsupportedModelError("the reference solver handles one space dimension only")
    cfg = config or OracleConfig()
    if domain is None:
        reach = cfg.v_radius * spec.horizon
        domain = (cfg.window[0] - reach, cfg.window[1] + reach)
    prev = semi_lagrangian(spec, flow, cfg, domain)
    deltas: list[float] = []
    lo, hi = cfg.window
    for _ in range(cfg.max_refinements):
        cfg = cfg.refined()
        cur = semi_lagrangian(spec, flow, cfg, domain)
        inside = (prev.x >= lo - 1e-12) & (prev.x <= hi + 1e-12)
        # coarse times are every other fine time
        fine = np.stack([np.interp(prev.x[inside], cur.x, row) for row in cur.u[::2]])
        delta = float(np.max(np.abs(fine - prev.u[:, inside])))
        deltas.append(delta)
        prev = cur
        if delta < cfg.tol:
            prev.deltas = deltas
            return prev
    raise ConvergenceError("reference value did not stabilize", deltas[-1], {"deltas": deltas})


def flow_of(instance: FiniteMFGInstance, M: np.ndarray, P: np.ndarray) -> Callable[[float], FiniteMeasure]:
    """Frozen flow ``t -> m(t)`` from a discrete solution, with a small cache."""
    cache: dict[float, FiniteMeasure] = {}

    def m(t: float) -> FiniteMeasure:
        key = round(float(t), 12)
        if key not in cache:
            cache[key] = interpolate_flow(instance, M, P, min(float(t), instance.time.horizon))
        return cache[key]

    return m


def reference_for_solution(
    spec: ContinuousMFGSpec,
    instance: FiniteMFGInstance,
    P: np.ndarray,
    config: OracleConfig | None = None,
    domain: tuple[float, float] | None = None,
) -> ReferenceValue:
    """Reference value against the flow induced by ``P`` on ``instance``."""
    M = propagate_marginals(instance, P)
    ref = reference_value(spec, flow_of(instance, M, P), config, domain)
    ref.flow_key = M
    return ref


def path_cost(spec: ContinuousMFGSpec, instance: FiniteMFGInstance, P: np.ndarray) -> float:
    """Expected entropy-free cost of the path measure of ``(M0, P)`` against its own flow."""
    M = propagate_marginals(instance, P)
    x = instance.states.require_coords()
    dt = instance.time.dt
    step = dt * spec.kinetic((x[None, :, :] - x[:, None, :]) / dt)
    total = 0.0
    for k in range(instance.n_steps):
        moved = M[k][:, None] * P[k]
        total += float(np.sum(np.where(moved > 0, moved * step, 0.0)))
        total += dt * float(M[k] @ spec.coupling(x, FiniteMeasure(x, M[k])))
    total += float(M[-1] @ spec.terminal(x, FiniteMeasure(x, M[-1])))
    return total


def equilibrium_residual(
    spec: ContinuousMFGSpec, instance: FiniteMFGInstance, P: np.ndarray, u_ref: ReferenceValue
) -> float:
    """``E_xi[path cost] - sum_x M0(x) u_ref(x, 0)`` for the path measure of ``(M0, P)``.

    ``u_ref`` must have been built against the flow induced by ``P``.
    """
    M = propagate_marginals(instance, P)
    if u_ref.flow_key is None or u_ref.flow_key.shape != M.shape or not np.allclose(
        u_ref.flow_key, M, rtol=0, atol=1e-12
    ):
        raise ValueError("reference value was built against a different flow")
    x = instance.states.require_coords()[:, 0]
    return path_cost(spec, instance, P) - float(instance.initial @ u_ref.at(x, 0.0))
