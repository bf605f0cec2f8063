"""One-step minimization over the probability simplex.

The dynamic-programming step minimizes ``sum_y p(y) [c_xy(p, M) + U(y)]``
over distributions ``p``. For entropy-penalized costs the minimizer is a
softmax of the base costs; anything else goes through exponentiated
gradient (mirror descent with the entropy mirror map).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import LOG_FLOOR, xlogx
from .errors import ConvergenceError, InfeasibleError, NumericDomainError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000


def softmax_rows(base: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise entropy-regularized minimizers.

    For every row ``b`` returns ``p = exp(-b/eps) / Z`` and the optimal
    value ``-eps*log(sum(exp(-b/eps)))``. ``+inf`` entries get zero mass.
    """
    if not eps > 0:
        raise NumericDomainError(f"entropy weight must be positive, got {eps}")
    base = np.atleast_2d(np.asarray(base, dtype=float))
    if np.any(np.isnan(base)) or np.any(base == -np.inf):
        raise ValueError("base costs must be finite or +inf")
    finite = np.isfinite(base)
    if not np.all(finite.any(axis=1)):
        raise InfeasibleError("all base costs are +inf")
    shift = np.where(finite, base, np.inf).min(axis=1, keepdims=True)
    w = np.exp(-(base - shift) / eps)
    z = w.sum(axis=1, keepdims=True)
    p = w / z
    value = shift[:, 0] - eps * np.log(z[:, 0])
    return p, value


def softmax_minimizer(base_costs, eps: float) -> tuple[np.ndarray, float]:
    """Minimize ``sum_y p(y) [b(y) + eps*log p(y)]`` in closed form."""
    b = np.asarray(base_costs, dtype=float)
    if b.ndim != 1:
        raise ValueError("base costs must be a 1-d array")
    p, v = softmax_rows(b[None, :], eps)
    return p[0], float(v[0])


def entropy_objective(p: np.ndarray, base: np.ndarray, eps: float) -> float:
    mass = np.where(p > LOG_FLOOR, p * base, 0.0)
    return float(mass.sum() + eps * xlogx(p).sum())


@dataclass
class InnerProblem:
    """Data of one simplex minimization.

    Either ``objective`` is given (a callable on probability vectors, with an
    optional ``gradient``), or the objective is the entropy-penalized linear
    form built from ``base_costs`` and ``entropy``.
    """

    base_costs: np.ndarray
    entropy: float = 0.0
    objective: Callable[[np.ndarray], float] | None = None
    gradient: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        self.base_costs = np.asarray(self.base_costs, dtype=float)
        if self.entropy < 0:
            raise ValueError("entropy weight must be nonnegative")
        if self.objective is None and not np.all(np.isfinite(self.base_costs)):
            raise ValueError("base costs must be finite")

    @property
    def size(self) -> int:
        return self.base_costs.size

    def value(self, p: np.ndarray) -> float:
        if self.objective is not None:
            return float(self.objective(p))
        return entropy_objective(p, self.base_costs, self.entropy)

    def grad(self, p: np.ndarray) -> np.ndarray:
        if self.gradient is not None:
            return np.asarray(self.gradient(p), dtype=float)
        if self.objective is None:
            logs = np.where(p > LOG_FLOOR, np.log(np.maximum(p, LOG_FLOOR)), np.log(LOG_FLOOR))
            return self.base_costs + self.entropy * (logs + 1.0)
        return finite_difference_gradient(self.objective, p)


def finite_difference_gradient(fun: Callable[[np.ndarray], float], p: np.ndarray) -> np.ndarray:
    """Coordinate gradient by central differences, one-sided at zero mass."""
    g = np.empty_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        if p[i] > 2e-8:
            h = min(1e-6, 0.5 * p[i])
            e[i] = h
            g[i] = (fun(p + e) - fun(p - e)) / (2 * h)
        else:
            h = 1e-8
            e[i] = h
            g[i] = (fun(p + e) - fun(p)) / h
    return g


def _estimate_smoothness(problem: InnerProblem, rng: np.random.Generator, samples: int = 8) -> float:
    n = problem.size
    best = 0.0
    pts = rng.dirichlet(np.ones(n), size=2 * samples)
    # keep samples away from the boundary where entropic curvature blows up
    pts = 0.5 * pts + 0.5 / n
    for a, b in zip(pts[:samples], pts[samples:]):
        dist = np.abs(a - b).sum()
        if dist > 0:
            best = max(best, np.abs(problem.grad(a) - problem.grad(b)).max() / dist)
    return best


def general_minimizer(
    problem: InnerProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER
) -> tuple[np.ndarray, float]:
    """Exponentiated-gradient minimization started at the uniform vector.

    The step size starts at ``1/L`` with ``L`` a sampled smoothness estimate,
    backtracks on the mirror-descent sufficient-decrease test and grows by
    25% after steps that pass it with margin. Stops when the gradient-mapping
    residual ``||p_new - p||_1 / step`` drops to ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = problem.size
    if n == 1:
        p = np.ones(1)
        return p, problem.value(p)
    p = np.full(n, 1.0 / n)
    fp = problem.value(p)
    g = problem.grad(p)
    scale = max(1.0, float(np.abs(g).max()))
    L = _estimate_smoothness(problem, np.random.default_rng(0))
    eta_max = 1e12 / scale
    eta = min(eta_max, 1.0 / L) if L > 0 else eta_max
    residual = np.inf
    for _ in range(max_iter):
        while True:
            logp = np.log(np.maximum(p, LOG_FLOOR)) - eta * g
            logp[p <= 0] = -np.inf
            logp -= logp.max()
            q = np.exp(logp)
            q /= q.sum()
            fq = problem.value(q)
            pos = q > 0
            kl = float(np.sum(q[pos] * (np.log(q[pos]) - np.log(np.maximum(p[pos], LOG_FLOOR)))))
            gap = fq - fp - float(g @ (q - p))
            if gap <= kl / eta + 1e-14 * max(1.0, abs(fp)) or eta < 1e-300:
                break
            eta *= 0.5
        residual = float(np.abs(q - p).sum()) / eta
        p, fp = q, fq
        if residual <= tol:
            return p, fp
        g = problem.grad(p)
        # grow only on a clear pass; near the optimum the test is round-off
        if kl / eta > 1e-10 * max(1.0, abs(fp)) and gap <= 0.5 * kl / eta:
            eta = min(eta * 1.25, eta_max)
    raise ConvergenceError("exponentiated gradient did not converge", residual)
