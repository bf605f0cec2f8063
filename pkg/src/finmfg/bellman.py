"""Backward dynamic programming against a fixed belief flow."""

from __future__ import annotations

import numpy as np

from .core import EntropySeparableCost, FiniteMFGInstance, LOG_FLOOR, check_flow
from .errors import ConvergenceError, InfeasibleError, NumericDomainError
from .simplex import DEFAULT_TOL, InnerProblem, general_minimizer, softmax_rows


def solve_backward(
    instance: FiniteMFGInstance, belief, tol: float = DEFAULT_TOL
) -> tuple[np.ndarray, np.ndarray]:
    """Value table ``U`` (shape ``(N+1, S)``) and best-response kernel.

    ``U[N] = g(., belief[N])`` and for ``k < N``
    ``U[k, x] = min_p sum_y p(y) [c_xy(p, belief[k]) + U[k+1, y]]``,
    attained at the returned row ``P[k, x]``. ``tol`` is used only by the
    iterative inner solver for general cost models.
    """
    U, P, _ = backward_sweep(instance, belief, tol)
    return U, P


def backward_sweep(
    instance: FiniteMFGInstance, belief, tol: float = DEFAULT_TOL
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """:func:`solve_backward` plus, for entropy-separable costs, the expected
    kinetic cost of every best-response row (``None`` otherwise)."""
    belief = check_flow(instance, belief)
    N, S = instance.n_steps, instance.n_states
    cost = instance.cost
    U = np.empty((N + 1, S))
    P = np.empty((N, S, S))
    U[N] = cost.terminal_vector(belief[N])
    if not np.all(np.isfinite(U[N])):
        raise NumericDomainError("terminal cost is not finite")
    if isinstance(cost, EntropySeparableCost):
        K = cost.kinetic_matrix
        kin = np.empty((N, S))
        for k in range(N - 1, -1, -1):
            base = K + U[k + 1][None, :]
            f = cost.coupling_vector(belief[k])
            if cost.entropy > 0:
                P[k], v = softmax_rows(base, cost.entropy)
            else:
                # argmin picks the lowest index among ties
                best = np.argmin(base, axis=1)
                P[k] = 0.0
                P[k, np.arange(S), best] = 1.0
                v = base[np.arange(S), best]
            U[k] = v + f
            if not np.all(np.isfinite(U[k])):
                raise NumericDomainError(f"value at step {k} is not finite")
            # v is the row minimum of kinetic + continuation, so this is the kinetic part
            kin[k] = v - P[k] @ U[k + 1]
        return U, P, kin
    for k in range(N - 1, -1, -1):
        Mk = belief[k]
        nxt = U[k + 1]
        for x in range(S):
            def objective(p, x=x, Mk=Mk, nxt=nxt):
                c = cost.row_costs(x, p, Mk)
                keep = p > LOG_FLOOR
                return float(np.sum(p[keep] * (c[keep] + nxt[keep])))

            try:
                P[k, x], U[k, x] = general_minimizer(InnerProblem(nxt, objective=objective), tol=tol)
            except ConvergenceError as err:
                raise err.with_context(x=x, k=k) from err
            except (InfeasibleError, NumericDomainError) as err:
                raise type(err)(f"{err} [x={x}, k={k}]") from err
            if not np.isfinite(U[k, x]):
                raise NumericDomainError(f"value at x={x}, k={k} is not finite")
    return U, P, None


def best_response_value(instance: FiniteMFGInstance, belief, tol: float = DEFAULT_TOL) -> float:
    """``min_P J_belief(P) = sum_x M0(x) U(x, 0)``."""
    U, _ = solve_backward(instance, belief, tol=tol)
    return float(instance.initial @ U[0])
