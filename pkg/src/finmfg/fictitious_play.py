"""Fictitious play for finite mean field games.

Each iteration best-responds to the running average of the induced flows
and folds the new flow into that average::

    P_n      = best response to Mbar_n
    M_{n+1}  = flow induced by P_n
    Mbar_{n+1} = Mbar_n + (M_{n+1} - Mbar_n) / (n + 1)

Exploitability ``phi_n = mean_i J_{Mbar_n}(P_i) - min_P J_{Mbar_n}(P)`` is the
convergence certificate. For separable costs ``J_M(P)`` splits into a
kinetic part that ignores ``M`` and a coupling part linear in the flow of
``P``, so the historical average needs only the kinetic costs ``a_i`` and
``Mbar_n`` itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bellman import backward_sweep, solve_backward
from .core import (
    FiniteMFGInstance,
    check_flow,
    check_kernel,
    coupling_cost,
    kinetic_cost,
    product_kernel,
    propagate_marginals,
    total_cost,
    uniform_kernel,
)
from .errors import StateError
from .wasserstein import GroundMetric, flow_distance


@dataclass(frozen=True)
class FPRecord:
    n: int
    phi: float
    kernel_delta: float
    flow_delta_d1: float
    best_response_value: float


@dataclass
class FPDiagnostics:
    """Per-iteration trace plus the outcome of a run."""

    records: list[FPRecord] = field(default_factory=list)
    converged: bool = False
    fixed_point_residual: float = math.nan
    tol: float = math.nan
    metric: str = "euclidean"

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def phi(self) -> np.ndarray:
        return self.column("phi")

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_phi(self) -> float:
        phi = self.phi
        phi = phi[~np.isnan(phi)]
        return float(phi[-1]) if phi.size else math.nan


@dataclass
class FPState:
    """Fictitious-play state after ``n`` absorbed kernels.

    ``flows`` (per-iterate induced flows) is kept only when requested;
    ``kernels`` only for non-separable models, whose exploitability has to
    be recomputed from scratch.
    """

    n: int
    mean_flow: np.ndarray
    kinetic: list[float]
    last_kernel: np.ndarray
    flows: list[np.ndarray] | None = None
    kernels: list[np.ndarray] | None = None
    diagnostics: FPDiagnostics = field(default_factory=FPDiagnostics)
    metric: GroundMetric | None = None


def init_state(
    instance: FiniteMFGInstance,
    init_flow=None,
    *,
    init_kernel=None,
    keep_flows: bool = True,
    metric: GroundMetric | None = None,
) -> FPState:
    """State with one absorbed kernel.

    The first kernel is ``init_kernel`` if given, otherwise the kernel that
    sends every state to ``init_flow[k + 1]`` (which needs ``init_flow[0]``
    to equal ``M0``), otherwise the uniform kernel.
    """
    if init_kernel is not None and init_flow is not None:
        raise ValueError("pass either init_flow or init_kernel, not both")
    if init_kernel is not None:
        P = check_kernel(instance, init_kernel)
    elif init_flow is not None:
        flow = check_flow(instance, init_flow)
        if not np.allclose(flow[0], instance.initial, rtol=0, atol=1e-9):
            raise ValueError("init_flow[0] must equal the initial distribution")
        P = product_kernel(flow)
    else:
        P = uniform_kernel(instance)
    M = propagate_marginals(instance, P)
    separable = instance.cost.separable
    if metric is None:
        metric = GroundMetric.for_states(instance.states)
    diag = FPDiagnostics(metric="euclidean" if instance.states.embedded else "discrete")
    return FPState(
        n=1,
        mean_flow=M,
        kinetic=[kinetic_cost(instance, P, M)] if separable else [],
        last_kernel=P,
        flows=[M] if keep_flows else None,
        kernels=None if separable else [P],
        diagnostics=diag,
        metric=metric,
    )


def _average_cost(instance: FiniteMFGInstance, state: FPState) -> float:
    """``(1/n) sum_i J_{Mbar_n}(P_i)``."""
    if state.kernels is not None:
        return float(np.mean([total_cost(instance, P, state.mean_flow) for P in state.kernels]))
    # the coupling part is linear in the flow, and the flows average to Mbar
    return float(np.mean(state.kinetic)) + coupling_cost(instance, state.mean_flow, state.mean_flow)


def exploitability(instance: FiniteMFGInstance, state: FPState) -> float:
    """``phi_n`` for the current average flow; one backward solve."""
    if state.n < 1 or (not state.kinetic and not state.kernels):
        raise StateError("exploitability needs at least one absorbed kernel")
    U, _ = solve_backward(instance, state.mean_flow)
    return _average_cost(instance, state) - float(instance.initial @ U[0])


def naive_exploitability(instance: FiniteMFGInstance, kernels, mean_flow) -> float:
    """Recompute ``phi`` from stored kernels with full cost evaluations."""
    avg = np.mean([total_cost(instance, P, mean_flow) for P in kernels])
    U, _ = solve_backward(instance, mean_flow)
    return float(avg - instance.initial @ U[0])


@dataclass(frozen=True)
class BestResponse:
    kernel: np.ndarray
    value: float
    phi: float
    kinetic_rows: np.ndarray | None = None


def best_respond(instance: FiniteMFGInstance, state: FPState) -> BestResponse:
    """Best response ``P_n`` to ``Mbar_n`` with its value and ``phi_n``."""
    U, P, kin = backward_sweep(instance, state.mean_flow)
    value = float(instance.initial @ U[0])
    phi = _average_cost(instance, state) - value
    return BestResponse(P, value, phi, kin)


def absorb(instance: FiniteMFGInstance, state: FPState, P, kinetic_rows: np.ndarray | None = None) -> float:
    """Fold the flow of ``P`` into the average; returns the d1 change of the average.

    ``kinetic_rows`` (expected kinetic cost per step and state) skips the
    recomputation when the caller already has it.
    """
    if isinstance(P, BestResponse):
        P, kinetic_rows = P.kernel, P.kinetic_rows
    M = propagate_marginals(instance, P)
    old = state.mean_flow
    state.mean_flow = old + (M - old) / (state.n + 1)
    state.n += 1
    if state.kernels is not None:
        state.kernels.append(P)
    elif kinetic_rows is not None:
        state.kinetic.append(float(np.sum(M[:-1] * kinetic_rows)))
    else:
        state.kinetic.append(kinetic_cost(instance, P, M))
    if state.flows is not None:
        state.flows.append(M)
    state.last_kernel = P
    return flow_distance(state.mean_flow, old, state.metric)


def fp_step(instance: FiniteMFGInstance, state: FPState, record_phi: bool = True) -> FPState:
    """One fictitious-play iteration, recorded in ``state.diagnostics``."""
    br = best_respond(instance, state)
    delta = float(np.abs(br.kernel - state.last_kernel).max())
    n = state.n
    moved = absorb(instance, state, br)
    state.diagnostics.records.append(FPRecord(n, br.phi if record_phi else math.nan, delta, moved, br.value))
    return state


def run_fp(
    instance: FiniteMFGInstance,
    init_flow=None,
    max_iter: int = 2000,
    tol: float = 1e-4,
    *,
    init_kernel=None,
    exploit_every: int = 1,
    keep_flows: bool = False,
) -> tuple[np.ndarray, np.ndarray, FPDiagnostics]:
    """Iterate until ``phi_n <= tol`` or ``max_iter`` best responses.

    Returns the last best response, the last average flow and the trace.
    Running out of iterations sets ``diagnostics.converged = False``
    instead of raising. ``phi`` is evaluated at ``n = 1`` and every
    ``exploit_every``-th iteration; other records hold NaN.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if exploit_every < 1:
        raise ValueError("exploit_every must be at least 1")
    state = init_state(instance, init_flow, init_kernel=init_kernel, keep_flows=keep_flows)
    diag = state.diagnostics
    diag.tol = tol
    P = state.last_kernel
    for it in range(max_iter):
        n = state.n
        br = best_respond(instance, state)
        P, value, phi = br.kernel, br.value, br.phi
        checked = n == 1 or n % exploit_every == 0
        delta = float(np.abs(P - state.last_kernel).max())
        if checked and phi <= tol:
            diag.converged = True
        if diag.converged or it == max_iter - 1:
            # the last best response is returned, not absorbed
            diag.records.append(FPRecord(n, phi if checked else math.nan, delta, math.nan, value))
            break
        moved = absorb(instance, state, br)
        diag.records.append(FPRecord(n, phi if checked else math.nan, delta, moved, value))
    own = propagate_marginals(instance, P)
    diag.fixed_point_residual = flow_distance(state.mean_flow, own, state.metric)
    return P, state.mean_flow, diag


def trend_holds(phi: np.ndarray, head: int = 10, tail_fraction: float = 0.25) -> bool:
    """Max over the last ``tail_fraction`` of the trace is at most the min of the first ``head``."""
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    phi = np.asarray(phi, dtype=float)
    phi = phi[~np.isnan(phi)]
    if phi.size < head:
        return False
    tail = phi[int(round((1 - tail_fraction) * phi.size)):]
    return bool(tail.max() <= phi[:head].min())


@dataclass(frozen=True)
class MonotonicityReport:
    values: np.ndarray
    min_value: float
    violation: tuple[np.ndarray, np.ndarray] | None

    @property
    def monotone(self) -> bool:
        return self.violation is None


def check_monotonicity(h, n_states: int, sample_count: int, rng_seed: int = 0) -> MonotonicityReport:
    """Sample ``sum_x (h(M)[x] - h(M')[x]) (M(x) - M'(x))`` over random pairs.

    ``h`` maps a distribution to a vector over states. A pair is reported
    when the sampled minimum is below ``-1e-10``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    rng = np.random.default_rng(rng_seed)
    values = np.empty(sample_count)
    pairs = []
    for i in range(sample_count):
        # mix flat and peaked draws so near-vertex pairs are covered too
        alpha = 1.0 if i % 2 == 0 else 0.2
        M, M2 = rng.dirichlet(np.full(n_states, alpha), size=2)
        values[i] = float((np.asarray(h(M)) - np.asarray(h(M2))) @ (M - M2))
        pairs.append((M, M2))
    i = int(np.argmin(values))
    violation = pairs[i] if values[i] < -1e-10 else None
    return MonotonicityReport(values, float(values[i]), violation)


def cross_difference_report(
    instance: FiniteMFGInstance, sample_count: int, rng_seed: int = 0
) -> dict:
    """Sampled ratios for the cross-difference estimate of the cost.

    For random kernels ``P1, P2`` and belief flows ``M1, M2`` computes
    ``|J_M1(P1) - J_M2(P1) - J_M1(P2) + J_M2(P2)| / (|P1 - P2|_inf d1(M1, M2))``,
    with ``d1`` taken as the sup over time slices. The largest ratio is an
    empirical lower estimate of the constant; nothing is asserted.
    """
    rng = np.random.default_rng(rng_seed)
    N, S = instance.n_steps, instance.n_states
    metric = GroundMetric.for_states(instance.states)
    ratios = []
    for _ in range(sample_count):
        P1, P2 = (rng.dirichlet(np.ones(S), size=(N, S)) for _ in range(2))
        M1, M2 = (rng.dirichlet(np.ones(S), size=N + 1) for _ in range(2))
        cross = (
            total_cost(instance, P1, M1)
            - total_cost(instance, P1, M2)
            - total_cost(instance, P2, M1)
            + total_cost(instance, P2, M2)
        )
        scale = float(np.abs(P1 - P2).max()) * flow_distance(M1, M2, metric)
        if scale > 0:
            ratios.append(abs(cross) / scale)
    ratios = np.array(ratios)
    return {
        "samples": int(ratios.size),
        "max_ratio": float(ratios.max()) if ratios.size else math.nan,
        "median_ratio": float(np.median(ratios)) if ratios.size else math.nan,
    }
