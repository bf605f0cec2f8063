"""The four command-line workflows.

Each workflow writes its CSV tables into an output directory and returns a
:class:`RunResult`. Writing the manifest and summary and mapping outcomes
to exit codes is left to :mod:`finmfg.cli`.

CSV column contracts (floats have 17 significant digits):

* ``values.csv``, ``flow.csv``, ``belief.csv``: ``k,x,value``
* ``kernel.csv``: ``k,x,y,value``
* ``states.csv``: ``x,label[,coord_j...]``
* ``diagnostics.csv`` / ``trace_<init>.csv``:
  ``n,phi,kernel_delta,flow_delta_d1,best_response_value``
* ``agreement.csv``: ``init_a,init_b,sup_d1``
* ``sweep.csv``: one row per level, columns :data:`SWEEP_COLUMNS`
* ``level<i>_reference.csv``: ``k,t,x,u`` (oracle on the comparison window)
* ``level<i>_equicontinuity.csv``: ``s,t,d1,bound``
* ``monotone.csv``: ``sample,value``
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_spec
from .core import propagate_marginals
from .discretizer import (
    DiscretizationLevel,
    FPConfig,
    energy_estimate,
    interpolate_flow,
    solve_level,
    tail_mass_bound,
)
from .errors import ConvergenceError
from .fictitious_play import check_monotonicity, run_fp, trend_holds
from .hjb import OracleConfig, equilibrium_residual, reference_for_solution
from .io import write_flow, write_kernel, write_states, write_table, write_values
from .wasserstein import GroundMetric, d1_measures, flow_distance

TRACE_COLUMNS = ["n", "phi", "kernel_delta", "flow_delta_d1", "best_response_value"]
SWEEP_COLUMNS = [
    "level",
    "N_s",
    "N_t",
    "eps",
    "n_states",
    "sup_value_error",
    "energy",
    "equilibrium_gap",
    "fp_iterations",
    "fp_converged",
    "final_phi",
    "fixed_point_residual",
    "bellman_residual",
    "tail_mass_bound",
    "normalization_defect",
    "oracle_last_delta",
    "equicontinuity_constant",
    "equicontinuity_violations",
]


@dataclass
class RunResult:
    """Outcome of one workflow; ``converged`` False maps to exit code 3."""

    outputs: list[str] = field(default_factory=list)
    summary: list[str] = field(default_factory=list)
    converged: bool = True
    runtimes: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)


def _trace(path: Path, diag, metric: str) -> Path:
    rows = ([r.n, r.phi, r.kernel_delta, r.flow_delta_d1, r.best_response_value] for r in diag.records)
    return write_table(path, TRACE_COLUMNS, rows, [f"flow_delta_d1 metric: {metric}"])


def _initial(cfg: ExperimentConfig, inst, init: str) -> dict:
    from .core import identity_kernel, uniform_kernel

    if init == "uniform":
        return {"init_kernel": uniform_kernel(inst)}
    if init == "identity":
        return {"init_kernel": identity_kernel(inst)}
    # everyone believes the population never moves
    return {"init_flow": np.repeat(inst.initial[None, :], inst.n_steps + 1, axis=0)}


def _fp(cfg: ExperimentConfig, init: str):
    inst = cfg.instance
    return run_fp(
        inst, max_iter=cfg.fp.max_iter, tol=cfg.fp.tol, exploit_every=cfg.fp.exploit_every, **_initial(cfg, inst, init)
    )


def solve_finite(cfg: ExperimentConfig, out: Path) -> RunResult:
    inst = cfg.instance
    res = RunResult()
    t0 = time.perf_counter()
    P, belief, diag = _fp(cfg, cfg.fp.init)
    res.runtimes["fictitious_play"] = time.perf_counter() - t0
    from .bellman import solve_backward

    U, _ = solve_backward(inst, belief)
    M = propagate_marginals(inst, P)
    res.outputs += [
        write_states(out / "states.csv", inst.states).name,
        write_values(out / "values.csv", U).name,
        write_flow(out / "flow.csv", M).name,
        write_flow(out / "belief.csv", belief).name,
        write_kernel(out / "kernel.csv", P).name,
        _trace(out / "diagnostics.csv", diag, diag.metric).name,
    ]
    res.converged = diag.converged
    res.details = {
        "iterations": diag.iterations,
        "final_phi": diag.final_phi,
        "fixed_point_residual": diag.fixed_point_residual,
        "trend_holds": trend_holds(diag.phi),
        "value": float(inst.initial @ U[0]),
    }
    res.summary += [
        f"instance: {inst.meta.get('name', 'instance')} ({inst.n_states} states, {inst.n_steps} steps)",
        f"fictitious play: {diag.iterations} iterations, converged={diag.converged}",
        f"final exploitability: {diag.final_phi:.6g} (tolerance {cfg.fp.tol:g})",
        f"fixed-point residual (sup_k d1): {diag.fixed_point_residual:.6g}",
        f"exploitability trend holds: {res.details['trend_holds']}",
        f"equilibrium value: {res.details['value']:.12g}",
    ]
    return res


def fictitious_play_trace(cfg: ExperimentConfig, out: Path) -> RunResult:
    inst = cfg.instance
    res = RunResult(converged=True)
    beliefs = {}
    metric = GroundMetric.for_states(inst.states)
    for init in cfg.inits:
        t0 = time.perf_counter()
        P, belief, diag = _fp(cfg, init)
        res.runtimes[f"fp_{init}"] = time.perf_counter() - t0
        beliefs[init] = belief
        res.outputs.append(_trace(out / f"trace_{init}.csv", diag, diag.metric).name)
        res.outputs.append(write_flow(out / f"belief_{init}.csv", belief).name)
        res.converged &= diag.converged
        res.details[init] = {
            "iterations": diag.iterations,
            "final_phi": diag.final_phi,
            "converged": diag.converged,
            "trend_holds": trend_holds(diag.phi),
            "fixed_point_residual": diag.fixed_point_residual,
        }
        res.summary.append(
            f"init={init}: {diag.iterations} iterations, final phi {diag.final_phi:.6g}, "
            f"converged={diag.converged}, trend holds={res.details[init]['trend_holds']}"
        )
    rows = []
    for i, a in enumerate(cfg.inits):
        for b in cfg.inits[i + 1:]:
            d = flow_distance(beliefs[a], beliefs[b], metric)
            rows.append([a, b, d])
            res.summary.append(f"sup_k d1(belief_{a}, belief_{b}) = {d:.6g}")
    res.details["agreement"] = {f"{a}/{b}": d for a, b, d in rows}
    res.outputs.append(write_table(out / "agreement.csv", ["init_a", "init_b", "sup_d1"], rows).name)
    return res


def _equicontinuity(inst, M, P, energy: float, pairs: int, seed: int) -> tuple[np.ndarray, float]:
    """Rows ``(s, t, d1, bound)`` for sampled time pairs; bound ``4 sqrt(E) |t - s|^(1/2)``."""
    rng = np.random.default_rng(seed)
    T = inst.time.horizon
    st = rng.random((pairs, 2)) * T
    C = 4.0 * math.sqrt(energy)
    rows = np.empty((pairs, 4))
    for i, (s, t) in enumerate(st):
        d = d1_measures(interpolate_flow(inst, M, P, s), interpolate_flow(inst, M, P, t))
        rows[i] = (s, t, d, C * math.sqrt(abs(t - s)))
    return rows, C


def sweep_level(spec_name: str, level: DiscretizationLevel, domain, window, fp: FPConfig,
                oracle: OracleConfig, pairs: int, seed: int, out: Path) -> dict:
    """Solve one level, compare it with the oracle and write its tables.

    Runs in worker processes, so only plain data is returned.
    """
    spec = load_spec(spec_name)
    sol = solve_level(spec, level, domain, fp)
    inst, P, M, diag = sol.instance, sol.kernel, sol.flow, sol.diagnostics
    i = level.index
    E = energy_estimate(inst, M, P, spec.q)
    eq, C = _equicontinuity(inst, M, P, E, pairs, seed)
    p = f"level{i}_"
    r = {
        "index": i,
        "level": level,
        "n_states": inst.n_states,
        "energy": E,
        "C": C,
        "violations": int(np.sum(eq[:, 2] > eq[:, 3])),
        "fp_iterations": diag.iterations,
        "fp_converged": diag.converged,
        "final_phi": diag.final_phi,
        "fixed_point_residual": diag.fixed_point_residual,
        "bellman_residual": sol.bellman_residual,
        "tail_mass_bound": tail_mass_bound(spec, E, domain),
        "normalization_defect": inst.meta["normalization_defect"],
        "fp_seconds": sol.runtime_seconds,
        "sup_value_error": math.nan,
        "equilibrium_gap": math.nan,
        "oracle_deltas": [],
    }
    r["outputs"] = [
        write_states(out / f"{p}states.csv", inst.states).name,
        write_values(out / f"{p}values.csv", sol.values).name,
        write_flow(out / f"{p}flow.csv", M).name,
        write_kernel(out / f"{p}kernel.csv", P).name,
        _trace(out / f"{p}diagnostics.csv", diag, diag.metric).name,
        write_table(out / f"{p}equicontinuity.csv", ["s", "t", "d1", "bound"], eq.tolist()).name,
    ]
    t0 = time.perf_counter()
    try:
        ref = reference_for_solution(spec, inst, P, oracle)
    except ConvergenceError as err:
        r.update(oracle_error=str(err), oracle_deltas=list(err.context.get("deltas", [])),
                 oracle_seconds=time.perf_counter() - t0)
        return r
    r["oracle_seconds"] = time.perf_counter() - t0
    x = sol.coords[:, 0]
    lo, hi = window
    inside = (x >= lo - 1e-12) & (x <= hi + 1e-12)
    dt = inst.time.dt
    r["sup_value_error"] = max(
        float(np.max(np.abs(sol.values[k][inside] - ref.at(x[inside], k * dt)))) for k in range(level.n_t + 1)
    )
    r["equilibrium_gap"] = equilibrium_residual(spec, inst, P, ref)
    r["oracle_deltas"] = list(ref.deltas)
    r["oracle_resolution"] = {"dx": ref.config.dx, "dv": ref.config.dv, "n_steps": ref.config.n_steps}
    rx = ref.x[(ref.x >= lo - 1e-12) & (ref.x <= hi + 1e-12)]
    ref_rows = ([k, k * dt, xi, ui] for k in range(level.n_t + 1) for xi, ui in zip(rx, ref.at(rx, k * dt)))
    r["outputs"].append(write_table(out / f"{p}reference.csv", ["k", "t", "x", "u"], ref_rows).name)
    return r


def discretize_sweep(cfg: ExperimentConfig, out: Path, workers: int | None = None) -> RunResult:
    res = RunResult()
    levels = cfg.schedule.levels
    seeds = np.random.SeedSequence(cfg.seed).generate_state(len(levels))
    jobs = [(cfg.spec, lv, cfg.domain, cfg.window, cfg.fp, cfg.oracle, cfg.equicontinuity_pairs, int(s), out)
            for lv, s in zip(levels, seeds)]
    workers = max(1, min(workers or os.cpu_count() or 1, len(jobs)))
    if workers == 1:
        results = [sweep_level(*job) for job in jobs]
    else:
        # the finest level is the slowest, so submit it first
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(sweep_level, *job) for job in reversed(jobs)]
            results = sorted((f.result() for f in futures), key=lambda r: r["index"])
    rows = []
    for r in results:
        lv, i = r["level"], r["index"]
        deltas = r["oracle_deltas"]
        res.runtimes[f"level{i}"] = {"fictitious_play": r["fp_seconds"], "oracle": r["oracle_seconds"]}
        res.converged &= r["fp_converged"] and "oracle_error" not in r
        rows.append([
            i, lv.n_s, lv.n_t, lv.eps, r["n_states"], r["sup_value_error"], r["energy"], r["equilibrium_gap"],
            r["fp_iterations"], r["fp_converged"], r["final_phi"], r["fixed_point_residual"],
            r["bellman_residual"], r["tail_mass_bound"], r["normalization_defect"],
            deltas[-1] if deltas else math.nan, r["C"], r["violations"],
        ])
        res.outputs += r["outputs"]
        res.details[f"level{i}"] = {"oracle_deltas": deltas}
        if "oracle_resolution" in r:
            res.details[f"level{i}"]["oracle_final_resolution"] = r["oracle_resolution"]
        line = (f"level {i} (N_s={lv.n_s}, N_t={lv.n_t}, eps={lv.eps:.4g}): sup error "
                f"{r['sup_value_error']:.4g}, gap {r['equilibrium_gap']:.4g}, energy {r['energy']:.4g}, "
                f"FP {r['fp_iterations']} it (phi {r['final_phi']:.3g}, converged={r['fp_converged']}), "
                f"equicontinuity violations {r['violations']}")
        if "oracle_error" in r:
            res.details[f"level{i}"]["oracle_error"] = r["oracle_error"]
            line += f", oracle failed: {r['oracle_error']}"
        res.summary.append(line)
    res.outputs.insert(0, write_table(out / "sweep.csv", SWEEP_COLUMNS, rows).name)
    res.details["sweep"] = rows
    return res


def check_monotone(cfg: ExperimentConfig, out: Path) -> RunResult:
    if cfg.instance is not None:
        h, n = cfg.instance.cost.coupling_vector, cfg.instance.n_states
    else:
        from .io import _vector_fn

        h, _ = _vector_fn(cfg.coupling_doc, "coupling", cfg.n_states)
        n = cfg.n_states
    rep = check_monotonicity(h, n, cfg.samples, cfg.seed)
    res = RunResult()
    res.outputs.append(
        write_table(out / "monotone.csv", ["sample", "value"], ([i, v] for i, v in enumerate(rep.values))).name
    )
    res.details = {"min_value": rep.min_value, "monotone": rep.monotone}
    res.summary += [
        f"samples: {cfg.samples}",
        f"minimum of sum_x (h(M) - h(M'))(M - M'): {rep.min_value:.6g}",
        f"monotone on the sample: {rep.monotone}",
    ]
    if rep.violation is not None:
        a, b = rep.violation
        res.summary.append(f"violating pair: M={np.array2string(a, precision=6)} M'={np.array2string(b, precision=6)}")
    return res


WORKFLOWS = {
    "solve-finite": solve_finite,
    "fictitious-play-trace": fictitious_play_trace,
    "discretize-sweep": discretize_sweep,
    "check-monotone": check_monotone,
}
