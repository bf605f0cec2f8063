"""CSV tables and YAML instance documents.

Tables are written k-major then state index, one row per entry, floats with
17 significant digits so a round trip is exact.
"""

from __future__ import annotations

import csv
import importlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .core import EntropySeparableCost, FiniteMFGInstance, StateSet, TimeGrid
from .errors import ConfigError


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_flow(path: Path, M: np.ndarray) -> Path:
    return write_table(path, ["k", "x", "value"], ((k, x, M[k, x]) for k in range(M.shape[0]) for x in range(M.shape[1])))


def write_values(path: Path, U: np.ndarray) -> Path:
    return write_flow(path, U)


def write_kernel(path: Path, P: np.ndarray) -> Path:
    N, S, _ = P.shape
    rows = ((k, x, y, P[k, x, y]) for k in range(N) for x in range(S) for y in range(S))
    return write_table(path, ["k", "x", "y", "value"], rows)


def read_flow(path: Path) -> np.ndarray:
    _, rows = read_table(path)
    k = np.array([int(r[0]) for r in rows])
    x = np.array([int(r[1]) for r in rows])
    out = np.zeros((k.max() + 1, x.max() + 1))
    out[k, x] = [float(r[2]) for r in rows]
    return out


def read_kernel(path: Path) -> np.ndarray:
    _, rows = read_table(path)
    idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
    out = np.zeros((idx[:, 0].max() + 1, idx[:, 1].max() + 1, idx[:, 2].max() + 1))
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = [float(r[3]) for r in rows]
    return out


def write_states(path: Path, states: StateSet) -> Path:
    if states.embedded:
        header = ["x", "label"] + [f"coord_{j}" for j in range(states.dim)]
        rows = ([i, lab, *states.coords[i]] for i, lab in enumerate(states.labels))
    else:
        header = ["x", "label"]
        rows = ([i, lab] for i, lab in enumerate(states.labels))
    return write_table(path, header, rows)


# ---- instance documents -------------------------------------------------


def _matrix(value, field: str, shape=None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as err:
        raise ConfigError(field, f"not a numeric array ({err})") from None
    if shape is not None and arr.shape != shape:
        raise ConfigError(field, f"expected shape {shape}, got {arr.shape}")
    return arr


def _check_keys(doc: dict, allowed: set[str], field: str, required: set[str] = frozenset()) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(field, "expected a mapping")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{field}.{key}" if field else str(key), "unknown key")
    for key in required:
        if key not in doc:
            raise ConfigError(f"{field}.{key}" if field else key, "missing required key")


def _states(doc, field: str) -> StateSet:
    _check_keys(doc, {"labels", "coords", "count"}, field)
    coords = doc.get("coords")
    labels = doc.get("labels")
    if coords is not None:
        c = _matrix(coords, f"{field}.coords")
        try:
            return StateSet.from_points(c, labels)
        except ValueError as err:
            raise ConfigError(field, str(err)) from None
    if labels is not None:
        try:
            return StateSet(tuple(labels))
        except ValueError as err:
            raise ConfigError(field, str(err)) from None
    count = doc.get("count")
    if not isinstance(count, int) or count < 1:
        raise ConfigError(f"{field}.count", "state count must be a positive integer")
    return StateSet.labelled(count)


def _vector_fn(doc, field: str, n: int):
    """Coupling or terminal term from its document; returns ``(fn, canonical doc)``."""
    if doc is None:
        doc = {"kind": "zero"}
    _check_keys(doc, {"kind", "weight", "matrix", "values"}, field, {"kind"})
    kind = doc["kind"]
    if kind == "zero":
        return (lambda M: np.zeros(n)), {"kind": "zero"}
    if kind == "density":
        w = float(doc.get("weight", 1.0))
        return (lambda M, w=w: w * np.asarray(M, dtype=float)), {"kind": "density", "weight": w}
    if kind == "linear":
        W = _matrix(doc.get("matrix"), f"{field}.matrix", (n, n))
        return (lambda M, W=W: W @ M), {"kind": "linear", "matrix": W.tolist()}
    if kind == "vector":
        v = _matrix(doc.get("values"), f"{field}.values", (n,))
        return (lambda M, v=v: v.copy()), {"kind": "vector", "values": v.tolist()}
    raise ConfigError(f"{field}.kind", f"unknown kind {kind!r} (zero, density, linear, vector)")


def _kinetic(doc, field: str, states: StateSet) -> tuple[np.ndarray, dict]:
    _check_keys(doc, {"kind", "power", "scale", "values"}, field, {"kind"})
    n = states.size
    if doc["kind"] == "distance":
        if not states.embedded:
            raise ConfigError(field, "distance kinetic cost needs state coordinates")
        power = float(doc.get("power", 1.0))
        scale = float(doc.get("scale", 1.0))
        c = states.coords
        D = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
        return scale * D**power, {"kind": "distance", "power": power, "scale": scale}
    if doc["kind"] == "matrix":
        K = _matrix(doc.get("values"), f"{field}.values", (n, n))
        return K, {"kind": "matrix", "values": K.tolist()}
    raise ConfigError(f"{field}.kind", f"unknown kind {doc['kind']!r} (distance, matrix)")


def instance_from_dict(doc: dict, field: str = "instance") -> tuple[FiniteMFGInstance, dict]:
    """Build an instance from a document; also returns the canonical document."""
    _check_keys(doc, {"states", "time", "initial", "cost", "name"}, field, {"states", "time", "initial", "cost"})
    states = _states(doc["states"], f"{field}.states")
    n = states.size
    t = doc["time"]
    _check_keys(t, {"N", "T"}, f"{field}.time", {"N"})
    N = t["N"]
    if not isinstance(N, int) or N < 1:
        raise ConfigError(f"{field}.time.N", f"must be a positive integer, got {N!r}")
    T = t.get("T")
    if T is not None and not (isinstance(T, (int, float)) and T > 0):
        raise ConfigError(f"{field}.time.T", f"must be positive, got {T!r}")
    m0 = _matrix(doc["initial"], f"{field}.initial", (n,))
    cdoc = doc["cost"]
    _check_keys(cdoc, {"kind", "parameters"}, f"{field}.cost", {"kind"})
    params = cdoc.get("parameters") or {}
    pfield = f"{field}.cost.parameters"
    if cdoc["kind"] == "entropy_separable":
        _check_keys(params, {"entropy", "kinetic", "coupling", "terminal"}, pfield, {"kinetic"})
        eps = float(params.get("entropy", 0.0))
        if eps < 0:
            raise ConfigError(f"{pfield}.entropy", "must be nonnegative")
        K, kdoc = _kinetic(params["kinetic"], f"{pfield}.kinetic", states)
        f, fdoc = _vector_fn(params.get("coupling"), f"{pfield}.coupling", n)
        g, gdoc = _vector_fn(params.get("terminal"), f"{pfield}.terminal", n)
        try:
            cost = EntropySeparableCost(K, eps, f, g)
        except ValueError as err:
            raise ConfigError(pfield, str(err)) from None
        canon_cost = {
            "kind": "entropy_separable",
            "parameters": {"entropy": eps, "kinetic": kdoc, "coupling": fdoc, "terminal": gdoc},
        }
    elif cdoc["kind"] == "custom":
        _check_keys(params, {"factory", "args"}, pfield, {"factory"})
        cost = _custom_cost(params["factory"], params.get("args") or {}, states, f"{pfield}.factory")
        canon_cost = {"kind": "custom", "parameters": {"factory": params["factory"], "args": params.get("args") or {}}}
    else:
        raise ConfigError(f"{field}.cost.kind", f"unknown kind {cdoc['kind']!r} (entropy_separable, custom)")
    try:
        inst = FiniteMFGInstance(states, TimeGrid(N, T), cost, m0, {"name": doc.get("name", "instance")})
    except ValueError as err:
        raise ConfigError(field, str(err)) from None
    canon = {
        "name": doc.get("name", "instance"),
        "states": _states_doc(states),
        "time": {"N": N, "T": inst.time.horizon},
        "initial": inst.initial.tolist(),
        "cost": canon_cost,
    }
    return inst, canon


def _states_doc(states: StateSet) -> dict:
    out = {"labels": list(states.labels)}
    if states.embedded:
        out["coords"] = states.coords.tolist()
    return out


def _custom_cost(factory: str, args: dict, states: StateSet, field: str):
    """``module:callable`` returning a cost model; called as ``callable(states, **args)``."""
    mod, _, name = str(factory).partition(":")
    if not mod or not name:
        raise ConfigError(field, "factory must look like 'package.module:function'")
    try:
        fn = getattr(importlib.import_module(mod), name)
    except (ImportError, AttributeError) as err:
        raise ConfigError(field, f"cannot load {factory!r}: {err}") from None
    return fn(states, **args)


def load_yaml(path: Path) -> dict:
    """Parse a YAML document; syntax errors become :class:`ConfigError` with the line."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError("config", f"cannot read {path}: {err}") from None
    return parse_yaml(text, str(path))


def parse_yaml(text: str, source: str = "<string>") -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(source, f"YAML syntax error at {where}: {getattr(err, 'problem', err)}") from None
    if not isinstance(doc, dict):
        raise ConfigError(source, "top level must be a mapping")
    return doc


def dump_yaml(doc, path: Path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(_plain(doc), sort_keys=False, default_flow_style=None))
    return path


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def instance_to_dict(inst: FiniteMFGInstance, cost_doc: dict) -> dict:
    """Document for an instance whose cost is described by ``cost_doc``."""
    return {
        "name": inst.meta.get("name", "instance"),
        "states": _states_doc(inst.states),
        "time": {"N": inst.n_steps, "T": inst.time.horizon},
        "initial": inst.initial.tolist(),
        "cost": cost_doc,
    }
