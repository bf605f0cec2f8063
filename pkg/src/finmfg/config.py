"""Experiment configuration: parsing, defaults and static validation.

A configuration is one YAML mapping. Unknown keys are errors, because a
mistyped option would otherwise silently fall back to its default.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .core import FiniteMFGInstance
from .discretizer import DiscretizationLevel, FPConfig, Schedule, default_eps
from .errors import ConfigError, DomainError
from .hjb import OracleConfig
from .io import instance_from_dict, load_yaml, parse_yaml

MODES = ("solve-finite", "fictitious-play-trace", "discretize-sweep", "check-monotone")
FINITE_INITS = ("uniform", "identity", "static")
BUNDLED_SPECS = ("quadratic-congestion",)
BUNDLED_PREFIX = "bundled:"

_COMMON = {"mode", "seed", "output"}
_MODE_KEYS = {
    "solve-finite": {"instance", "fp"},
    "fictitious-play-trace": {"instance", "fp", "inits"},
    "discretize-sweep": {"spec", "domain", "window", "schedule", "fp", "oracle", "equicontinuity"},
    "check-monotone": {"instance", "coupling", "n_states", "samples"},
}


def bundled_path(name: str) -> Path:
    """Path of a file shipped in ``finmfg/data`` (``.yaml`` may be omitted)."""
    base = resources.files("finmfg") / "data"
    fname = name if name.endswith(".yaml") else f"{name.replace('-', '_')}.yaml"
    path = Path(str(base / fname))
    if not path.is_file():
        raise ConfigError("config", f"no bundled file named {name!r}")
    return path


def bundled_names(configs_only: bool = True) -> list[str]:
    """Names of the bundled YAML files; by default only experiment configs."""
    base = Path(str(resources.files("finmfg") / "data"))
    names = []
    for p in sorted(base.glob("*.yaml")):
        if not configs_only or "mode" in load_yaml(p):
            names.append(p.stem.replace("_", "-"))
    return names


@dataclass
class FiniteFPSettings:
    max_iter: int = 2000
    tol: float = 1e-4
    exploit_every: int = 1
    init: str = "uniform"


@dataclass
class ExperimentConfig:
    """Validated configuration with every default filled in."""

    mode: str
    seed: int | None = None
    output: str | None = None
    instance_ref: Any = None
    instance: FiniteMFGInstance | None = None
    instance_doc: dict | None = None
    fp: Any = None
    inits: list[str] = field(default_factory=list)
    spec: str | None = None
    domain: tuple[float, float] = (-1.0, 1.0)
    window: tuple[float, float] = (-0.5, 0.5)
    schedule: Schedule | None = None
    schedule_doc: dict | None = None
    oracle: OracleConfig | None = None
    equicontinuity_pairs: int = 200
    coupling_doc: dict | None = None
    n_states: int | None = None
    samples: int = 1000
    source: str = "<inline>"

    def resolved(self) -> dict:
        """Plain document echoing every setting in effect."""
        out: dict[str, Any] = {"mode": self.mode, "seed": self.seed, "output": self.output}
        if self.mode in ("solve-finite", "fictitious-play-trace"):
            out["instance"] = self.instance_doc
            out["fp"] = asdict(self.fp)
            if self.mode == "fictitious-play-trace":
                out["inits"] = list(self.inits)
        elif self.mode == "discretize-sweep":
            out["spec"] = self.spec
            out["domain"] = list(self.domain)
            out["window"] = list(self.window)
            out["schedule"] = self.schedule_doc
            out["fp"] = asdict(self.fp)
            o = asdict(self.oracle)
            o["window"] = list(o["window"])
            out["oracle"] = o
            out["equicontinuity"] = {"pairs": self.equicontinuity_pairs}
        else:
            if self.instance_doc is not None:
                out["instance"] = self.instance_doc
            else:
                out["coupling"] = self.coupling_doc
                out["n_states"] = self.n_states
            out["samples"] = self.samples
        return out

    @property
    def uses_sampling(self) -> bool:
        return self.mode in ("discretize-sweep", "check-monotone")


@dataclass
class ValidationReport:
    """``errors`` block a run; ``findings`` are warnings about the setup."""

    config: ExperimentConfig | None
    errors: list[str] = field(default_factory=list)
    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _keys(doc, allowed, field_name, required=()):
    if not isinstance(doc, dict):
        raise ConfigError(field_name, "expected a mapping")
    for k in doc:
        if k not in allowed:
            raise ConfigError(f"{field_name}.{k}" if field_name else str(k), "unknown key")
    for k in required:
        if k not in doc:
            raise ConfigError(f"{field_name}.{k}" if field_name else k, "missing required key")


def _int(v, name, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(name, f"must be at least {lo}, got {v}")
    return v


def _pos(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
        raise ConfigError(name, f"expected a positive number, got {v!r}")
    return float(v)


def _interval(v, name):
    if not (isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(a, (int, float)) for a in v)):
        raise ConfigError(name, "expected [lo, hi]")
    lo, hi = float(v[0]), float(v[1])
    if not lo < hi:
        raise ConfigError(name, "needs lo < hi")
    return lo, hi


def _finite_fp(doc) -> FiniteFPSettings:
    doc = {} if doc is None else doc
    _keys(doc, {"max_iter", "tol", "exploit_every", "init"}, "fp")
    d = FiniteFPSettings()
    s = FiniteFPSettings(
        max_iter=_int(doc.get("max_iter", d.max_iter), "fp.max_iter", 1),
        tol=_pos(doc.get("tol", d.tol), "fp.tol"),
        exploit_every=_int(doc.get("exploit_every", d.exploit_every), "fp.exploit_every", 1),
        init=doc.get("init", d.init),
    )
    if s.init not in FINITE_INITS:
        raise ConfigError("fp.init", f"must be one of {', '.join(FINITE_INITS)}")
    return s


def _level_fp(doc) -> FPConfig:
    doc = {} if doc is None else doc
    _keys(doc, {"max_iter", "tol", "exploit_every", "init"}, "fp")
    d = FPConfig(max_iter=5000, tol=1e-3)
    init = doc.get("init", d.init)
    if init not in ("identity", "uniform"):
        raise ConfigError("fp.init", "must be identity or uniform")
    return FPConfig(
        max_iter=_int(doc.get("max_iter", d.max_iter), "fp.max_iter", 1),
        tol=_pos(doc.get("tol", d.tol), "fp.tol"),
        exploit_every=_int(doc.get("exploit_every", d.exploit_every), "fp.exploit_every", 1),
        init=init,
    )


def _instance(ref, base_dir: Path) -> tuple[FiniteMFGInstance, dict]:
    if isinstance(ref, str):
        if ref.startswith(BUNDLED_PREFIX):
            path = bundled_path(ref[len(BUNDLED_PREFIX):])
        else:
            path = Path(ref)
            if not path.is_absolute():
                path = base_dir / path
        doc = load_yaml(path)
        return instance_from_dict(doc, "instance")
    if isinstance(ref, dict):
        return instance_from_dict(ref, "instance")
    raise ConfigError("instance", "expected a mapping, a file path or 'bundled:<name>'")


def _schedule(doc, horizon: float) -> tuple[Schedule, dict]:
    if doc is None:
        raise ConfigError("schedule", "missing required key")
    _keys(doc, {"levels", "rule", "eps_constant"}, "schedule")
    c = _pos(doc.get("eps_constant", 0.1), "schedule.eps_constant")
    if ("levels" in doc) == ("rule" in doc):
        raise ConfigError("schedule", "give exactly one of 'levels' or 'rule'")
    pairs: list[tuple[int, int, float | None]] = []
    if "levels" in doc:
        raw = doc["levels"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("schedule.levels", "expected a non-empty list")
        for i, item in enumerate(raw):
            name = f"schedule.levels[{i}]"
            if isinstance(item, dict):
                _keys(item, {"n_s", "n_t", "eps"}, name, ("n_s", "n_t"))
                eps = item.get("eps")
                pairs.append((_int(item["n_s"], f"{name}.n_s", 1), _int(item["n_t"], f"{name}.n_t", 1),
                              None if eps is None else _pos(eps, f"{name}.eps")))
            elif isinstance(item, list) and len(item) == 2:
                pairs.append((_int(item[0], f"{name}[0]", 1), _int(item[1], f"{name}[1]", 1), None))
            else:
                raise ConfigError(name, "expected [n_s, n_t] or {n_s, n_t, eps}")
    else:
        rule = doc["rule"]
        _keys(rule, {"n_s", "n_t", "n_s_factor", "n_t_factor", "count"}, "schedule.rule",
              ("n_s", "n_t", "count"))
        n_s = _int(rule["n_s"], "schedule.rule.n_s", 1)
        n_t = _int(rule["n_t"], "schedule.rule.n_t", 1)
        count = _int(rule["count"], "schedule.rule.count", 1)
        fs = _pos(rule.get("n_s_factor", 2), "schedule.rule.n_s_factor")
        ft = _pos(rule.get("n_t_factor", 1.5), "schedule.rule.n_t_factor")
        pairs = [(int(round(n_s * fs**i)), int(round(n_t * ft**i)), None) for i in range(count)]
    levels = []
    for i, (s, t, eps) in enumerate(pairs):
        if eps is None:
            if s < 2:
                raise ConfigError(f"schedule.levels[{i}]", "the default entropy rule needs n_s >= 2")
            eps = default_eps(s, t, c)
        levels.append(DiscretizationLevel(s, t, eps, i))
    canon = {"eps_constant": c, "levels": [{"n_s": lv.n_s, "n_t": lv.n_t, "eps": lv.eps} for lv in levels]}
    return Schedule(tuple(levels)), canon


def _oracle(doc, window) -> OracleConfig:
    doc = {} if doc is None else doc
    _keys(doc, {"dx", "n_steps", "dv", "v_radius", "tol", "max_refinements"}, "oracle")
    d = OracleConfig()
    return OracleConfig(
        dx=_pos(doc.get("dx", d.dx), "oracle.dx"),
        n_steps=_int(doc.get("n_steps", d.n_steps), "oracle.n_steps", 1),
        dv=_pos(doc.get("dv", d.dv), "oracle.dv"),
        v_radius=_pos(doc.get("v_radius", d.v_radius), "oracle.v_radius"),
        tol=_pos(doc.get("tol", d.tol), "oracle.tol"),
        max_refinements=_int(doc.get("max_refinements", d.max_refinements), "oracle.max_refinements", 1),
        window=window,
    )


def load_spec(name: str):
    from .bundled import quadratic_spec

    if name.startswith(BUNDLED_PREFIX):
        name = name[len(BUNDLED_PREFIX):]
    if name == "quadratic-congestion":
        return quadratic_spec()
    raise ConfigError("spec", f"unknown spec {name!r}; available: {', '.join(BUNDLED_SPECS)}")


def parse_config(doc: dict, source: str = "<inline>", base_dir: Path | None = None) -> ExperimentConfig:
    """Turn a document into an :class:`ExperimentConfig`; raises :class:`ConfigError`."""
    base_dir = base_dir or Path.cwd()
    if "mode" not in doc:
        raise ConfigError("mode", "missing required key")
    mode = doc["mode"]
    if mode not in MODES:
        raise ConfigError("mode", f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    _keys(doc, _COMMON | _MODE_KEYS[mode], "")
    seed = doc.get("seed")
    if seed is not None:
        seed = _int(seed, "seed", 0)
    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output", "expected a directory path")
    cfg = ExperimentConfig(mode=mode, seed=seed, output=output, source=source)
    if mode in ("solve-finite", "fictitious-play-trace"):
        if "instance" not in doc:
            raise ConfigError("instance", "missing required key")
        cfg.instance_ref = doc["instance"]
        cfg.instance, cfg.instance_doc = _instance(doc["instance"], base_dir)
        cfg.fp = _finite_fp(doc.get("fp"))
        if mode == "fictitious-play-trace":
            inits = doc.get("inits", ["uniform", "identity"])
            if not isinstance(inits, list) or not inits:
                raise ConfigError("inits", "expected a non-empty list")
            for i, name in enumerate(inits):
                if name not in FINITE_INITS:
                    raise ConfigError(f"inits[{i}]", f"must be one of {', '.join(FINITE_INITS)}")
            if len(set(inits)) != len(inits):
                raise ConfigError("inits", "initializations must be distinct")
            cfg.inits = list(inits)
    elif mode == "discretize-sweep":
        if "spec" not in doc:
            raise ConfigError("spec", "missing required key")
        if not isinstance(doc["spec"], str):
            raise ConfigError("spec", "expected a bundled spec name")
        spec = load_spec(doc["spec"])
        cfg.spec = doc["spec"][len(BUNDLED_PREFIX):] if doc["spec"].startswith(BUNDLED_PREFIX) else doc["spec"]
        cfg.domain = _interval(doc.get("domain", [-1.0, 1.0]), "domain")
        cfg.window = _interval(doc.get("window", [-0.5, 0.5]), "window")
        if cfg.window[0] < cfg.domain[0] or cfg.window[1] > cfg.domain[1]:
            raise ConfigError("window", "comparison window must lie inside the domain")
        s_lo, s_hi = spec.support
        if s_lo[0] < cfg.domain[0] or s_hi[0] > cfg.domain[1]:
            raise ConfigError("domain", "the support of m0 is not inside the domain box")
        cfg.schedule, cfg.schedule_doc = _schedule(doc.get("schedule"), spec.horizon)
        cfg.fp = _level_fp(doc.get("fp"))
        cfg.oracle = _oracle(doc.get("oracle"), cfg.window)
        eq = doc.get("equicontinuity") or {}
        _keys(eq, {"pairs"}, "equicontinuity")
        cfg.equicontinuity_pairs = _int(eq.get("pairs", 200), "equicontinuity.pairs", 1)
    else:
        has_inst, has_coup = "instance" in doc, "coupling" in doc
        if has_inst == has_coup:
            raise ConfigError("coupling", "give exactly one of 'instance' or 'coupling'")
        if has_inst:
            cfg.instance_ref = doc["instance"]
            cfg.instance, cfg.instance_doc = _instance(doc["instance"], base_dir)
            if not cfg.instance.cost.separable:
                raise ConfigError("instance", "monotonicity checks need a separable cost model")
            cfg.n_states = cfg.instance.n_states
        else:
            cfg.coupling_doc = doc["coupling"]
            cfg.n_states = _int(doc.get("n_states"), "n_states", 1)
            from .io import _vector_fn

            _, cfg.coupling_doc = _vector_fn(doc["coupling"], "coupling", cfg.n_states)
        cfg.samples = _int(doc.get("samples", 1000), "samples", 1)
    return cfg


def validate(doc_or_path, seed_override: int | None = None) -> ValidationReport:
    """Static validation; never runs a solver."""
    try:
        if isinstance(doc_or_path, dict):
            doc, source, base = doc_or_path, "<inline>", Path.cwd()
        else:
            path = resolve_config_path(str(doc_or_path))
            doc, source, base = load_yaml(path), str(path), path.parent
        cfg = parse_config(doc, source, base)
    except (ConfigError, DomainError) as err:
        return ValidationReport(None, [str(err)])
    report = ValidationReport(cfg)
    if seed_override is not None:
        cfg.seed = seed_override
    if cfg.uses_sampling and cfg.seed is None:
        report.errors.append("seed: this mode samples random inputs, so a seed is required")
    if cfg.mode == "discretize-sweep":
        report.findings.extend(cfg.schedule.findings())
        spec = load_spec(cfg.spec)
        try:
            spec.check_growth()
            spec.check_data_bound(cfg.domain)
        except ValueError as err:
            report.errors.append(f"spec: {err}")
    return report


def resolve_config_path(ref: str) -> Path:
    if ref.startswith(BUNDLED_PREFIX):
        return bundled_path(ref[len(BUNDLED_PREFIX):])
    return Path(ref)


def parse_text(text: str) -> ExperimentConfig:
    """Convenience for tests: parse a YAML string."""
    return parse_config(parse_yaml(text))
