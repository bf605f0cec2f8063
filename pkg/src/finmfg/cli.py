"""Command-line entry point: ``finmfg --config PATH --out DIR``.

Exit codes: 0 success, 2 invalid configuration, 3 solver non-convergence
(artifacts written so far are kept), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import bundled_names, validate
from .errors import ConvergenceError, NumericDomainError
from .experiments import WORKFLOWS
from .io import dump_yaml

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="finmfg",
        description="Finite mean field games: fictitious play, discretization sweeps and diagnostics.",
        epilog=f"bundled configs: {', '.join('bundled:' + n for n in bundled_names())}",
    )
    p.add_argument("--config", required=True, metavar="PATH", help="YAML config file or bundled:<name>")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides 'output' in the config)")
    p.add_argument("--seed", type=int, metavar="U64", help="RNG seed (overrides 'seed' in the config)")
    p.add_argument("--workers", type=int, metavar="K", help="worker processes for discretize-sweep (default: cores)")
    p.add_argument("--validate-only", action="store_true", help="check the config and exit without solving")
    return p


def _write_run_files(out: Path, cfg, result, status: str, code: int, started: datetime, wall: float, error=None):
    manifest = {
        "tool": "finmfg",
        "version": __version__,
        "status": status,
        "exit_code": code,
        "started_utc": started.isoformat(timespec="seconds"),
        "wall_clock_seconds": round(wall, 3),
        "environment": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
        "config_source": cfg.source,
        "config": cfg.resolved(),
        "runtimes_seconds": result.runtimes if result else {},
        "outputs": sorted(result.outputs) if result else [],
    }
    if result and cfg.mode == "discretize-sweep":
        manifest["levels"] = {k: v for k, v in result.details.items() if k.startswith("level")}
    if error is not None:
        manifest["error"] = error
    dump_yaml(manifest, out / "manifest.yaml")
    lines = [f"finmfg {__version__}  mode: {cfg.mode}  status: {status}", ""]
    if result:
        lines += result.summary
    if error is not None:
        lines.append(f"error: {error}")
    lines += ["", f"wall clock: {wall:.2f} s"]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    report = validate(args.config, seed_override=args.seed)
    for f in report.findings:
        print(f"finding: {f}", file=sys.stderr)
    if not report.ok:
        for e in report.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = report.config
    if args.workers is not None and args.workers < 1:
        print("config error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.validate_only:
        print(f"config ok: mode {cfg.mode}, {len(report.findings)} finding(s)")
        return EXIT_OK
    out_ref = args.out or cfg.output
    if not out_ref:
        print("config error: output: no output directory (use --out or 'output')", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out_ref)
    cfg.output = str(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    workflow = WORKFLOWS[cfg.mode]
    result, error = None, None
    try:
        if cfg.mode == "discretize-sweep":
            result = workflow(cfg, out, workers=args.workers)
        else:
            result = workflow(cfg, out)
        code = EXIT_OK if result.converged else EXIT_NONCONVERGED
    except (ConvergenceError, NumericDomainError) as err:
        code, error = EXIT_NONCONVERGED, f"{type(err).__name__}: {err}"
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    status = {EXIT_OK: "ok", EXIT_NONCONVERGED: "not converged"}[code]
    try:
        _write_run_files(out, cfg, result, status, code, started, time.perf_counter() - t0, error)
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    print((out / "summary.txt").read_text(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
