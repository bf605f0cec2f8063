import subprocess
import sys

import numpy as np
import pytest
import yaml

from finmfg.cli import EXIT_CONFIG, EXIT_IO, EXIT_NONCONVERGED, EXIT_OK, main
from finmfg.experiments import SWEEP_COLUMNS, TRACE_COLUMNS
from finmfg.io import read_flow, read_kernel, read_table

MANIFEST_KEYS = {
    "tool", "version", "status", "exit_code", "started_utc", "wall_clock_seconds", "environment",
    "config_source", "config", "runtimes_seconds", "outputs",
}


def _write(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def test_solve_finite_bundled(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["--config", "bundled:solve-finite", "--out", str(out)]) == EXIT_OK
    assert "status: ok" in capsys.readouterr().out
    manifest = yaml.safe_load((out / "manifest.yaml").read_text())
    assert MANIFEST_KEYS <= set(manifest)
    assert manifest["config"]["fp"]["tol"] == 1e-4 and manifest["exit_code"] == 0
    for name in manifest["outputs"]:
        assert (out / name).is_file()
    header, rows = read_table(out / "diagnostics.csv")
    assert header == TRACE_COLUMNS and float(rows[-1][1]) <= 1e-4
    M = read_flow(out / "flow.csv")
    P = read_kernel(out / "kernel.csv")
    np.testing.assert_allclose(M.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(P.sum(axis=2), 1, atol=1e-12)


def test_non_convergence_keeps_artifacts(tmp_path):
    cfg = _write(tmp_path, {"mode": "solve-finite", "instance": "bundled:crowd-aversion", "fp": {"max_iter": 5}})
    out = tmp_path / "run"
    assert main(["--config", cfg, "--out", str(out)]) == EXIT_NONCONVERGED
    manifest = yaml.safe_load((out / "manifest.yaml").read_text())
    assert manifest["status"] == "not converged" and manifest["exit_code"] == EXIT_NONCONVERGED
    assert (out / "flow.csv").is_file() and (out / "summary.txt").is_file()


def test_invalid_config_writes_nothing(tmp_path, capsys):
    doc = {"mode": "solve-finite", "instance": {
        "states": {"count": 2}, "time": {"N": -3}, "initial": [1, 0],
        "cost": {"kind": "entropy_separable", "parameters": {"kinetic": {"kind": "matrix", "values": [[0, 1], [1, 0]]}}},
    }}
    out = tmp_path / "run"
    assert main(["--config", _write(tmp_path, doc), "--out", str(out)]) == EXIT_CONFIG
    assert "instance.time.N" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_key_and_syntax_errors(tmp_path, capsys):
    bad = _write(tmp_path, {"mode": "solve-finite", "instance": "bundled:crowd-aversion", "fp": {"maxiter": 3}})
    assert main(["--config", bad, "--out", str(tmp_path / "a")]) == EXIT_CONFIG
    assert "fp.maxiter" in capsys.readouterr().err
    p = tmp_path / "broken.yaml"
    p.write_text("mode: solve-finite\ninstance: [\n")
    assert main(["--config", str(p), "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    assert "line" in capsys.readouterr().err


def test_missing_output_and_bad_workers(tmp_path):
    assert main(["--config", "bundled:check-monotone"]) == EXIT_CONFIG
    assert main(["--config", "bundled:check-monotone", "--out", str(tmp_path), "--workers", "0"]) == EXIT_CONFIG


def test_seedless_sampling_mode_is_config_error(tmp_path):
    cfg = _write(tmp_path, {"mode": "check-monotone", "instance": "bundled:crowd-aversion", "samples": 10})
    assert main(["--config", cfg, "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert main(["--config", cfg, "--out", str(tmp_path / "r"), "--seed", "3"]) == EXIT_OK


def test_validate_only(tmp_path, capsys):
    assert main(["--config", "bundled:discretize-sweep", "--validate-only"]) == EXIT_OK
    assert "config ok: mode discretize-sweep, 0 finding(s)" in capsys.readouterr().out


def test_unwritable_output_is_io_error(tmp_path):
    assert main(["--config", "bundled:check-monotone", "--out", "/proc/finmfg-test/out"]) == EXIT_IO


def test_check_monotone_output(tmp_path):
    out = tmp_path / "m"
    assert main(["--config", "bundled:check-monotone", "--out", str(out)]) == EXIT_OK
    header, rows = read_table(out / "monotone.csv")
    assert header == ["sample", "value"] and len(rows) == 1000
    assert min(float(r[1]) for r in rows) >= 0


def test_fp_trace_small(tmp_path):
    cfg = _write(tmp_path, {
        "mode": "fictitious-play-trace", "instance": "bundled:crowd-aversion",
        "inits": ["uniform", "static"], "fp": {"max_iter": 3000, "tol": 1e-4},
    })
    out = tmp_path / "t"
    # from the static belief phi decays like 2.3/n, so 3000 iterations stop short
    assert main(["--config", cfg, "--out", str(out)]) == EXIT_NONCONVERGED
    header, rows = read_table(out / "agreement.csv")
    assert header == ["init_a", "init_b", "sup_d1"] and rows[0][:2] == ["uniform", "static"]
    assert (out / "trace_uniform.csv").read_text().startswith("# flow_delta_d1 metric")


def test_small_sweep_tables(tmp_path):
    cfg = _write(tmp_path, {
        "mode": "discretize-sweep", "seed": 1, "spec": "quadratic-congestion",
        "schedule": {"levels": [[10, 4], [20, 6]]},
        "fp": {"max_iter": 300, "tol": 1e-2},
        "oracle": {"dx": 0.01, "n_steps": 8, "tol": 0.05, "max_refinements": 3},
        "equicontinuity": {"pairs": 20},
    })
    out = tmp_path / "s"
    code = main(["--config", cfg, "--out", str(out), "--workers", "1"])
    assert code == EXIT_OK
    header, rows = read_table(out / "sweep.csv")
    assert header == SWEEP_COLUMNS and len(rows) == 2
    manifest = yaml.safe_load((out / "manifest.yaml").read_text())
    assert set(manifest["levels"]) == {"level0", "level1"}
    assert manifest["levels"]["level1"]["oracle_deltas"][-1] < 0.05
    for i in range(2):
        h, eq = read_table(out / f"level{i}_equicontinuity.csv")
        assert h == ["s", "t", "d1", "bound"] and len(eq) == 20
        assert read_table(out / f"level{i}_reference.csv")[0] == ["k", "t", "x", "u"]


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "finmfg", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "bundled:solve-finite" in res.stdout


def test_config_is_required():
    with pytest.raises(SystemExit):
        main([])
