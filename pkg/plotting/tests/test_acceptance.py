"""Secondary acceptance: render all three figure kinds from the desk-scale
benchmark outputs (criterion-5 configuration) through the command-line
interfaces, requiring exit status 0 and nonempty image files."""

import shutil
import subprocess
import sys

import pytest


def run_cmd(args):
    return subprocess.run(args, capture_output=True, text=True)


@pytest.fixture(scope="module")
def desk_outputs(tmp_path_factory):
    """Desk-scale benchmark outputs produced through the primary CLI."""
    bench = shutil.which("dlra-bench")
    if bench is None:
        pytest.skip("dlra-bench not installed")
    root = tmp_path_factory.mktemp("desk")
    dirs = {}
    for integrator in ("parallel", "bug"):
        out_dir = root / integrator
        proc = run_cmd([
            bench, "run", "--problem", "planesource", "--integrator", integrator,
            "--nx", "200", "--nmoments", "100", "--cfl", "0.99",
            "--theta-bar", "1e-2", "--theta-mode", "relative", "--c-reject", "1",
            "--t-end", "1", "--snapshots", "1", "--output-dir", str(out_dir),
        ])
        assert proc.returncode == 0, proc.stderr
        dirs[integrator] = out_dir
    return dirs


def _script(name):
    path = shutil.which(name)
    if path is None:
        pytest.skip(f"{name} not installed")
    return path


def test_criterion_11_flux_overlay(desk_outputs, tmp_path):
    out = tmp_path / "flux_overlay.png"
    proc = run_cmd([
        _script("dlra-plot-flux"),
        str(desk_outputs["parallel"] / "flux_t1.csv"),
        str(desk_outputs["bug"] / "flux_t1.csv"),
        "--labels", "parallel,bug", "-o", str(out),
    ])
    ok = proc.returncode == 0 and out.exists() and out.stat().st_size > 0
    print(f"\n[{'PASS' if ok else 'FAIL'}] acceptance criterion 11a (flux overlay): "
          f"exit {proc.returncode}, {out.stat().st_size if out.exists() else 0} bytes")
    assert ok, proc.stderr


def test_criterion_11_rank_evolution(desk_outputs, tmp_path):
    out = tmp_path / "rank_evolution.png"
    proc = run_cmd([
        _script("dlra-plot-rank"),
        str(desk_outputs["parallel"] / "diagnostics.csv"),
        str(desk_outputs["bug"] / "diagnostics.csv"),
        "--labels", "parallel,bug", "-o", str(out),
    ])
    ok = proc.returncode == 0 and out.exists() and out.stat().st_size > 0
    print(f"\n[{'PASS' if ok else 'FAIL'}] acceptance criterion 11b (rank evolution): "
          f"exit {proc.returncode}, {out.stat().st_size if out.exists() else 0} bytes")
    assert ok, proc.stderr


def test_criterion_11_eta_bound(desk_outputs, tmp_path):
    out = tmp_path / "eta_bound.png"
    proc = run_cmd([
        _script("dlra-plot-eta"),
        str(desk_outputs["parallel"] / "diagnostics.csv"),
        "--labels", "parallel", "-o", str(out),
    ])
    ok = proc.returncode == 0 and out.exists() and out.stat().st_size > 0
    print(f"\n[{'PASS' if ok else 'FAIL'}] acceptance criterion 11c (eta and bound): "
          f"exit {proc.returncode}, {out.stat().st_size if out.exists() else 0} bytes")
    assert ok, proc.stderr
