import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from conftest import resonant_omega
from ringfloquet.cli import SUBCOMMANDS, execute, main, rerun
from ringfloquet.io import SCHEMAS, compare_to_golden, sha256_file

GOLDEN = Path(__file__).parent / "golden"

SMALL = """
[model]
omega = 1.0180339887498949
g = 0.02
N_bands = 12
N_time = 32
N_f = 3
guard = 1
[sieve]
n_max = 10
test_omega = 1.0180339887498949
[evolution]
n_periods = 3
record_every = 16
[zoo]
n_levels = 10
n_periods = 20
alphas = 1, 0
"""

RESONANT = """
[model]
omega = 2
g = 0.05
N_bands = 16
N_time = 32
N_f = 1
"""

CONFIGS = {name: SMALL for name in SUBCOMMANDS}
CONFIGS["resonant"] = RESONANT


def _read(d, name):
    return json.loads((Path(d) / name).read_text())


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    out = {}
    for name in SUBCOMMANDS:
        d = tmp_path_factory.mktemp(name)
        out[name] = (execute(name, CONFIGS[name], d), d)
    return out


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_subcommand_passes_and_writes_manifest(runs, name):
    code, d = runs[name]
    assert code == 0, (d / "error.json").read_text() if (d / "error.json").exists() else ""
    man = _read(d, "manifest.json")
    assert man["subcommand"] == name
    for fname, digest in man["outputs"].items():
        assert sha256_file(d / fname) == digest
    assert "[model]" in man["config_text"] and "tol_unitary" in man["config_text"]  # defaults materialised
    assert not [p for p in os.listdir(d) if p.endswith(".tmp")]


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_result_matches_golden(runs, name):
    _, d = runs[name]
    actual = _read(d, "result.json")
    path = GOLDEN / f"{name}.json"
    if os.environ.get("RINGFLOQUET_REGEN_GOLDEN"):
        path.write_text(json.dumps(actual, indent=1) + "\n")
    golden = json.loads(path.read_text())
    assert compare_to_golden(actual, golden, SCHEMAS[name]) == []


def test_spectrum_products(runs):
    _, d = runs["spectrum"]
    rows = (d / "spectrum.csv").read_text().splitlines()
    assert rows[0] == "n,k,t,E" and len(rows) == 1 + 12 * 32
    assert _read(d, "gap_report.json")["passed"] is True
    assert (d / "traces.csv").exists()


def test_evolve_rerun_bitwise_identical(runs, tmp_path):
    _, d = runs["evolve"]
    code = rerun(d / "manifest.json", tmp_path)
    assert code == 0
    assert (tmp_path / "energy.csv").read_bytes() == (d / "energy.csv").read_bytes()
    assert _read(tmp_path, "rerun.json")["identical"] is True


def test_rerun_detects_changed_output(runs, tmp_path):
    _, d = runs["spectrum"]
    man = _read(d, "manifest.json")
    man["outputs"]["spectrum.csv"] = "0" * 64
    p = tmp_path / "m.json"
    p.write_text(json.dumps(man))
    assert rerun(p, tmp_path / "again") == 1
    assert _read(tmp_path / "again", "rerun.json")["mismatched"] == ["spectrum.csv"]


def test_kam_at_constructed_resonance_exits_two(tmp_path):
    om = resonant_omega()
    text = f"omega = {om!r}\ng = 0.02\nN_bands = 16\nN_time = 64\nN_f = 6\n"
    assert execute("kam", text, tmp_path) == 2
    err = _read(tmp_path, "error.json")
    assert err["error"] == "Resonant" and err["exit_code"] == 2
    top = err["witnesses"][0]
    assert (top["k"], top["n"], top["m"]) == (1, 1, 0)
    assert not (tmp_path / "result.json").exists()
    assert (tmp_path / "manifest.json").exists()


def test_sieve_failure_exit_two_keeps_intervals(tmp_path):
    assert execute("sieve", "[sieve]\nn_max = 6\ntest_omega = 1", tmp_path) == 2
    assert (tmp_path / "intervals.csv").exists()
    w = _read(tmp_path, "error.json")["witnesses"][0]
    assert w["k"] * 1.0 + (w["m"] ** 2 + 0.5) - (w["n"] ** 2 + 0.5) == 0


def test_not_resonant_exit_two(tmp_path):
    assert execute("resonant", "omega = sqrt(2)\nN_bands = 6\nN_time = 8", tmp_path) == 2
    assert _read(tmp_path, "error.json")["error"] == "NotResonant"


@pytest.mark.parametrize(
    "text, error, line",
    [("omega = 1\nnope = 3", "ParseError", 2), ("g = -0.1", "ValidationError", None)],
)
def test_errors_exit_one_without_partial_outputs(tmp_path, text, error, line):
    assert execute("spectrum", text, tmp_path) == 1
    assert sorted(os.listdir(tmp_path)) == ["error.json"]
    err = _read(tmp_path, "error.json")
    assert err["error"] == error and err["exit_code"] == 1
    assert err.get("line") == line


def test_main_flags(tmp_path, monkeypatch):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL)
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "3", "--override", "zoo.n_periods=5",
                 "--threads", "1"]) == 0
    man = _read(out, "manifest.json")
    assert man["config"]["zoo"]["seed"] == 3 and man["config"]["zoo"]["n_periods"] == 5
    assert str(cfg) in man["input_digests"]
    monkeypatch.setenv("RINGFLOQUET_OUT", str(tmp_path / "env"))
    assert main(["sieve", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "result.json").exists()
    assert main(["spectrum", "--config", str(tmp_path / "missing.ini"), "--out", str(out)]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ringfloquet", "sieve", "--out", str(tmp_path),
                           "--override", "sieve.n_max=8"], capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert _read(tmp_path, "result.json")["schema_version"] == 1
