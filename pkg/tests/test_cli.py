import csv
import hashlib
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from neardecomp.cli import main

DEMOS = Path(__file__).resolve().parents[1] / "demos"
BUILDING = DEMOS / "building.nds"
REFERENCE = DEMOS / "reference_constants.json"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, text, name="sys.nds"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestValidate:
    def test_building(self, capsys):
        code, out, err = run(capsys, "validate", BUILDING)
        assert code == 0 and out == "" and "2 fast" in err

    def test_undefined_symbol(self, capsys, tmp_path):
        code, out, err = run(capsys, "validate", write(tmp_path, "dyn x = -x + z\n"))
        assert code == 2 and out == ""
        assert "'z'" in err and "line 1" in err

    def test_empty(self, capsys, tmp_path):
        code, _, err = run(capsys, "validate", write(tmp_path, ""))
        assert code == 2 and "no system" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "validate", tmp_path / "nope.nds")
        assert code == 2 and "cannot read" in err


class TestAnalyze:
    def test_fast_block(self, capsys):
        code, out, _ = run(capsys, "analyze", BUILDING, "--block", "fast",
                           "--domain", "d1=-20:20", "--domain", "d2=-20:20", "--domain", "D=-20:20")
        d = json.loads(out)
        assert code == 0 and d["contracting"]
        assert d["beta"] == pytest.approx(0.5, abs=1e-3) and d["chi"] == 1.0
        assert len(d["worst_point"]) == 3 and d["schema_version"] == 1

    def test_slow_block(self, capsys):
        code, out, _ = run(capsys, "analyze", BUILDING, "--block", "slow", "--domain", "D=-20:20")
        assert code == 0 and json.loads(out)["beta"] == pytest.approx(0.25, abs=1e-3)

    def test_decay(self, capsys, tmp_path):
        code, out, _ = run(capsys, "analyze", write(tmp_path, "dyn x = -x\n"))
        assert code == 0 and json.loads(out)["beta"] == pytest.approx(1.0)

    def test_growth_not_contracting(self, capsys, tmp_path):
        code, out, err = run(capsys, "analyze", write(tmp_path, "dyn x = x\n"))
        d = json.loads(out)
        assert code == 1 and d["contracting"] is False
        assert d["worst_eigenvalue"] == pytest.approx(1.0)
        assert "not contracting" in err

    def test_metric_matrix(self, capsys, tmp_path):
        src = "dyn a = -a + 6*b\ndyn b = -4*b\n"
        assert run(capsys, "analyze", write(tmp_path, src))[0] == 1
        code, out, _ = run(capsys, "analyze", write(tmp_path, src), "--metric", "[[1, 0], [0, 3]]")
        assert code == 0 and json.loads(out)["chi"] == pytest.approx(3.0)

    def test_expression_metric(self, capsys, tmp_path):
        code, out, _ = run(capsys, "analyze", write(tmp_path, "dyn x = -x\n"), "--metric", '[["exp(x^2/2)"]]',
                           "--domain", "x=-1:1")
        assert code == 0 and json.loads(out)["metric"] == "state-dependent"

    @pytest.mark.parametrize("extra", [["--metric", "[[1, 0]]"], ["--metric", "nonsense"],
                                       ["--domain", "q=0:1"], ["--domain", "x=1:0"], ["--domain", "x"]])
    def test_usage_errors(self, capsys, tmp_path, extra):
        code, _, err = run(capsys, "analyze", write(tmp_path, "dyn x = -x\n"), *extra)
        assert code == 2 and err

    def test_fast_block_requires_fast_states(self, capsys, tmp_path):
        assert run(capsys, "analyze", write(tmp_path, "dyn x = -x\n"), "--block", "fast")[0] == 2

    def test_numerical_failure(self, capsys, tmp_path):
        code, _, err = run(capsys, "analyze", write(tmp_path, "dyn x = -sqrt(x)\n"), "--domain", "x=-1:1")
        assert code == 3 and "numerical" in err


class TestReduce:
    def test_reported_constants(self, capsys):
        code, out, err = run(capsys, "reduce", BUILDING, "--constants", REFERENCE, "--samples", 256)
        d = json.loads(out)
        assert code == 0 and d["valid"]
        assert d["epsilon_c"] == pytest.approx(math.sqrt(2) / 7, abs=1e-12)
        assert d["t_total"] == pytest.approx(42 * math.log(10))
        for key in ("m_xtilde_bound", "ytilde_asymptote", "t_fast", "constants", "margin"):
            assert key in d

    def test_decoupled(self, capsys, tmp_path):
        src = "params { epsilon = 0.1 }\nfast x\nslow y\ndyn x = -x\ndyn y = -epsilon*y\n"
        code, out, _ = run(capsys, "reduce", write(tmp_path, src), "--samples", 128)
        assert code == 0 and json.loads(out)["epsilon_c"] == "inf"

    def test_flags_invalid(self, capsys, tmp_path):
        src = BUILDING.read_text().replace("epsilon = 0.1", "epsilon = 0.3")
        code, out, err = run(capsys, "reduce", write(tmp_path, src), "--constants", REFERENCE, "--samples", 128)
        d = json.loads(out)
        assert code == 1 and not d["valid"] and d["m_xtilde_bound"] is None
        assert "invalid" in err

    def test_initial_condition(self, capsys):
        code, out, _ = run(capsys, "reduce", BUILDING, "--constants", REFERENCE, "--samples", 128,
                           "--ic", "d1=1", "--ic", "d2=0", "--ic", "D=2")
        assert code == 0 and json.loads(out)["xtilde0"] == pytest.approx(1.0)

    def test_bad_constants(self, capsys, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text('{"alpha": 1}')
        assert run(capsys, "reduce", BUILDING, "--constants", bad, "--samples", 64)[0] == 2

    def test_no_partition(self, capsys, tmp_path):
        code, _, err = run(capsys, "reduce", write(tmp_path, "dyn x = -x\n"))
        assert code == 2 and "fast and slow" in err


class TestSimulate:
    def test_outputs(self, capsys, tmp_path):
        src = write(tmp_path, "dyn x = -x\ndomain x in [-3, 3]\n")
        out_dir = tmp_path / "out"
        code, out, _ = run(capsys, "simulate", src, "--runs", 5, "--seed", 2, "--T", 30, "--out", out_dir)
        assert code == 0
        summary = json.loads(out)
        assert summary["divergent"] == 0 and len(summary["clusters"]) == 1
        assert sorted(p.name for p in out_dir.iterdir()) == ["manifest.json", "summary.json", "trajectories.csv"]
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["seed"] == 2 and manifest["command"] == "simulate"
        assert manifest["input_sha256"] == hashlib.sha256(src.read_bytes()).hexdigest()
        rows = list(csv.reader(open(out_dir / "trajectories.csv")))
        assert rows[0] == ["run", "t", "x"] and len(rows) == 1 + 5 * 201

    def test_deterministic(self, capsys, tmp_path):
        args = ["simulate", BUILDING, "--runs", 3, "--seed", 4, "--T", 5]
        run(capsys, *args, "--out", tmp_path / "a")
        run(capsys, *args, "--out", tmp_path / "b")
        for name in ("trajectories.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestReproduce:
    def test_fig1(self, capsys, tmp_path):
        code, out, err = run(capsys, "reproduce", "fig1", "--runs", 4, "--out", tmp_path)
        d = json.loads(out)
        assert code == 0 and d["regime"] == "converged" and d["n_clusters"] == 1
        assert (tmp_path / "fig1.csv").exists() and (tmp_path / "manifest.json").exists()
        assert "fig1" in err

    def test_rerun_from_manifest(self, capsys, tmp_path):
        run(capsys, "reproduce", "fig3", "--runs", 2, "--T", 50, "--out", tmp_path / "a")
        argv = json.loads((tmp_path / "a" / "manifest.json").read_text())["argv"]
        argv[argv.index("--out") + 1] = str(tmp_path / "b")
        run(capsys, *argv)
        assert (tmp_path / "a" / "fig3.csv").read_bytes() == (tmp_path / "b" / "fig3.csv").read_bytes()


def test_usage_exit_code(capsys):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "neardecomp.cli", "validate", str(BUILDING)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == ""
