"""
Tests for the command-line interface.

Exit-code contract: 0 success, 1 usage/config errors, 2 solver failures,
3 verification failures.  All invocations go through main(argv) so the
tests see exactly what a shell user would.
"""

import csv
import json

import numpy as np
import pytest

from bdfadjoint.cli import main


def _integrate(tmp_path, *extra):
    tape = tmp_path / "tape.json"
    rc = main(["integrate", "--problem", "catenary", "--mode", "nonadaptive",
               "--order", "2", "--h", "0.0625", "--out", str(tape), *extra])
    return rc, tape


class TestIntegrate:
    def test_writes_tape(self, tmp_path, capsys):
        rc, tape = _integrate(tmp_path)
        assert rc == 0
        assert tape.is_file()
        out = capsys.readouterr().out
        assert "steps N=33" in out          # 2/0.0625 + 1 startup substep
        assert "orders in [1, 2]" in out

    def test_reference_step_count(self, tmp_path, capsys):
        tape = tmp_path / "tape.json"
        rc = main(["integrate", "--order", "2", "--h", str(2.0 ** -6),
                   "--out", str(tape)])
        assert rc == 0
        assert "steps N=129" in capsys.readouterr().out

    def test_adaptive_mode(self, tmp_path):
        tape = tmp_path / "tape.json"
        rc = main(["integrate", "--mode", "adaptive", "--rtol", "1e-6",
                   "--out", str(tape)])
        assert rc == 0
        assert json.loads(tape.read_text())["mode"] == "adaptive"

    def test_missing_stepsize_is_usage_error(self, tmp_path):
        rc = main(["integrate", "--order", "2",
                   "--out", str(tmp_path / "t.json")])
        assert rc == 1

    def test_bad_mode_is_usage_error(self, tmp_path):
        rc = main(["integrate", "--mode", "sometimes", "--order", "2",
                   "--h", "0.25", "--out", str(tmp_path / "t.json")])
        assert rc == 1

    def test_unknown_problem_is_usage_error(self, tmp_path):
        rc = main(["integrate", "--problem", "lorenz", "--order", "2",
                   "--h", "0.25", "--out", str(tmp_path / "t.json")])
        assert rc == 1

    def test_noninteger_grid_is_usage_error(self, tmp_path):
        rc = main(["integrate", "--order", "2", "--h", "0.3",
                   "--out", str(tmp_path / "t.json")])
        assert rc == 1

    def test_singular_problem_is_solver_failure(self, tmp_path):
        """linear with a=100, h=0.01: the Newton matrix 1 - h*a is singular."""
        rc = main(["integrate", "--problem", "linear", "--config",
                   str(_write_config(tmp_path, "a = 100", "y0 = 1")),
                   "--tf", "1.0", "--order", "1", "--h", "0.01",
                   "--out", str(tmp_path / "t.json")])
        assert rc == 2

    def test_unknown_flag_is_usage_error(self, tmp_path):
        rc = main(["integrate", "--frobnicate", "1"])
        assert rc == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0


def _write_config(tmp_path, *lines):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[problem]\n" + "\n".join(lines) + "\n")
    return cfg


class TestConfig:
    def test_config_supplies_settings(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "[problem]\n"
            "problem = catenary\n"
            "p = 3.0\n"
            "A = -3.0\n"
            "tf = 2.0\n"
            "\n"
            "[run]\n"
            "mode = nonadaptive\n"
            "order = 2\n"
            "h = 0.25\n")
        tape = tmp_path / "tape.json"
        rc = main(["integrate", "--config", str(cfg), "--out", str(tape)])
        assert rc == 0
        doc = json.loads(tape.read_text())
        assert doc["driver_params"] == {"order": 2, "h": 0.25}

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("[run]\nmode = nonadaptive\norder = 2\nh = 0.25\n")
        tape = tmp_path / "tape.json"
        rc = main(["integrate", "--config", str(cfg), "--h", "0.125",
                   "--out", str(tape)])
        assert rc == 0
        assert json.loads(tape.read_text())["driver_params"]["h"] == 0.125

    def test_missing_config_file(self, tmp_path):
        rc = main(["integrate", "--config", str(tmp_path / "nope.cfg")])
        assert rc == 1


class TestAdjointCommand:
    def test_writes_json_and_csv(self, tmp_path, capsys):
        _, tape = _integrate(tmp_path)
        out = tmp_path / "adjoint.json"
        rc = main(["adjoint", "--tape", str(tape), "--out", str(out)])
        assert rc == 0
        assert out.is_file()
        assert (tmp_path / "adjoint.csv").is_file()
        stdout = capsys.readouterr().out
        assert "gradient=[" in stdout
        with open(tmp_path / "adjoint.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert header == ["t", "lambda_1", "lambda_2", "Lambda_1", "Lambda_2"]

    def test_requires_tape(self):
        assert main(["adjoint"]) == 1

    def test_missing_tape_file(self, tmp_path):
        assert main(["adjoint", "--tape", str(tmp_path / "no.json")]) == 1

    def test_problem_mismatch_rejected(self, tmp_path):
        _, tape = _integrate(tmp_path)
        rc = main(["adjoint", "--tape", str(tape), "--problem", "linear",
                   "--out", str(tmp_path / "a.json")])
        assert rc == 1


class TestVerifyCommand:
    def _chain(self, tmp_path):
        _, tape = _integrate(tmp_path)
        adj = tmp_path / "adjoint.json"
        main(["adjoint", "--tape", str(tape), "--out", str(adj)])
        return tape, adj

    def test_consistent_pair_passes(self, tmp_path, capsys):
        tape, adj = self._chain(tmp_path)
        report = tmp_path / "kkt.json"
        rc = main(["verify", "--tape", str(tape), "--adjoint-file", str(adj),
                   "--out", str(report)])
        assert rc == 0
        assert json.loads(report.read_text())["passed"] is True
        assert "coefficient invariants: ok" in capsys.readouterr().out

    def test_tampered_multipliers_fail(self, tmp_path, capsys):
        tape, adj = self._chain(tmp_path)
        doc = json.loads(adj.read_text())
        doc["lambdas"][4][1] += 1e-3
        adj.write_text(json.dumps(doc))
        rc = main(["verify", "--tape", str(tape), "--adjoint-file", str(adj),
                   "--out", str(tmp_path / "kkt.json")])
        assert rc == 3
        assert "adjoint_residual" in capsys.readouterr().err

    def test_mismatched_pair_is_usage_error(self, tmp_path):
        tape, _ = self._chain(tmp_path)
        other_tape = tmp_path / "other.json"
        main(["integrate", "--order", "2", "--h", "0.125",
              "--out", str(other_tape)])
        other_adj = tmp_path / "other_adj.json"
        main(["adjoint", "--tape", str(other_tape), "--out", str(other_adj)])
        rc = main(["verify", "--tape", str(tape),
                   "--adjoint-file", str(other_adj),
                   "--out", str(tmp_path / "kkt.json")])
        assert rc == 1

    def test_requires_both_files(self, tmp_path):
        tape, _ = self._chain(tmp_path)
        assert main(["verify", "--tape", str(tape)]) == 1


class TestConvergeCommand:
    def test_h_sweep_csv(self, tmp_path, capsys):
        out = tmp_path / "conv.csv"
        rc = main(["converge", "--order", "2", "--h", "0.25,0.125,0.0625",
                   "--probe", "1.25", "--out", str(out)])
        assert rc == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["h", "error_tf", "order_tf",
                           "error_interior", "order_interior"]
        assert len(rows) == 4
        hs = [float(r[0]) for r in rows[1:]]
        assert hs == sorted(hs, reverse=True)
        stdout = capsys.readouterr().out
        assert "fitted order (tf)" in stdout

    def test_adaptive_rtol_sweep(self, tmp_path):
        out = tmp_path / "conv.csv"
        rc = main(["converge", "--mode", "adaptive", "--rtol", "1e-4,1e-6",
                   "--probe", "1.25", "--out", str(out)])
        assert rc == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "rtol"
        errs = [float(r[1]) for r in rows[1:]]
        assert errs[1] < errs[0]

    def test_too_few_points_is_usage_error(self, tmp_path):
        rc = main(["converge", "--order", "2", "--h", "0.25",
                   "--out", str(tmp_path / "c.csv")])
        assert rc == 1

    def test_probe_outside_interval(self, tmp_path):
        rc = main(["converge", "--order", "2", "--h", "0.25,0.125",
                   "--probe", "3.5", "--out", str(tmp_path / "c.csv")])
        assert rc == 1
