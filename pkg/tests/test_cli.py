import subprocess
import sys
from pathlib import Path

import pytest

from abreukit.cli import main, parse_problem
from abreukit.errors import ParseError, ValidationError

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
SQUARE = FIXTURES / "square.toml"


def write(tmp_path, text, name="p.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


BASE = """schema_version = 1
vertices = [[-1, -1], [1, -1], [1, 1], [-1, 1]]
edge_weights = [1, 1, 1, 1]
A = "auto"
"""


def test_parse_square_fixture():
    prob = parse_problem(SQUARE)
    P = prob.polytope()
    assert P.A == 2.0
    assert prob.solver["N"] == 64
    assert len(prob.digest) == 64


def test_parse_arity_error(tmp_path):
    p = write(tmp_path, BASE.replace("[1, 1, 1, 1]", "[1, 1, 1]"))
    with pytest.raises(ValidationError, match="edge_weights"):
        parse_problem(p)


def test_parse_unknown_fields(tmp_path):
    with pytest.raises(ValidationError, match="unknown"):
        parse_problem(write(tmp_path, BASE + "colour = 'red'\n"))
    with pytest.raises(ValidationError, match=r"\[solver\]"):
        parse_problem(write(tmp_path, BASE + "[solver]\nsteps = 3\n"))


def test_parse_schema_version(tmp_path):
    with pytest.raises(ValidationError, match="schema_version"):
        parse_problem(write(tmp_path, BASE.replace("schema_version = 1", "schema_version = 2")))


def test_parse_syntax_error_has_line(tmp_path):
    with pytest.raises(ParseError, match="line 2"):
        parse_problem(write(tmp_path, "schema_version = 1\nvertices = = 3\n"))


def test_parse_missing_file(tmp_path):
    with pytest.raises(ParseError):
        parse_problem(tmp_path / "missing.toml")


def test_parse_geometry_errors_become_validation(tmp_path):
    bad = BASE.replace("[[-1, -1], [1, -1], [1, 1], [-1, 1]]", "[[-1, -1], [1, 1], [1, -1], [-1, 1]]")
    with pytest.raises(ValidationError, match="NonConvex"):
        parse_problem(write(tmp_path, bad))
    with pytest.raises(ValidationError):
        parse_problem(write(tmp_path, BASE.replace("[1, 1, 1, 1]", "[1, 1, 0, 1]")))
    with pytest.raises(ValidationError):
        parse_problem(write(tmp_path, BASE.replace('A = "auto"', 'A = "big"')))


def test_stability_square(capsys, tmp_path):
    assert main(["stability", str(SQUARE), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "status: stable" in out
    assert "min_L:" in out
    header = (tmp_path / "stability_grid.csv").read_text().splitlines()[0]
    assert header == "theta,offset,L_normalized"
    assert (tmp_path / "report.txt").read_text() == out


def test_stability_destabilized_exit_code(capsys):
    assert main(["stability", str(FIXTURES / "hexagon_unstable.toml")]) == 2
    assert "status: destabilized" in capsys.readouterr().out


def test_asymmetric_weights_reported(capsys):
    code = main(["stability", str(FIXTURES / "square_asymmetric.toml")])
    out = capsys.readouterr().out
    assert code == 1
    assert "futaki_residual: [0, 0, -18]" in out
    assert "inconclusive" in out
    assert main(["solve", str(FIXTURES / "square_asymmetric.toml"), "--grid", "16"]) == 1
    assert "FutakiGateError" in capsys.readouterr().err


def test_solve_square(capsys, tmp_path):
    assert main(["solve", str(SQUARE), "--grid", "32", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("max_residual"))
    assert float(line.split(":")[1]) < 1e-2
    assert (tmp_path / "potential.csv").exists()
    assert (tmp_path / "M_history.csv").read_text().startswith("iteration,M\n")


def test_solve_non_convergence_exit_code(capsys):
    hexagon = str(FIXTURES / "hexagon.toml")
    assert main(["solve", hexagon, "--grid", "16", "--max-iters", "1"]) == 3
    assert "status: max_iters" in capsys.readouterr().out


def test_diagnose_square(capsys, tmp_path):
    assert main(["diagnose", str(SQUARE), "--grid", "32", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "m_condition_V_max" in out
    assert "envelope_slack" in out
    assert (tmp_path / "vertex_profile.csv").exists()


def test_joyce_verify(capsys):
    assert main(["joyce-verify", "--a1", "1", "--a2", "2"]) == 0
    out = capsys.readouterr().out
    assert "max_abreu_residual" in out and "verdict: pass" in out


def test_joyce_verify_bad_params(capsys):
    assert main(["joyce-verify", "--a1", "0", "--a2", "2"]) == 1


def test_oracle_1d(capsys, tmp_path):
    assert main(["oracle-1d", "--out", str(tmp_path)]) == 0
    assert "monotone_and_matching: yes" in capsys.readouterr().out
    assert len((tmp_path / "n_eps.csv").read_text().splitlines()) == 5


def test_missing_problem_file_exit_code(capsys, tmp_path):
    assert main(["solve", str(tmp_path / "nope.toml")]) == 1
    assert "error" in capsys.readouterr().err


def test_reports_are_deterministic(tmp_path):
    cmd = [sys.executable, "-m", "abreukit.cli", "stability", str(SQUARE), "--threads", "1"]
    a = subprocess.run(cmd, capture_output=True, check=True).stdout
    b = subprocess.run(cmd, capture_output=True, check=True).stdout
    assert a == b
    assert b"--threads" not in a
