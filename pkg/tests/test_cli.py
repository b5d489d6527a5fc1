import csv
import json
import math
from pathlib import Path

import pytest

from lsred.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def manifest(out, command):
    return json.loads((Path(out) / f"manifest_{command}.json").read_text())


def test_ground_state_values_and_files(tmp_path, capsys):
    out = tmp_path / "gs"
    code = main(["ground-state", "--config", str(CONFIGS / "ground_state_n1_p4.ini"), "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    # n = 1, p = 4: U = sqrt(2) sech(r), int U^4 = 16/3
    assert f"{math.sqrt(2):.9f}"[:10] in text
    assert "5.33333333" in text
    for name in ("ground_state.csv", "ground_state.json", "manifest_ground-state.json"):
        assert (out / name).exists()
    man = manifest(out, "ground-state")
    assert man["exit_code"] == 0
    assert set(man["versions"]) >= {"lsred", "numpy", "scipy", "sympy", "python"}
    assert "total" in man["timings"]
    assert "ground_state.csv" in man["files"]


def test_ground_state_rejects_p_two(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\nn = 1\np = 2\n")
    assert main(["ground-state", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "(2, 2*_n)" in capsys.readouterr().err


def test_missing_config_flag_is_configuration_error(tmp_path):
    assert main(["ground-state", "--out", str(tmp_path / "o")]) == 2


def test_landscape_without_manifold_names_kind(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\nn = 2\np = 4\n")
    assert main(["landscape", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "kind" in capsys.readouterr().err


def test_constant_landscape_reported_degenerate(tmp_path, capsys):
    out = tmp_path / "land"
    code = main(["landscape", "--config", str(CONFIGS / "constant_torus.ini"), "--out", str(out),
                 "--epsilon-override", "0.2"])
    assert code == 0
    assert "degenerate" in capsys.readouterr().out
    summary = json.loads((out / "landscape_summary.json").read_text())
    assert summary["degenerate"] is True
    assert (out / "landscape_eps0.2.csv").exists()


def test_solve_is_deterministic(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        code = main(["solve", "--config", str(CONFIGS / "cosine_torus.ini"), "--out", str(out),
                     "--epsilon-override", "0.2"])
        assert code == 0
    for name in ("solution_eps0.2.csv", "continuation.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_solve_from_zero_seed_fails(tmp_path):
    text = (CONFIGS / "cosine_torus.ini").read_text() + "\n"
    text = text.replace("[solve]", "[solve]\ninitial = zero") if "[solve]" in text else \
        text + "[solve]\ninitial = zero\n"
    cfg = write(tmp_path, text)
    out = tmp_path / "z"
    assert main(["solve", "--config", cfg, "--out", str(out), "--epsilon-override", "0.2"]) == 1
    assert manifest(out, "solve")["status"] == "numerical-failure"


def test_solve_resumes_from_solution_csv(tmp_path):
    first = tmp_path / "first"
    assert main(["solve", "--config", str(CONFIGS / "cosine_torus.ini"), "--out", str(first),
                 "--epsilon-override", "0.2"]) == 0
    text = (CONFIGS / "cosine_torus.ini").read_text() + "\n"
    csv_path = str(first / "solution_eps0.2.csv")
    text = text.replace("[solve]", f"[solve]\ninitial = {csv_path}") if "[solve]" in text else \
        text + f"[solve]\ninitial = {csv_path}\n"
    cfg = write(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "resume"), "--epsilon-override", "0.2"]) == 0
    assert json.loads((tmp_path / "resume" / "solve_eps0.2.json").read_text())["iterations"] <= 1


def test_lift_passes_and_wrong_dilation_fails(tmp_path):
    out = tmp_path / "lift"
    assert main(["lift", "--config", str(CONFIGS / "torus_of_revolution.ini"), "--out", str(out)]) == 0
    payload = json.loads((out / "lift.json").read_text())
    assert payload["lift"]["ratio"] <= 3
    assert (out / "lift_residuals.csv").exists()
    assert main(["lift", "--config", str(CONFIGS / "wrong_dilation.ini"), "--out", str(tmp_path / "wrong")]) == 1


@pytest.mark.parametrize("faults, expect_zero", [([], True), (["--fault", "gamma_exponent"], False)])
def test_verify_exit_code_counts_failures(tmp_path, faults, expect_zero):
    out = tmp_path / "verify"
    code = main(["verify", "--out", str(out), *faults])
    with (out / "verify.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    failures = sum(row["passed"] == "0" for row in rows)
    assert len(rows) == 18
    assert code == failures
    assert (code == 0) == expect_zero
