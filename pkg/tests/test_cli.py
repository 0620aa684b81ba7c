import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from rsmdp import cli
from rsmdp.fixtures import ladder_model
from rsmdp.model import Mdp, dump_model


@pytest.fixture
def ladder_file(tmp_path):
    path = tmp_path / "ladder.json"
    assert cli.main(["example22", "--rho", "0.5", "--lambda", "1", "--out", str(path)]) == 0
    return path


def run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr().out


def test_example22_writes_model_and_sidecar(ladder_file):
    sidecar = ladder_file.with_name("ladder.expected.json")
    expected = json.loads(sidecar.read_text())
    assert expected["regime"] == "e^λρ>1"
    assert expected["jstar"]["2"] == pytest.approx(2 * (1 + math.log(0.5)))
    assert json.loads(ladder_file.read_text())["metadata"]["fixture"] == "example22"


def test_example22_rejects_rho(tmp_path, capsys):
    code, out = run(capsys, "example22", "--rho", "1.5", "--lambda", "1", "--out", str(tmp_path / "x.json"))
    assert code == cli.EXIT_INVALID and "rho" in json.loads(out)["error"]


def test_validate(ladder_file, capsys, tmp_path):
    code, out = run(capsys, "validate", "--model", str(ladder_file))
    assert code == 0 and json.loads(out)["stationary_policies"] == 2
    doc = json.loads(ladder_file.read_text())
    doc["transitions"]["1"]["0"]["1"] = 0.9
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code, out = run(capsys, "validate", "--model", str(bad))
    report = json.loads(out)
    assert code == cli.EXIT_INVALID and report["state"] == "1" and report["action"] == "0"


def test_solve_json_and_regime(ladder_file, capsys):
    code, out = run(capsys, "solve", "--model", str(ladder_file), "--lambda", "1")
    report = json.loads(out)
    assert code == 0
    assert report["jstar"]["1"] == pytest.approx(1 + math.log(0.5), abs=1e-9)
    assert report["minmax"]["holds"] and report["provenance"]["regime"] == "e^λρ>1"
    assert report["level_sets"]["sets"] == [["0"], ["1"], ["2"]]


def test_solve_csv(ladder_file, capsys, tmp_path):
    out_path = tmp_path / "solve.csv"
    code, _ = run(capsys, "solve", "--model", str(ladder_file), "--lambda", "0.5", "--output", "csv", "--out", str(out_path))
    rows = list(csv.reader(io.StringIO(out_path.read_text())))
    assert code == 0 and rows[0] == ["name", "state", "value"]
    jstar = {r[1]: float(r[2]) for r in rows if r[0] == "jstar"}
    assert jstar == {"0": 0.0, "1": 0.0, "2": 0.0}


def test_solve_with_optimality_equation_encodes_infinity(ladder_file, capsys):
    code, out = run(capsys, "solve", "--model", str(ladder_file), "--lambda", "1", "--optimality-equation", "--max-iter", "500")
    report = json.loads(out)
    assert code == 0 and report["optimality_equation"]["success"] is False


def test_doeblin_exit_codes(ladder_file, capsys, tmp_path):
    code, out = run(capsys, "doeblin", "--model", str(ladder_file), "--z", "0")
    assert code == 0 and json.loads(out)["checks"][0]["bound_M"] == pytest.approx(7 / 3)
    m = ladder_model(0.5)
    kernel = np.array(m.kernel)
    kernel[2, 0] = [0, 0, 1]
    broken = tmp_path / "broken.json"
    broken.write_text(dump_model(Mdp.from_arrays(m.cost, kernel, m.admissible)))
    code, out = run(capsys, "doeblin", "--model", str(broken))
    assert code == cli.EXIT_DOEBLIN and not json.loads(out)["pass"]
    code, out = run(capsys, "solve", "--model", str(broken), "--lambda", "1")
    assert code == cli.EXIT_DOEBLIN and json.loads(out)["doeblin"]["worst_state"] == "2"


def test_certify(ladder_file, capsys):
    code, out = run(
        capsys, "certify", "--model", str(ladder_file), "--lambda", "1",
        "--alpha", "0.5", "--alpha", "0.9", "--max-iter", "5000",
    )
    report = json.loads(out)
    assert code == 0, report["failures"]
    assert [a["certificate"]["status"] for a in report["alphas"]] == ["certified", "certified"]
    assert report["jstar_probe"]["status"] == "inconclusive"
    assert report["alphas"][0]["max_gap"] == pytest.approx(1.0)


def test_certify_budget_exit(ladder_file, capsys):
    code, out = run(capsys, "certify", "--model", str(ladder_file), "--lambda", "1", "--alpha", "0.99", "--max-iter", "3")
    assert code == cli.EXIT_BUDGET and json.loads(out)["failures"]


def test_certify_contradiction_exit(ladder_file, capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise cli.TheoremViolation("forced")

    monkeypatch.setattr(cli, "verify_characterization", boom)
    code, out = run(capsys, "certify", "--model", str(ladder_file), "--lambda", "1")
    assert code == cli.EXIT_CONTRADICTION and json.loads(out)["error"] == "forced"


def test_evaluate(ladder_file, capsys):
    code, out = run(capsys, "evaluate", "--model", str(ladder_file), "--lambda", "1", "--policy", "0,1,0", "--horizon", "2", "--z", "0")
    report = json.loads(out)
    assert code == 0
    assert report["long_run_average"]["1"] == pytest.approx(2 + math.log(0.25))
    assert report["expected_hitting_time"]["1"] == pytest.approx(7 / 3)
    assert report["tail_bound"]["beta"] == pytest.approx(0.25)


def test_evaluate_bad_policy(ladder_file, capsys):
    code, _ = run(capsys, "evaluate", "--model", str(ladder_file), "--lambda", "1", "--policy", "1,1,1")
    assert code == cli.EXIT_INVALID


def test_simulate_is_reproducible(ladder_file, capsys):
    argv = ["simulate", "--model", str(ladder_file), "--lambda", "1", "--x", "2", "--horizon", "2", "--samples", "5000", "--seed", "9", "--z", "0"]
    code, a = run(capsys, *argv)
    _, b = run(capsys, *argv)
    assert code == 0 and a == b
    report = json.loads(a)
    assert report["hitting_tail"]["0"]["2"] == 1.0


def test_missing_lambda(ladder_file, capsys):
    code, _ = run(capsys, "solve", "--model", str(ladder_file))
    assert code == cli.EXIT_INVALID


def test_json_encodes_infinity():
    text = cli.render({"h": {"1": math.inf}}, "json")
    assert json.loads(text) == {"h": {"1": "inf"}}


def test_module_entry_point(ladder_file):
    proc = subprocess.run(
        [sys.executable, "-m", "rsmdp", "validate", "--model", str(ladder_file)], capture_output=True, text=True
    )
    assert proc.returncode == 0 and json.loads(proc.stdout)["valid"]
