import csv
import io
import json
import math

import pytest

from poincare_lab import cli
from poincare_lab.cli import (CSV_COLUMNS, ReportBundle, ScenarioError, emit_report, load_bundle, load_scenarios,
                              main, run_bundle, run_scenario)
from poincare_lab.ineqlab import CheckReport
from poincare_lab.lattice import InequalityParams

WFP = {
    "name": "wfp",
    "grid": {"dim": 1, "m": 12},
    "field": {"kind": "linear", "a": [1.0]},
    "measure": {"kind": "lebesgue"},
    "check": {"theorem": "WFP", "params": {"delta": 0.5, "q": 2}},
}

RANDOM = {
    "name": "random-riesz",
    "grid": {"dim": 2, "m": 4},
    "field": {"kind": "trig", "modes": [{"k": [1.0, 1.0]}]},
    "measure": {"kind": "random"},
    "check": {"theorem": "RIESZ", "params": {"alpha": 1.0}},
}


def write(tmp_path, obj, name="sc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(path)


def rows(text):
    return list(csv.reader(io.StringIO(text)))


class TestScenarios:
    def test_wfp_closed_form(self):
        reps = run_scenario(WFP)
        assert len(reps) == 1
        assert reps[0].empirical_constant == pytest.approx(math.sqrt(3) / 8, rel=0.02)

    def test_alpha_violation(self):
        sc = json.loads(json.dumps(WFP))
        sc["check"]["params"]["alpha"] = 0.7
        with pytest.raises(ScenarioError, match="alpha"):
            run_scenario(sc)

    def test_delta_sweep_order(self):
        sc = dict(WFP, check={"theorem": "WFP", "params": {"delta": 0.5, "q": 1}}, grid={"dim": 1, "m": 8},
                  sweep={"param": "delta", "values": [0.5, 0.9, 0.99]})
        assert [r.params.delta for r in run_scenario(sc)] == [0.5, 0.9, 0.99]

    def test_parse_error_location(self, tmp_path):
        with pytest.raises(ScenarioError, match="line 2"):
            load_scenarios(write(tmp_path, '{\n  "grid": oops}'))

    def test_schema_error_field(self, tmp_path):
        bad = dict(WFP, grid={"dim": 5, "m": 3})
        with pytest.raises(ScenarioError, match="grid/dim"):
            load_scenarios(write(tmp_path, bad))

    def test_cell_guard(self):
        with pytest.raises(ScenarioError, match="guard"):
            run_scenario(dict(WFP, grid={"dim": 2, "m": 13}))

    def test_scenario_list(self, tmp_path):
        assert len(load_scenarios(write(tmp_path, {"scenarios": [WFP, WFP]}))) == 2


class TestEmit:
    def test_empty_bundle(self):
        text = emit_report(ReportBundle())
        assert rows(text) == [list(CSV_COLUMNS)]

    def test_one_report(self):
        text = emit_report(run_bundle([dict(WFP, grid={"dim": 1, "m": 6})]))
        out = rows(text)
        assert len(text.splitlines()) == 2
        assert out[0] == list(CSV_COLUMNS)
        row = dict(zip(out[0], out[1]))
        assert row["theorem"] == "WFP" and row["runtime_ms"] == ""
        assert float(row["lhs"]) == run_scenario(dict(WFP, grid={"dim": 1, "m": 6}))[0].lhs

    def test_json_round_trip(self):
        bundle = run_bundle([dict(WFP, grid={"dim": 1, "m": 6}), RANDOM])
        text = emit_report(bundle, "json")
        again = load_bundle(text)
        assert emit_report(again, "json") == text
        assert again.reports[0].lhs == bundle.reports[0].lhs
        assert again.reports[1].extra == bundle.reports[1].extra

    def test_float_digits(self):
        r = CheckReport("WFP", InequalityParams(delta=0.1), 1, 3, 1 / 3, 0.1)
        row = dict(zip(CSV_COLUMNS, rows(emit_report(ReportBundle([r])))[1]))
        assert row["lhs"] == "0.33333333333333331" and row["delta"] == "0.10000000000000001"
        assert row["pass_explicit"] == "" and float(row["lhs"]) == 1 / 3


class TestMain:
    def test_run_exit_zero(self, tmp_path, capsys):
        assert main(["run", write(tmp_path, WFP)]) == 0
        assert rows(capsys.readouterr().out)[0] == list(CSV_COLUMNS)

    def test_usage_error(self, capsys):
        assert main(["run"]) == 2
        assert main(["bogus"]) == 2

    def test_validation_exit(self, tmp_path, capsys):
        sc = json.loads(json.dumps(WFP))
        sc["check"]["params"]["alpha"] = 0.7
        assert main(["run", write(tmp_path, sc)]) == 2
        assert "alpha" in capsys.readouterr().err

    def test_hard_failure_exit(self, tmp_path, monkeypatch, capsys):
        failing = CheckReport("RIESZ", InequalityParams(alpha=1.0), 1, 3, 2.0, 1.0, 1.0, False)
        monkeypatch.setattr(cli, "_one_check", lambda *a: failing)
        assert main(["run", write(tmp_path, RANDOM)]) == 1
        assert "RIESZ" in capsys.readouterr().err

    def test_out_file_and_json(self, tmp_path):
        out = tmp_path / "out.json"
        assert main(["run", write(tmp_path, WFP), "--format", "json", "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert data["reports"][0]["theorem"] == "WFP"
        assert "wall_time_s" not in data["provenance"]

    def test_threads_and_runs_identical(self, tmp_path):
        path = write(tmp_path, {"scenarios": [RANDOM, dict(WFP, grid={"dim": 1, "m": 8})]})
        outs = []
        for k, threads in enumerate(["1", "4", "1"]):
            out = tmp_path / f"o{k}.csv"
            assert main(["run", path, "--threads", threads, "--seed", "7", "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_seed_changes_random_measure(self, tmp_path):
        path = write(tmp_path, RANDOM)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["run", path, "--seed", "1", "--out", str(a)])
        main(["run", path, "--seed", "2", "--out", str(b)])
        assert a.read_text() != b.read_text()

    def test_converge(self, tmp_path, capsys):
        assert main(["converge", write(tmp_path, WFP), "--levels", "4,6,8"]) == 0
        out = rows(capsys.readouterr().out)
        assert [r[2] for r in out[1:]] == ["4", "6", "8"]
        assert main(["converge", write(tmp_path, WFP), "--levels", "8,6"]) == 2

    def test_counterexample(self, capsys):
        assert main(["counterexample", "--family", "PQ-CLASSICAL", "--p", "1.5", "--k-min", "2", "--k-max", "4"]) == 0
        out = rows(capsys.readouterr().out)
        assert out[0][:3] == ["family", "engine", "k"] and len(out) == 4
        assert main(["counterexample", "--family", "PQ-CLASSICAL", "--p", "3"]) == 2

    def test_timing_flag(self, tmp_path, capsys):
        assert main(["run", write(tmp_path, dict(WFP, grid={"dim": 1, "m": 5})), "--timing"]) == 0
        row = dict(zip(CSV_COLUMNS, rows(capsys.readouterr().out)[1]))
        assert float(row["runtime_ms"]) > 0
