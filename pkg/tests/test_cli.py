import json

import pytest

from wittenlab import cli


def test_list_builtin_scenarios(capsys):
    assert cli.main(["run", "--list"]) == 0
    out = capsys.readouterr().out
    for name in ("sphere-height", "torus-tilted", "sphere-rotation"):
        assert name in out


def test_run_requires_scenario(capsys):
    assert cli.main(["run"]) == 2


def test_unknown_scenario(capsys):
    assert cli.main(["run", "no-such-thing"]) == 2


def test_unknown_suite(capsys):
    assert cli.main(["accept", "bogus"]) == 2


def test_vector_scenario_artifacts(tmp_path, capsys):
    code = cli.main(["run", "sphere-rotation", "--out", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "sphere-rotation.report.json").read_text())
    assert report["schema"] == 1
    assert report["verdicts"]["poincare_hopf"] is True
    assert report["details"]["sign_sum"] == 2
    assert (tmp_path / "sphere-rotation.spectra.csv").exists()


def test_flat_torus_constant_scenario(tmp_path):
    code = cli.main(["run", "torus-flat-constant", "--out", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "torus-flat-constant.report.json").read_text())
    assert report["details"]["sign_sum"] == 0
    assert report["betti"] == [1, 2, 1]


def test_untilted_torus_fails_with_transversality(tmp_path, capsys):
    code = cli.main(["run", "torus-untilted", "--out", str(tmp_path)])
    assert code == 3
    err = capsys.readouterr().err
    assert "thom_smale" in err and "Transversality" in err


def test_scenario_file_roundtrip(tmp_path):
    doc = {
        "schema": 1,
        "name": "custom-sphere",
        "surface": "sphere",
        "field": {"type": "scalar", "id": "height"},
        "resolution": 16,
        "t_grid": [1.0, 3.0],
        "instanton_t": 3.0,
    }
    path = tmp_path / "custom.json"
    path.write_text(json.dumps(doc))
    code = cli.main(["run", str(path), "--out", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "custom-sphere.report.json").read_text())
    assert report["betti"] == [1, 0, 1]
    assert report["verdicts"]["weak"] is True
    lines = (tmp_path / "custom-sphere.spectra.csv").read_text().splitlines()
    assert lines[0] == "scenario,degree,t,eigen_index,eigenvalue"
    assert len(lines) > 1


def test_run_reports_are_byte_deterministic(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert cli.main(["run", "sphere-height", "--out", str(out_a), "--seed", "5"]) == 0
    assert cli.main(["run", "sphere-height", "--out", str(out_b), "--seed", "5"]) == 0
    ra = (out_a / "sphere-height.report.json").read_bytes()
    rb = (out_b / "sphere-height.report.json").read_bytes()
    assert ra == rb
    ca = (out_a / "sphere-height.spectra.csv").read_bytes()
    cb = (out_b / "sphere-height.spectra.csv").read_bytes()
    assert ca == cb


def test_accept_single_suite(tmp_path, capsys):
    code = cli.main(["accept", "clifford", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "C01 PASS" in out and "C02 PASS" in out and "C03 PASS" in out
    report = json.loads((tmp_path / "acceptance-clifford.report.json").read_text())
    assert report["all_passed"] is True
    assert [r["id"] for r in report["results"]] == ["C01", "C02", "C03"]
    assert "seconds" not in json.dumps(report)  # timings never enter the report bytes
