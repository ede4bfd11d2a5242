import csv
import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from dataclasses import replace

import pytest

from flexdom import cli
from flexdom.caseio import emit_native
from flexdom.cli import ConfigError, RunConfig, main, parse_formulations, parse_hours
from flexdom.network import FormulationKind as K

SVG = "{http://www.w3.org/2000/svg}"


@pytest.mark.parametrize("text, hours", [
    ("14", (14,)), ("12-15", (12, 13, 14, 15)), ("1,3,5-7", (1, 3, 5, 6, 7)), ("3, 3,2", (2, 3)),
])
def test_parse_hours(text, hours):
    assert parse_hours(text) == hours


@pytest.mark.parametrize("text", ["x", "5-3", "1-"])
def test_parse_hours_errors(text):
    with pytest.raises(ConfigError):
        parse_hours(text)


def test_parse_formulations():
    assert parse_formulations("distflow, acopf,distflow") == (K.DISTFLOW, K.AC_OPF)
    with pytest.raises(ConfigError):
        parse_formulations("dc")


@pytest.mark.parametrize("kwargs", [
    {"formulations": ()}, {"hours": ()}, {"hours": (0,)}, {"hours": (25,)},
    {"n_points": 7}, {"n_points": 2}, {"tol": 0.0},
])
def test_run_config_validation(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_config_errors_exit_1(tmp_path, capsys):
    assert main(["dispatch", "--formulations", ""]) == 1
    assert main(["dispatch", "--case", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["dispatch", "--case", str(bad)]) == 1
    err = capsys.readouterr().err
    assert json.loads(err.splitlines()[-1])["error"] == "configuration"


def test_zero_impedance_rejected_for_distflow(tmp_path, case33):
    path = tmp_path / "short.json"
    branches = (replace(case33.branches[0], r=0.0, x=0.0),) + case33.branches[1:]
    path.write_text(emit_native(replace(case33, branches=branches)))
    assert main(["verify", "--case", str(path), "--formulations", "distflow"]) == 1
    # the same case is acceptable to the linear model
    assert main(["dispatch", "--case", str(path), "--formulations", "lindistflow"]) == 0


def test_dispatch_json(capsys, case33):
    assert main(["dispatch", "--formulations", "lindistflow,distflow,acopf"]) == 0
    doc = json.loads(capsys.readouterr().out)["14"]
    assert {v["status"] for v in doc.values()} == {"optimal"}
    # DGs are cheaper than the substation and the linear model sees no losses,
    # so it runs every DG flat out
    for dg in doc["lindistflow"]["dg"]:
        assert dg["p"] == pytest.approx(case33.generators[dg["generator"]].p_max, abs=1e-6)
    assert doc["acopf"]["objective"] == pytest.approx(doc["distflow"]["objective"], abs=1e-5)
    assert [c["bus"] for c in doc["distflow"]["capacitors"]] == [10, 20, 30]


@pytest.fixture(scope="module")
def region_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("region")
    code = main(["region", "--points", "8", "--out", str(out)])
    return code, out


def test_region_exit_and_files(region_run):
    code, out = region_run
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted([f"hour14_{k.value}.csv" for k in K] + ["hour14.svg", "metrics.json"])


def test_region_csv(region_run):
    _, out = region_run
    with (out / "hour14_distflow.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == cli.CSV_COLUMNS
    assert len(rows) == 8
    assert [r["side"] for r in rows] == ["upper"] * 4 + ["lower"] * 4
    assert {r["status"] for r in rows} == {"optimal"}
    assert all(float(r["solve_ms"]) >= 0 and int(r["iterations"]) > 0 for r in rows)


def test_region_metrics(region_run):
    _, out = region_run
    metrics = json.loads((out / "metrics.json").read_text())["14"]
    assert set(metrics) == {k.value for k in K}
    keys = {"area_pu2", "hausdorff_vs_distflow", "sym_diff_vs_distflow", "max_import_p",
            "max_export_p", "total_wall_ms", "failed_bands"}
    assert all(set(m) == keys for m in metrics.values())
    assert metrics["distflow"]["hausdorff_vs_distflow"] <= 1e-12
    assert metrics["socp"]["area_pu2"] >= metrics["distflow"]["area_pu2"]
    assert metrics["acopf"]["failed_bands"] == []


def test_region_svg(region_run):
    _, out = region_run
    root = ET.parse(out / "hour14.svg").getroot()
    assert root.tag == SVG + "svg"
    assert len(root.findall(f"{SVG}polyline")) == 4
    labels = {t.text for t in root.iter(SVG + "text")}
    assert {k.label for k in K} <= labels


def test_metrics_without_distflow_are_null(tmp_path):
    assert main(["region", "--points", "4", "--formulations", "lindistflow",
                 "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())["14"]["lindistflow"]
    assert m["hausdorff_vs_distflow"] is None and m["area_pu2"] > 0


def test_hour_range_writes_one_svg_per_hour(tmp_path):
    assert main(["region", "--points", "4", "--formulations", "lindistflow", "--hours", "12-15",
                 "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.glob("*.svg")) == [f"hour{h}.svg" for h in (12, 13, 14, 15)]
    assert set(json.loads((tmp_path / "metrics.json").read_text())) == {"12", "13", "14", "15"}


@pytest.fixture
def quick_verify(monkeypatch):
    monkeypatch.setattr(cli, "DERIVATIVE_POINTS", 2)
    monkeypatch.setattr(cli, "MC_SAMPLES", 2000)


def test_verify_passes(quick_verify, capsys):
    assert main(["verify", "--points", "40"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 8 and all(line.startswith("PASS") for line in lines)


def test_verify_reports_coarse_polygon(quick_verify, capsys):
    # four bands per side cut off part of the nonconvex region, so some
    # feasible samples fall outside the polygon
    assert main(["verify", "--points", "8"]) == 3
    out = capsys.readouterr().out
    assert "FAIL  oracle containment" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "flexdom", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "region" in proc.stdout
