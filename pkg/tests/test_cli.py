import json

import pytest

from nsgeo import io
from nsgeo.cli import main

from conftest import CONFIGS, DATA

OBS = str(DATA / "synthetic_observations.csv")
GRID = str(DATA / "synthetic_grid.csv")


def parameter_rows(stdout):
    lines = stdout.strip().splitlines()
    assert lines[0].startswith("Parameter")
    return [ln for ln in lines[1:] if not ln.startswith(("loglik", "AIC", "BIC", "#"))]


def fast_config(tmp_path, name, **fit):
    d = json.loads((CONFIGS / name).read_text())
    d["fit"] = {**d.get("fit", {}), "restarts": 1, **fit}
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def study_config(tmp_path, **study):
    d = json.loads((CONFIGS / "replica_study.json").read_text())
    d["study"].update(study)
    p = tmp_path / "study.json"
    p.write_text(json.dumps(d))
    return str(p)


def test_fit_stationary_has_8_rows(tmp_path, capsys):
    cfg = fast_config(tmp_path, "mozambique_stationary.json")
    assert main(["fit", "--config", cfg, "--data", OBS, "--out", str(tmp_path / "o")]) == 0
    assert len(parameter_rows(capsys.readouterr().out)) == 8
    doc = json.loads((tmp_path / "o" / "fit.json").read_text())
    assert doc["k"] == 8 and doc["converged"] is True
    assert doc["config"]["fit"]["restarts"] == 1


def test_fit_partial_sum_has_10_rows(tmp_path, capsys):
    cfg = fast_config(tmp_path, "mozambique_partial_sum.json")
    code = main(["fit", "--config", cfg, "--data", OBS, "--out", str(tmp_path / "o")])
    assert code in (0, 3)
    assert len(parameter_rows(capsys.readouterr().out)) == 10
    assert json.loads((tmp_path / "o" / "fit.json").read_text())["k"] == 10


def test_fit_rerun_identical(tmp_path):
    cfg = fast_config(tmp_path, "mozambique_stationary.json", restarts=3)
    for out in ("a", "b"):
        main(["fit", "--config", cfg, "--data", OBS, "--out", str(tmp_path / out), "--seed", "5"])
    assert (tmp_path / "a" / "fit.json").read_bytes() == (tmp_path / "b" / "fit.json").read_bytes()
    assert json.loads((tmp_path / "a" / "fit.json").read_text())["seed"] == 5


def test_non_convergence_exit_3_still_writes(tmp_path):
    cfg = fast_config(tmp_path, "mozambique_stationary.json", max_iter=1, grad_tol=1e-12)
    assert main(["fit", "--config", cfg, "--data", OBS, "--out", str(tmp_path)]) == 3
    assert json.loads((tmp_path / "fit.json").read_text())["converged"] is False


def test_usage_and_data_errors_exit_2(tmp_path, capsys):
    cfg = fast_config(tmp_path, "mozambique_stationary.json")
    assert main(["fit"]) == 2
    assert main(["bogus"]) == 2
    assert main(["fit", "--config", str(tmp_path / "none.json"), "--data", OBS]) == 2
    assert main(["fit", "--config", cfg, "--data", str(tmp_path / "none.csv")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": "nonstat-geo/v1", "model": {"form": "triangle"}}')
    assert main(["fit", "--config", str(bad), "--data", OBS]) == 2
    short = tmp_path / "short.csv"
    short.write_text("lon,lat,positive,examined\n0,0,1,5\n")
    assert main(["fit", "--config", cfg, "--data", str(short)]) == 2
    assert "error:" in capsys.readouterr().err


def test_config_file_supplies_paths(tmp_path):
    d = json.loads((CONFIGS / "mozambique_stationary.json").read_text())
    d["fit"]["restarts"] = 1
    d["data"] = {"path": OBS, "grid": GRID}
    d["run"] = {"out": str(tmp_path / "o"), "threads": 2}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    assert main(["predict", "--config", str(p)]) == 0
    rows = io.read_csv_rows(tmp_path / "o" / "predictions.csv")
    assert len(rows) == 144
    assert list(rows[0]) == ["lon", "lat", "mean", "sd_Y", "sd_S", "lower95", "upper95"]


def test_predict_reuses_fit(tmp_path):
    cfg = fast_config(tmp_path, "mozambique_stationary.json")
    assert main(["predict", "--config", cfg, "--data", OBS, "--grid", GRID, "--out", str(tmp_path / "a")]) == 0
    assert main(["predict", "--config", cfg, "--data", OBS, "--grid", GRID, "--out", str(tmp_path / "b"),
                 "--fit", str(tmp_path / "a" / "fit.json"), "--threads", "3"]) == 0
    assert (tmp_path / "a" / "predictions.csv").read_bytes() == (tmp_path / "b" / "predictions.csv").read_bytes()
    assert (tmp_path / "a" / "predict_config.json").exists()


def test_compare_identical_configs(tmp_path, capsys):
    cfg = fast_config(tmp_path, "mozambique_stationary.json")
    assert main(["compare", "--config", cfg, "--config", cfg, "--data", OBS, "--out", str(tmp_path)]) == 0
    rows = io.read_csv_rows(tmp_path / "compare.csv")
    assert len(rows) == 2 and rows[0]["aic"] == rows[1]["aic"]
    assert main(["compare", "--config", cfg, "--data", OBS]) == 2


def test_compare_nesting(tmp_path):
    stat = fast_config(tmp_path, "mozambique_stationary.json")
    ns = fast_config(tmp_path, "mozambique_partial_sum.json")
    assert main(["compare", "--config", stat, "--config", ns, "--data", OBS, "--out", str(tmp_path)]) == 0
    rows = {r["label"]: r for r in io.read_csv_rows(tmp_path / "compare.csv")}
    assert float(rows["partial_sum_altitude_temperature"]["loglik"]) >= float(rows["stationary"]["loglik"]) - 1e-4
    assert [float(r["aic"]) for r in io.read_csv_rows(tmp_path / "compare.csv")] == \
        sorted(float(r["aic"]) for r in rows.values())


def test_simulate_dumps_dataset(tmp_path, capsys):
    cfg = study_config(tmp_path, n=30, heldout_m=4)
    assert main(["simulate", "--config", cfg, "--scenario", "scenario_2", "--replicate", "3",
                 "--out", str(tmp_path)]) == 0
    assert len(io.read_csv_rows(tmp_path / "observations.csv")) == 30
    assert len(io.read_csv_rows(tmp_path / "heldout.csv")) == 4
    assert main(["simulate", "--config", cfg, "--scenario", "nope"]) == 2


def test_smoke_study_writes_both_tables(tmp_path, capsys):
    assert main(["study", "--config", str(CONFIGS / "smoke_study.json"), "--out", str(tmp_path),
                 "--threads", "1"]) == 0
    err = capsys.readouterr().err
    assert err.count("replicates used") == 9
    assert len(io.read_csv_rows(tmp_path / "study_parameters.csv")) == 63
    assert len(io.read_csv_rows(tmp_path / "study_prediction.csv")) == 9
    resolved = json.loads((tmp_path / "study_config.json").read_text())
    assert resolved["study"]["B"] == 2


def test_study_parallel_matches_serial(tmp_path):
    cfg = study_config(tmp_path, n=25, B=2, heldout_m=5)
    for t in ("1", "8"):
        assert main(["study", "--config", cfg, "--out", str(tmp_path / t), "--threads", t]) == 0
    for f in ("study_parameters.csv", "study_prediction.csv", "study_config.json"):
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "8" / f).read_bytes()


def test_replica_config_shape(tmp_path):
    cfg = study_config(tmp_path, n=25, B=1, heldout_m=5)
    assert main(["study", "--config", cfg, "--out", str(tmp_path), "--threads", "1"]) == 0
    pred = io.read_csv_rows(tmp_path / "study_prediction.csv")
    cells = {(r["scenario"], r["model"]) for r in pred}
    assert len(cells) == 9
    assert {s for s, _ in cells} == {"scenario_1", "scenario_2", "scenario_3"}


def test_study_seed_override(tmp_path):
    cfg = study_config(tmp_path, n=20, B=1, heldout_m=3, fit_forms=["product"])
    main(["study", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["study", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
    a = (tmp_path / "a" / "study_parameters.csv").read_text()
    b = (tmp_path / "b" / "study_parameters.csv").read_text()
    assert a != b
    assert json.loads((tmp_path / "a" / "study_config.json").read_text())["study"]["master_seed"] == 1
