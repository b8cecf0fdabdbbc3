import os

import pandas as pd
import pytest

from chemostat.entity.sweep import SweepAxis
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.experiment import SweepControls
from chemostat.protocol.schemas import DilutionRateNoise
from chemostat.services import output_service, recipe_service
from cli import main

MANIFEST = output_service.MANIFEST_NAME


def test_catalogue_lists_every_figure():
    names = recipe_service.available_recipes()
    for figure in range(9, 22):
        assert f"fig{figure}" in names
    for name in ("stages", "convergence", "simulate-ode", "simulate-sde", "stability", "sweep",
                 "asymptotic", "fokker-planck"):
        assert name in names


def test_unknown_recipe(tmp_path):
    with pytest.raises(ChemostatException) as e:
        recipe_service.run_recipe("fig99", recipe_service.default_config(), out_dir=str(tmp_path))
    assert e.value.error_code == ErrorCode.UNKNOWN_RECIPE
    assert main(["recipe", "fig99", "--out", str(tmp_path)]) == 2
    assert not os.path.exists(tmp_path / "fig99")


def test_config_hash_depends_on_scale():
    config = recipe_service.default_config()
    assert recipe_service.config_hash(config) == recipe_service.config_hash(config.model_copy())
    assert recipe_service.config_hash(config) != recipe_service.config_hash(config, full=True)


def test_stability_command_writes_verified_outputs(tmp_path):
    assert main(["stability", "--out", str(tmp_path / "a")]) == 0
    assert main(["stability", "--out", str(tmp_path / "b")]) == 0
    manifest = tmp_path / "a" / "stability" / MANIFEST
    assert output_service.verify_manifest(str(manifest)) == []
    frame = pd.read_csv(tmp_path / "a" / "stability" / "stability-0.csv")
    assert list(frame["steady_state"])[:3] == ["washout", "y-survivor", "x-survivor"]
    assert (tmp_path / "a" / "stability" / "stability-0.csv").read_bytes() == \
        (tmp_path / "b" / "stability" / "stability-0.csv").read_bytes()


def test_simulate_ode_recipe(tmp_path):
    config = recipe_service.default_config()
    config = config.model_copy(update={"run": config.run.model_copy(update={"t_end": 5.0})})
    manifest = recipe_service.run_recipe("simulate-ode", config, out_dir=str(tmp_path))
    assert [record.path for record in manifest.outputs] == ["simulate-ode/trajectory-0.csv",
                                                            "simulate-ode/trajectory-0.json"]
    frame = pd.read_csv(tmp_path / "simulate-ode" / "trajectory-0.csv")
    assert {"t", "x", "y", "z", "mass"} <= set(frame.columns)
    assert frame["t"].iloc[-1] == pytest.approx(5.0)


def test_sweep_recipe_needs_sweep_section(tmp_path):
    with pytest.raises(ChemostatException) as e:
        recipe_service.run_recipe("sweep", recipe_service.default_config(), out_dir=str(tmp_path))
    assert e.value.error_code == ErrorCode.CONFIG_ERROR
    assert e.value.message.startswith("recipe sweep:")


def test_cli_rejects_bad_config(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(
        "schema_version: 1\nmodel:\n  theta: 1.0\n  z_f: 0.5\n"
        "  curve_x: {a: 2.0, b: 1.0}\n  curve_y: {a: 1.5, b: 0.5}\n"
    )
    assert main(["simulate-ode", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert main(["stability", "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_cli_writes_run_log(tmp_path):
    log_file = tmp_path / "run.log"
    assert main(["stability", "--out", str(tmp_path), "--log-file", str(log_file), "--log-level", "DEBUG"]) == 0
    assert "stability" in log_file.read_text()


def test_simulate_sde_recipe_writes_summary_and_events(tmp_path):
    config = recipe_service.default_config()
    config = config.model_copy(update={
        "model": config.model.model_copy(update={"noise": DilutionRateNoise(sigma=0.001)}),
        "run": config.run.model_copy(update={"t_end": 0.5, "n_paths": 3, "record_every": 50}),
    })
    manifest = recipe_service.run_recipe("simulate-sde", config, out_dir=str(tmp_path))
    paths = [record.path for record in manifest.outputs]
    for name in ("ensemble-0.csv", "summary-0.csv", "events-0.csv", "tally-0.csv"):
        assert f"simulate-sde/{name}" in paths
    summary = pd.read_csv(tmp_path / "simulate-sde" / "summary-0.csv")
    assert list(summary.columns) == ["t", "mean_x", "q05_x", "q95_x", "mean_y", "q05_y", "q95_y",
                                     "mean_z", "q05_z", "q95_z"]
    assert len(summary) == 11
    assert (summary["q05_x"] <= summary["q95_x"]).all()
    events = pd.read_csv(tmp_path / "simulate-sde" / "events-0.csv")
    assert list(events.columns) == ["path", "population", "t_extinct"]


def test_sweep_recipe_columns(tmp_path):
    config = recipe_service.default_config().model_copy(update={
        "sweep": SweepControls(axis1=SweepAxis(name="theta", values=[0.98, 1.02]),
                               axis2=SweepAxis(name="curve_y.gamma", values=[0.0]), t_end=20.0),
    })
    recipe_service.run_recipe("sweep", config, out_dir=str(tmp_path))
    frame = pd.read_csv(tmp_path / "sweep" / "survivors-0.csv")
    assert list(frame.columns) == ["param1", "param2", "survivor_label", "final_x", "final_y", "final_z",
                                   "error"]
    assert list(frame["param1"]) == [0.98, 1.02]
    assert (tmp_path / "sweep" / "survivors-0.json").exists()


def test_stages_recipe_writes_stage_trajectory(tmp_path):
    config = recipe_service.default_config()
    config = config.model_copy(update={
        "asymptotic": config.asymptotic.model_copy(update={"z_f_ladder": [1e3], "stage5_horizon": 5.0}),
    })
    recipe_service.run_recipe("stages", config, out_dir=str(tmp_path))
    frame = pd.read_csv(tmp_path / "stages" / "stage-trajectory-0.csv")
    assert list(frame.columns) == ["stage", "t", "x", "y", "z"]
    assert list(frame["stage"].unique()) == ["stage1", "stage2", "stage3", "stage4", "stage5"]
