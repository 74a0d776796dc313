import json

import numpy as np

from condgpc.cli import main
from condgpc.pipeline import ExperimentConfig, SamplerConfig


def write_tiny_config(path, **overrides):
    base = dict(
        problem="1d",
        extents=((0.0, 1.0),),
        grid_counts=(33,),
        kernel="squared-exponential",
        kernel_length=0.2,
        n_modes=6,
        kappa_obs_count=4,
        u_obs_count=3,
        boundary={"left": 0.0, "right": 2.0, "bottom_flux": 0.0, "top_flux": 0.0},
        sampler=SamplerConfig(chains=6, iterations=1500, burn_in=500),
        seed=13,
    )
    base.update(overrides)
    cfg = ExperimentConfig(**base)
    cfg.save(path)
    return cfg


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("1d-case1", "1d-case2", "1d-case3", "2d-smooth-case1", "2d-rough-case2"):
        assert name in out


def test_presets_json(capsys):
    assert main(["presets", "--preset", "1d-demo"]) == 0
    blob = json.loads(capsys.readouterr().out)
    assert blob["grid_counts"] == [65]
    assert blob["seed"] == 7


def test_run_subcommand(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    write_tiny_config(cfg_path)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["kappa_obs_max_relative_mismatch"] <= 1e-8
    assert "relative error" in capsys.readouterr().out


def test_seed_override_applies(tmp_path):
    cfg_path = tmp_path / "config.json"
    write_tiny_config(cfg_path)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg_path), "--seed", "21", "--out", str(out)]) == 0
    saved = json.loads((out / "config.json").read_text())
    assert saved["seed"] == 21


def test_stagewise_matches_monolithic(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    write_tiny_config(cfg_path)
    mono = tmp_path / "mono"
    assert main(["run", "--config", str(cfg_path), "--out", str(mono)]) == 0

    staged = tmp_path / "staged"
    for stage in ("kl", "condition", "surrogate", "place", "infer"):
        assert main([stage, "--config", str(cfg_path), "--out", str(staged)]) == 0
    capsys.readouterr()

    a = json.loads((mono / "report.json").read_text())
    staged_est = np.genfromtxt(staged / "kappa_estimate.csv", delimiter=",", skip_header=1)
    mono_est = np.genfromtxt(mono / "kappa_estimate.csv", delimiter=",", skip_header=1)
    assert np.array_equal(staged_est, mono_est)
    assert a["error_linf"] > 0.0


def test_place_strategy_override(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    write_tiny_config(cfg_path)
    out = tmp_path / "w"
    assert main(["place", "--config", str(cfg_path), "--out", str(out),
                 "--strategy", "uniform"]) == 0
    lines = (out / "u_locations.csv").read_text().splitlines()
    assert lines[0] == "x1"
    assert len(lines) == 4
    assert "placed 3" in capsys.readouterr().out


def test_compare_subcommand(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    write_tiny_config(cfg_path)
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(cfg_path), "--out", str(out),
                 "--strategy", "variance,uniform", "--seeds", "0,1",
                 "--threads", "2"]) == 0
    lines = (out / "comparison.csv").read_text().splitlines()
    assert lines[0] == "strategy,seed,error_linf,error_l2"
    assert len(lines) == 7
    assert "median" in capsys.readouterr().out.lower()


def test_missing_config_fails_with_stage(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o")]) != 0
    assert "error in stage" in capsys.readouterr().err


def test_unknown_preset_fails(capsys):
    assert main(["run", "--preset", "9d-case1", "--out", "/tmp/never"]) != 0
    assert "error in stage" in capsys.readouterr().err


def test_failing_stage_named(tmp_path, capsys):
    cfg_path = tmp_path / "config.json"
    write_tiny_config(cfg_path, u_obs_count=200)
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) != 0
    err = capsys.readouterr().err
    assert "error in stage" in err
