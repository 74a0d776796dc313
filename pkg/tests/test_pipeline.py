import dataclasses
import json

import numpy as np
import pytest

from condgpc.grids import Field
from condgpc.pipeline import (
    ExperimentConfig,
    PipelineError,
    SamplerConfig,
    compare_strategies,
    presets,
    run_pipeline,
)


def tiny_config(**overrides):
    """Small 1D setup that runs the full pipeline in a couple of seconds."""
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
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(kappa_obs_strategy="clustered")
    with pytest.raises(ValueError):
        tiny_config(u_obs_strategy="greedy")
    with pytest.raises(ValueError):
        tiny_config(kappa_obs_count=0)
    with pytest.raises(ValueError):
        tiny_config(n_modes=6, energy=0.95)
    with pytest.raises(ValueError):
        tiny_config(kernel="matern")
    with pytest.raises(ValueError):
        tiny_config(problem="3d")


def test_config_roundtrip_rejects_unknown_keys(tmp_path):
    cfg = tiny_config()
    path = tmp_path / "config.json"
    cfg.save(path)
    assert ExperimentConfig.load(path) == cfg
    blob = json.loads(path.read_text())
    blob["typo_field"] = 1
    path.write_text(json.dumps(blob))
    with pytest.raises(ValueError, match="typo_field"):
        ExperimentConfig.load(path)


def test_presets_match_documented_settings():
    table = presets()
    assert set(table) == {
        "1d-case1",
        "1d-case2",
        "1d-case3",
        "2d-smooth-case1",
        "2d-smooth-case2",
        "2d-rough-case1",
        "2d-rough-case2",
        "1d-demo",
    }
    c2 = table["1d-case2"]
    assert c2.kernel_length == 0.05
    assert c2.grid_counts == (257,)
    assert c2.kappa_obs_count == 20
    assert c2.kappa_obs_strategy == "uniform"
    assert c2.u_obs_count == 6
    s1 = table["2d-smooth-case1"]
    assert s1.extents == ((0.0, 240.0), (0.0, 60.0))
    assert s1.grid_counts == (80, 20)
    assert s1.n_modes == 25
    assert s1.kappa_obs_count == 20
    assert s1.kappa_obs_strategy == "random"
    assert s1.u_obs_count == 10
    r2 = table["2d-rough-case2"]
    assert r2.grid_counts == (128, 64)
    assert r2.kappa_obs_count == 205
    assert r2.kappa_obs_critical == 50
    assert r2.n_modes == 210
    seeds = [cfg.seed for cfg in table.values()]
    assert len(set(seeds)) == len(seeds)


def test_report_byte_identical_across_reruns(tmp_path):
    cfg = tiny_config()
    run_pipeline(cfg, tmp_path / "a")
    run_pipeline(cfg, tmp_path / "b")
    assert (tmp_path / "a/report.json").read_bytes() == (
        tmp_path / "b/report.json"
    ).read_bytes()
    assert (tmp_path / "a/kappa_estimate.csv").read_bytes() == (
        tmp_path / "b/kappa_estimate.csv"
    ).read_bytes()


def test_sampler_seed_changes_only_inference(tmp_path):
    cfg = tiny_config()
    run_pipeline(cfg, tmp_path / "a")
    run_pipeline(dataclasses.replace(cfg, sampler_seed=999), tmp_path / "b")
    for name in ("reference_kappa.csv", "kappa_observations.csv", "u_observations.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    a = json.loads((tmp_path / "a/report.json").read_text())
    b = json.loads((tmp_path / "b/report.json").read_text())
    assert a["map_log_posterior"] != b["map_log_posterior"]


def test_report_reproducible_from_artifacts(tmp_path):
    cfg = tiny_config()
    report = run_pipeline(cfg, tmp_path)
    grid = cfg.build_grid()
    ref = Field.from_csv(tmp_path / "reference_kappa.csv", grid)
    est = Field.from_csv(tmp_path / "kappa_estimate.csv", grid)
    err = Field.from_csv(tmp_path / "error.csv", grid)
    recomputed = np.abs(est.values - ref.values) / np.abs(ref.values)
    assert np.array_equal(err.values, recomputed)
    assert report["error_linf"] == recomputed.max()


def test_exact_match_at_kappa_observations(tmp_path):
    cfg = tiny_config()
    report = run_pipeline(cfg, tmp_path)
    assert report["kappa_obs_max_relative_mismatch"] <= 1e-8


def test_degenerate_deterministic_field(tmp_path):
    cfg = tiny_config(std_kappa=0.0)
    report = run_pipeline(cfg, tmp_path)
    assert report["error_linf"] == 0.0
    assert report["error_l2"] == 0.0
    est = Field.from_csv(tmp_path / "kappa_estimate.csv", cfg.build_grid())
    assert np.allclose(est.values, cfg.mean_kappa, rtol=1e-12)


def test_pipeline_error_names_stage(tmp_path):
    cfg = tiny_config(u_obs_count=200)  # more state observations than grid points
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, tmp_path)
    assert info.value.stage in ("place", "u-observations")
    assert info.value.stage in str(info.value)


def test_stage_timings_recorded(tmp_path):
    report = run_pipeline(tiny_config(), tmp_path)
    timings = json.loads((tmp_path / "timings.json").read_text())
    for stage in ("kl", "condition", "surrogate", "mcmc", "map", "error"):
        assert stage in timings and timings[stage] >= 0.0
    assert report["timings"] == timings
    # report.json itself stays byte-stable, so wall times live next to it
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert "timings" not in on_disk


def test_compare_strategies_shares_reference(tmp_path):
    cfg = tiny_config()
    table = compare_strategies(cfg, ["variance", "uniform"], [0, 1], tmp_path)
    for seed in (0, 1):
        a = (tmp_path / f"seed{seed}-variance/reference_kappa.csv").read_bytes()
        b = (tmp_path / f"seed{seed}-uniform/reference_kappa.csv").read_bytes()
        assert a == b
    assert set(table["medians"]) == {"variance", "uniform"}
    for strat, per_seed in table["per_seed"].items():
        assert set(per_seed) == {0, 1}
        linf = [per_seed[s][0] for s in (0, 1)]
        assert table["medians"][strat][0] == pytest.approx(np.median(linf))
    lines = (tmp_path / "comparison.csv").read_text().splitlines()
    assert lines[0] == "strategy,seed,error_linf,error_l2"
    assert len(lines) == 1 + 2 * 2 + 2  # header, per-seed rows, median rows


def test_compare_duplicate_strategy_identical_columns(tmp_path):
    cfg = tiny_config()
    table = compare_strategies(cfg, ["uniform"], [3], tmp_path / "x")
    table2 = compare_strategies(cfg, ["uniform"], [3], tmp_path / "y")
    assert table["per_seed"]["uniform"][3] == table2["per_seed"]["uniform"][3]
