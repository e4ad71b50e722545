import numpy as np
import pytest

from ensflow import harness
from ensflow.config import (
    ExperimentConfig,
    PRESETS,
    apply_overrides,
    config_to_text,
    desk_fracture,
    paper_scale,
    parse_config_text,
)
from ensflow.grid import build_grid


def tiny_config(**kw):
    cfg = ExperimentConfig()
    cfg.grid.nx = cfg.grid.ny = 8
    cfg.time.dt = 0.002
    cfg.time.T = 0.012  # 6 steps
    cfg.ensf.M = 8
    cfg.ensf.L = 20
    cfg.letkf.M = 8
    cfg.letkf.localization_radius = 2.0
    for key, value in kw.items():
        setattr(cfg, key, value)
    return cfg


# -- config round trip -------------------------------------------------------------


def test_config_text_roundtrip_defaults():
    cfg = ExperimentConfig()
    assert parse_config_text(config_to_text(cfg)) == cfg


def test_config_text_roundtrip_fracture_preset():
    cfg = desk_fracture()
    cfg.ref_perm.segments = [[0.1, 0.1, 0.9, 0.9], [0.5, 0.5, 0.9, 0.1]]
    cfg.ref_perm.regions = [[0.07, 1.5, 0.75]]
    assert parse_config_text(config_to_text(cfg)) == cfg


def test_config_exact_key_names():
    text = config_to_text(ExperimentConfig())
    for key in ("grid.nx=", "ensf.M=", "obs.fraction=", "obs.noise_variance=",
                "seeds.filter=", "filter=ensf", "letkf.inflation="):
        assert key in text


def test_config_overrides_and_errors():
    cfg = apply_overrides(ExperimentConfig(), {"grid.nx": "64", "obs.fraction": "0.25"})
    assert cfg.grid.nx == 64 and cfg.obs.fraction == 0.25
    with pytest.raises(KeyError):
        apply_overrides(ExperimentConfig(), {"grid.nz": "2"})
    with pytest.raises(ValueError):
        parse_config_text("grid.nx\n")


def test_time_section_requires_integer_steps():
    with pytest.raises(ValueError):
        parse_config_text("time.dt=0.003\ntime.T=0.01\n")


def test_paper_scale_switch():
    cfg = paper_scale(ExperimentConfig())
    assert cfg.grid.nx == 64 and cfg.ensf.M == 300 and cfg.ensf.L == 1000
    assert cfg.time.n_steps == 400
    frac = paper_scale(desk_fracture())
    assert frac.time.T == 1.0 and frac.time.n_steps == 400


def test_presets_exist():
    assert set(PRESETS) == {"ex1-saturation-only", "ex-multivar", "ex3-fracture"}
    multi = PRESETS["ex-multivar"]()
    assert multi.obs.variable_tuple() == ("saturation", "velocity", "pressure")
    frac = PRESETS["ex3-fracture"]()
    assert frac.model_perm.fracture_set == "partial"
    assert frac.time.dt == 0.0025


# -- reference bundles -------------------------------------------------------------


def test_generate_reference_shapes_and_persistence(tmp_path):
    cfg = tiny_config()
    ref = harness.generate_reference(cfg, out_dir=tmp_path / "ref")
    assert ref.states.shape == (cfg.time.n_steps + 1, ref.grid.state_dim)
    assert len(ref.observations) == cfg.time.n_steps
    assert (tmp_path / "ref" / "reference.npz").exists()
    assert (tmp_path / "ref" / "perm.csv").exists()
    obs_text = (tmp_path / "ref" / "observations.csv").read_text().splitlines()
    assert obs_text[0] == "step,mask_index,value"
    assert len(obs_text) == 1 + cfg.time.n_steps * ref.spec.n_obs

    loaded = harness.load_reference(tmp_path / "ref", cfg)
    assert np.array_equal(loaded.states, ref.states)
    assert np.array_equal(loaded.permeability, ref.permeability)
    for a, b in zip(loaded.observations, ref.observations):
        assert np.array_equal(a, b)


def test_reference_equals_open_loop_when_models_match(tmp_path):
    cfg = tiny_config()
    cfg.ref_perm = cfg.model_perm.model_copy(deep=True)  # same bumps field
    ref = harness.generate_reference(cfg)
    grid = build_grid(cfg.grid.nx, cfg.grid.ny)
    k = harness.build_permeability(grid, cfg.model_perm)
    states = harness.simulate_trajectory(grid, k, harness.solver_params(cfg), cfg.time.n_steps)
    assert np.array_equal(ref.states, states)


def test_reference_bitwise_reproducible(tmp_path):
    cfg = tiny_config()
    harness.generate_reference(cfg, out_dir=tmp_path / "a")
    harness.generate_reference(cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "perm.csv").read_bytes() == (tmp_path / "b" / "perm.csv").read_bytes()
    assert (tmp_path / "a" / "observations.csv").read_bytes() == (
        tmp_path / "b" / "observations.csv"
    ).read_bytes()


def test_build_permeability_kinds():
    grid = build_grid(16, 16)
    for kind in ("bumps", "bumps_noisy", "fracture", "fracture_noisy"):
        section = ExperimentConfig().ref_perm.model_copy(update={"kind": kind})
        k = harness.build_permeability(grid, section)
        assert k.shape == (grid.n_cells,)
        assert k.min() >= 0.01 and k.max() <= 4.0
    partial = ExperimentConfig().ref_perm.model_copy(
        update={"kind": "fracture", "fracture_set": "partial"}
    )
    full = ExperimentConfig().ref_perm.model_copy(update={"kind": "fracture"})
    assert not np.array_equal(
        harness.build_permeability(grid, partial), harness.build_permeability(grid, full)
    )


# -- runs ---------------------------------------------------------------------------


def test_run_experiment_outputs(tmp_path):
    cfg = tiny_config()
    res = harness.run_experiment(cfg, tmp_path / "run")
    assert res.rmse.shape == (cfg.time.n_steps, 3)
    rmse_lines = (tmp_path / "run" / "rmse.csv").read_text().splitlines()
    assert rmse_lines[0] == "step,time,rmse_s,rmse_p,rmse_u"
    assert len(rmse_lines) == 1 + cfg.time.n_steps
    first = rmse_lines[1].split(",")
    assert first[0] == "1"
    float(first[1])  # %.10e parses
    assert "e" in first[2]

    snaps = sorted(p.name for p in (tmp_path / "run").glob("snapshot_*.csv"))
    assert f"snapshot_{cfg.time.n_steps:04d}.csv" in snaps
    assert "snapshot_0001.csv" in snaps
    body = (tmp_path / "run" / snaps[0]).read_text().splitlines()
    assert body[0] == "i,j,s,p"
    assert len(body) == 1 + cfg.grid.nx * cfg.grid.ny
    faces = (tmp_path / "run" / f"faces_{cfg.time.n_steps:04d}.csv").read_text().splitlines()
    assert faces[0] == "orientation,i,j,flux"
    grid = build_grid(cfg.grid.nx, cfg.grid.ny)
    assert len(faces) == 1 + grid.n_faces

    echo = (tmp_path / "run" / "config.echo").read_text()
    assert parse_config_text(echo) == cfg


def test_run_experiment_byte_identical(tmp_path):
    cfg = tiny_config()
    harness.run_experiment(cfg, tmp_path / "a")
    harness.run_experiment(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "rmse.csv").read_bytes() == (tmp_path / "b" / "rmse.csv").read_bytes()


def test_run_from_config_echo_reproduces(tmp_path):
    cfg = tiny_config()
    harness.run_experiment(cfg, tmp_path / "a")
    echoed = parse_config_text((tmp_path / "a" / "config.echo").read_text())
    harness.run_experiment(echoed, tmp_path / "b")
    assert (tmp_path / "a" / "rmse.csv").read_bytes() == (tmp_path / "b" / "rmse.csv").read_bytes()


def test_run_filter_choices(tmp_path):
    for filt in ("none", "letkf"):
        cfg = tiny_config()
        cfg.filter = filt
        res = harness.run_experiment(cfg, tmp_path / filt)
        assert np.all(np.isfinite(res.rmse))


def test_failed_marker(tmp_path):
    cfg = tiny_config()
    cfg.ref_perm.centers = [[5.0, 5.0]]  # far outside: base field hits the clamp
    cfg.ref_perm.kind = "bumps"
    cfg.solver.linear_tol = -1.0  # invalid, triggers SolverParams error
    with pytest.raises(Exception):
        harness.run_experiment(cfg, tmp_path / "bad")
    assert (tmp_path / "bad" / "FAILED").exists()


def test_vtk_export(tmp_path):
    cfg = tiny_config()
    harness.run_experiment(cfg, tmp_path / "run", vtk=True)
    vtks = list((tmp_path / "run").glob("*.vtk"))
    assert vtks
    head = vtks[0].read_text().splitlines()
    assert head[0] == "# vtk DataFile Version 3.0"
    assert "DATASET STRUCTURED_POINTS" in head[3]


def test_snapshot_steps_layout():
    steps = harness.snapshot_steps(100)
    assert steps[0] == 1 and steps[-1] == 100
    assert len(steps) <= 12
    assert steps == sorted(set(steps))
    assert harness.snapshot_steps(1) == [1]


# -- sweeps and metrics ----------------------------------------------------------------


def test_sweep_rows_and_degenerate_fraction(tmp_path):
    cfg = tiny_config()
    rows = harness.sweep(cfg, [0.0, 1.0], tmp_path, filters=["ensf"])
    assert len(rows) == 2
    text = (tmp_path / "sweep.csv").read_text().splitlines()
    assert text[0] == "fraction,filter,rmse_s,rmse_p,rmse_u"
    assert len(text) == 3
    assert (tmp_path / "f000_ensf" / "rmse.csv").exists()
    assert (tmp_path / "f100_ensf" / "rmse.csv").exists()
    assert (tmp_path / "reference" / "reference.npz").exists()


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = tiny_config()
    harness.sweep(cfg, [0.0, 0.5], tmp_path / "serial", filters=["ensf"], processes=1)
    harness.sweep(cfg, [0.0, 0.5], tmp_path / "par", filters=["ensf"], processes=2)
    assert (tmp_path / "serial" / "sweep.csv").read_bytes() == (
        tmp_path / "par" / "sweep.csv"
    ).read_bytes()
    for sub in ("f000_ensf", "f050_ensf"):
        assert (tmp_path / "serial" / sub / "rmse.csv").read_bytes() == (
            tmp_path / "par" / sub / "rmse.csv"
        ).read_bytes()


def test_moving_detector_ablation(tmp_path):
    cfg = tiny_config()
    cfg.obs.resample_mask_each_step = True
    res = harness.run_experiment(cfg, tmp_path / "moving")
    assert np.all(np.isfinite(res.rmse))
    static = tiny_config()
    static_res = harness.run_experiment(static, tmp_path / "static")
    assert not np.array_equal(res.rmse, static_res.rmse)


def test_metrics_reads_runs(tmp_path):
    cfg = tiny_config()
    res = harness.run_experiment(cfg, tmp_path / "run")
    rows = harness.metrics([tmp_path / "run"], burn_in=2)
    assert rows[0]["rmse_s"] == pytest.approx(res.rmse[2:, 0].mean())
    with pytest.raises(ValueError):
        bad = tmp_path / "bad.csv"
        bad.write_text("nope\n")
        harness.metrics([bad])
