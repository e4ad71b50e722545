"""Experiment orchestration: twin-experiment reference synthesis, filter runs,
observation-fraction sweeps, metrics, and all file formats.

A run directory contains:

* ``config.echo``      the fully resolved flat config (re-runnable as-is);
* ``rmse.csv``         header ``step,time,rmse_s,rmse_p,rmse_u``, one row per
                       assimilation step, values in ``%.10e``;
* ``snapshot_NNNN.csv``/``faces_NNNN.csv``  cell fields (``i,j,s,p``) and face
                       fluxes (``orientation,i,j,flux``) at the snapshot steps;
* ``perm_model.csv``   the forward-model permeability (``i,j,k``);
* optional ``*.vtk``   legacy STRUCTURED_POINTS exports;
* ``FAILED``           marker with the error message when a run aborts.

Reference bundles hold the truth trajectory (``reference.npz``), the noisy
permeability (``perm.csv``) and the emitted observations
(``observations.csv``: ``step,mask_index,value``).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, fields, rng
from .config import ExperimentConfig, PermeabilitySection, config_to_text
from .ensf import (
    Ensemble,
    FilterConfig,
    FilterResult,
    make_initial_ensemble,
    run_filter,
)
from .fem import SolverParams, StateVector, state_slices
from .fem import step as fem_step
from .grid import Grid, build_grid
from .letkf import LetkfConfig, run_letkf
from .observation import ObservationSpec, make_mask, observe

FLOAT_FMT = "%.10e"


# -- field construction ------------------------------------------------------------


def build_permeability(grid: Grid, section: PermeabilitySection) -> np.ndarray:
    """Materialize one permeability field from its config section."""
    if section.kind in ("bumps", "bumps_noisy"):
        if section.centers is not None:
            centers = np.asarray(section.centers, float)
        else:
            centers = fields.draw_centers(
                section.n_centers, rng.seed_sequence(section.seed, "centers")
            )
        base = fields.base_permeability(grid, centers)
        if section.kind == "bumps":
            return base
        regions = fields.build_noise_regions(
            grid,
            regions=section.regions or fields.EXAMPLE1_REGIONS,
            seed=rng.seed_sequence(section.seed, "regions"),
            noise_is_std=section.noise_is_std,
        )
        return fields.noisy_permeability(base, regions)

    if section.segments is not None:
        segments = [((s[0], s[1]), (s[2], s[3])) for s in section.segments]
    elif section.fracture_set == "partial":
        segments = fields.partial_fracture_segments()
    else:
        segments = fields.default_fracture_segments()
    regions = None
    if section.kind == "fracture_noisy":
        regions = fields.build_noise_regions(
            grid,
            regions=section.regions or fields.FRACTURE_REGIONS,
            seed=rng.seed_sequence(section.seed, "regions"),
            noise_is_std=section.noise_is_std,
        )
    return fields.fracture_permeability(grid, segments, regions)


def solver_params(cfg: ExperimentConfig) -> SolverParams:
    return SolverParams(
        mu=cfg.solver.mu,
        dt=cfg.time.dt,
        linear_tol=cfg.solver.linear_tol,
        clamp_saturation=cfg.solver.clamp_saturation,
        cfl_check=cfg.solver.cfl_check,
    )


def observation_spec(cfg: ExperimentConfig, grid: Grid, mask_seed=None) -> ObservationSpec:
    return make_mask(
        grid,
        variables=cfg.obs.variable_tuple(),
        fraction=cfg.obs.fraction,
        seed=mask_seed if mask_seed is not None else cfg.seeds.mask,
        nonlinearity=cfg.obs.nonlinearity,
        noise_variance=cfg.obs.noise_variance,
    )


# -- reference trajectories ----------------------------------------------------------


@dataclass
class ReferenceTrajectory:
    """Synthetic truth: the state sequence, the permeability that made it,
    and the observation sequence emitted through the configured detectors."""

    grid: Grid
    states: np.ndarray  # (N+1, dim)
    permeability: np.ndarray
    spec: ObservationSpec
    observations: list[np.ndarray]


def simulate_trajectory(
    grid: Grid,
    permeability: np.ndarray,
    params: SolverParams,
    n_steps: int,
    s0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Open-loop forward run; states[0] holds the initial condition with zero
    velocity and pressure, states[n] the solution after n IMPES steps."""
    state = StateVector.zeros(grid)
    if s0 is not None:
        state = StateVector(grid, np.asarray(s0, float).copy(), state.u, state.p)
    out = np.empty((n_steps + 1, grid.state_dim))
    out[0] = state.flatten()
    for n in range(n_steps):
        state = fem_step(state, permeability, params)
        out[n + 1] = state.flatten()
    return out


def make_observations(
    states: np.ndarray, spec: ObservationSpec, noise_seed
) -> list[np.ndarray]:
    """Per-step observation vectors of a trajectory (states[1..N])."""
    return [
        observe(states[n], spec, rng.seed_sequence(noise_seed, "t", n))
        for n in range(1, states.shape[0])
    ]


def generate_reference(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> ReferenceTrajectory:
    """Twin-experiment truth: noisy permeability, zero initial saturation."""
    grid = build_grid(cfg.grid.nx, cfg.grid.ny)
    k_ref = build_permeability(grid, cfg.ref_perm)
    params = solver_params(cfg)
    states = simulate_trajectory(grid, k_ref, params, cfg.time.n_steps)
    spec = observation_spec(cfg, grid)
    obs = make_observations(states, spec, cfg.seeds.noise)
    ref = ReferenceTrajectory(grid, states, k_ref, spec, obs)
    if out_dir is not None:
        save_reference(ref, Path(out_dir), cfg)
    return ref


def save_reference(ref: ReferenceTrajectory, out_dir: Path, cfg: ExperimentConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        out_dir / "reference.npz", states=ref.states, permeability=ref.permeability
    )
    write_cell_csv(out_dir / "perm.csv", ref.grid, {"k": ref.permeability})
    write_observations_csv(out_dir / "observations.csv", ref.observations, ref.spec)
    (out_dir / "config.echo").write_text(
        config_to_text(cfg, header=f"ensflow {__version__} reference"), encoding="utf-8"
    )


def load_reference(ref_dir: Path, cfg: ExperimentConfig) -> ReferenceTrajectory:
    grid = build_grid(cfg.grid.nx, cfg.grid.ny)
    data = np.load(Path(ref_dir) / "reference.npz")
    spec = observation_spec(cfg, grid)
    states = data["states"]
    obs = make_observations(states, spec, cfg.seeds.noise)
    return ReferenceTrajectory(grid, states, data["permeability"], spec, obs)


# -- CSV / VTK writers ----------------------------------------------------------------


def write_cell_csv(path: Path, grid: Grid, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("i,j," + ",".join(names) + "\n")
        cols = [np.asarray(columns[n], float).reshape(grid.ny, grid.nx) for n in names]
        for j in range(grid.ny):
            for i in range(grid.nx):
                vals = ",".join(FLOAT_FMT % c[j, i] for c in cols)
                fh.write(f"{i},{j},{vals}\n")


def write_faces_csv(path: Path, grid: Grid, flux: np.ndarray) -> None:
    ux = flux[: grid.n_xfaces].reshape(grid.ny, grid.nx + 1)
    uy = flux[grid.n_xfaces :].reshape(grid.ny + 1, grid.nx)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("orientation,i,j,flux\n")
        for j in range(grid.ny):
            for i in range(grid.nx + 1):
                fh.write(f"x,{i},{j},{FLOAT_FMT % ux[j, i]}\n")
        for j in range(grid.ny + 1):
            for i in range(grid.nx):
                fh.write(f"y,{i},{j},{FLOAT_FMT % uy[j, i]}\n")


def write_observations_csv(path: Path, observations: Sequence[np.ndarray], spec: ObservationSpec) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,mask_index,value\n")
        for n, y in enumerate(observations, start=1):
            for idx, val in zip(spec.mask, y):
                fh.write(f"{n},{int(idx)},{FLOAT_FMT % val}\n")


def write_rmse_csv(path: Path, times: np.ndarray, errs: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,time,rmse_s,rmse_p,rmse_u\n")
        for n in range(len(times)):
            fh.write(
                f"{n + 1},{FLOAT_FMT % times[n]},"
                f"{FLOAT_FMT % errs[n, 0]},{FLOAT_FMT % errs[n, 1]},{FLOAT_FMT % errs[n, 2]}\n"
            )


def read_rmse_csv(path: Path) -> np.ndarray:
    """(N, 5) array of step,time,rmse_s,rmse_p,rmse_u."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "step,time,rmse_s,rmse_p,rmse_u":
            raise ValueError(f"{path}: unexpected rmse.csv header {header!r}")
        for line in fh:
            if line.strip():
                rows.append([float(x) for x in line.split(",")])
    return np.asarray(rows)


def write_vtk(path: Path, grid: Grid, columns: dict[str, np.ndarray], title: str = "ensflow fields") -> None:
    """Legacy STRUCTURED_POINTS ASCII export of cell fields."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title + "\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} 1\n")
        fh.write("ORIGIN 0 0 0\n")
        fh.write(f"SPACING {grid.hx!r} {grid.hy!r} 1\n")
        fh.write(f"CELL_DATA {grid.n_cells}\n")
        for name, values in columns.items():
            fh.write(f"SCALARS {name} float 1\nLOOKUP_TABLE default\n")
            for v in np.asarray(values, float).ravel():
                fh.write(FLOAT_FMT % v + "\n")


# -- experiment drivers -----------------------------------------------------------------


def snapshot_steps(n_steps: int, n_interior: int = 10) -> list[int]:
    """First step, up to n_interior evenly spaced steps, last step."""
    if n_steps <= 1:
        return [n_steps]
    marks = {1, n_steps}
    for k in range(1, n_interior + 1):
        marks.add(max(1, round(k * n_steps / (n_interior + 1))))
    return sorted(marks)


@dataclass
class RunResult:
    """Outcome of one experiment run."""

    config: ExperimentConfig
    out_dir: Optional[Path]
    times: np.ndarray
    rmse: np.ndarray  # (N, 3) saturation/pressure/velocity vs the reference
    wall_time: float
    estimates: Optional[np.ndarray] = None

    def time_averaged_rmse(self, burn_in: int = 0) -> np.ndarray:
        return self.rmse[burn_in:].mean(axis=0)


def _open_loop_estimates(cfg: ExperimentConfig, grid: Grid, k_model: np.ndarray) -> np.ndarray:
    s0 = fields.perturbed_initial_saturation(
        grid, cfg.ic.mode, cfg.ic.variance, rng.seed_sequence(cfg.seeds.model_ic, "init-member", 0)
    )
    states = simulate_trajectory(grid, k_model, solver_params(cfg), cfg.time.n_steps, s0=s0)
    return states[1:]


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Optional[Path] = None,
    reference: Optional[ReferenceTrajectory] = None,
    mask_seed=None,
    vtk: bool = False,
    keep_estimates: bool = False,
) -> RunResult:
    """Execute one {none | ensf | letkf} run against a (shared or fresh)
    reference and write the result bundle."""
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    try:
        result = _run_experiment_inner(cfg, out_path, reference, mask_seed, vtk, keep_estimates)
    except Exception as exc:
        if out_path is not None:
            (out_path / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    return result


def _run_experiment_inner(cfg, out_path, reference, mask_seed, vtk, keep_estimates):
    grid = build_grid(cfg.grid.nx, cfg.grid.ny)
    params = solver_params(cfg)
    if reference is None:
        reference = generate_reference(cfg)
    if reference.grid != grid:
        raise ValueError("reference was generated on a different grid")
    k_model = build_permeability(grid, cfg.model_perm)

    # observations always derive from the run's own detector spec so sweeps can
    # share reference states while varying masks
    if cfg.obs.resample_mask_each_step:
        base = mask_seed if mask_seed is not None else cfg.seeds.mask
        spec = [
            observation_spec(cfg, grid, mask_seed=rng.seed_sequence(base, "resample", n))
            for n in range(1, cfg.time.n_steps + 1)
        ]
        observations = [
            observe(reference.states[n], spec[n - 1], rng.seed_sequence(cfg.seeds.noise, "t", n))
            for n in range(1, cfg.time.n_steps + 1)
        ]
    else:
        spec = observation_spec(cfg, grid, mask_seed=mask_seed)
        observations = make_observations(reference.states, spec, cfg.seeds.noise)

    slices = state_slices(grid)
    t0 = time.perf_counter()
    estimates: np.ndarray
    if cfg.filter == "none":
        estimates = _open_loop_estimates(cfg, grid, k_model)
        errs = np.empty((cfg.time.n_steps, 3))
        for n in range(cfg.time.n_steps):
            diff = estimates[n] - reference.states[n + 1]
            errs[n, 0] = np.sqrt(np.mean(diff[slices["saturation"]] ** 2))
            errs[n, 1] = np.sqrt(np.mean(diff[slices["pressure"]] ** 2))
            errs[n, 2] = np.sqrt(np.mean(diff[slices["velocity"]] ** 2))
        times = params.dt * (np.arange(cfg.time.n_steps) + 1)
        fresult = FilterResult(estimates, times, errs, time.perf_counter() - t0, None)
    else:
        ens = make_initial_ensemble(
            grid,
            cfg.ensf.M if cfg.filter == "ensf" else cfg.letkf.M,
            cfg.seeds.model_ic,
            ic_mode=cfg.ic.mode,
            ic_variance=cfg.ic.variance,
        )
        if cfg.filter == "ensf":
            fcfg = FilterConfig(
                M=cfg.ensf.M,
                L=cfg.ensf.L,
                J=cfg.ensf.J,
                eps=cfg.ensf.eps,
                damping=cfg.ensf.damping,
                stride=cfg.stride,
                likelihood_integration=cfg.ensf.likelihood_integration,
                dtype=cfg.ensf.dtype,
            )
            fresult = run_filter(
                ens, observations, k_model, params, fcfg, spec,
                cfg.seeds.filter, reference=reference.states,
            )
        else:
            lcfg = LetkfConfig(
                M=cfg.letkf.M,
                localization_radius=cfg.letkf.localization_radius,
                inflation=cfg.letkf.inflation,
                r=cfg.obs.noise_variance,
                dtype=cfg.letkf.dtype,
            )
            fresult = run_letkf(
                ens, observations, k_model, params, lcfg, spec,
                reference=reference.states,
            )
        estimates = fresult.estimates

    if out_path is not None:
        (out_path / "config.echo").write_text(
            config_to_text(cfg, header=f"ensflow {__version__}"), encoding="utf-8"
        )
        write_rmse_csv(out_path / "rmse.csv", fresult.times, fresult.rmse)
        write_cell_csv(out_path / "perm_model.csv", grid, {"k": k_model})
        for step_no in snapshot_steps(cfg.time.n_steps):
            est = estimates[step_no - 1]
            tag = f"{step_no:04d}"
            cell_cols = {
                "s": est[slices["saturation"]],
                "p": est[slices["pressure"]],
            }
            write_cell_csv(out_path / f"snapshot_{tag}.csv", grid, cell_cols)
            write_faces_csv(out_path / f"faces_{tag}.csv", grid, est[slices["velocity"]])
            if vtk:
                write_vtk(out_path / f"snapshot_{tag}.vtk", grid, cell_cols)

    return RunResult(
        config=cfg,
        out_dir=out_path,
        times=fresult.times,
        rmse=fresult.rmse,
        wall_time=fresult.wall_time,
        estimates=estimates if keep_estimates else None,
    )


def _sweep_child(args):
    cfg, run_dir, ref_states, ref_perm = args
    grid = build_grid(cfg.grid.nx, cfg.grid.ny)
    spec = observation_spec(cfg, grid)
    reference = ReferenceTrajectory(
        grid, ref_states, ref_perm, spec, make_observations(ref_states, spec, cfg.seeds.noise)
    )
    result = run_experiment(cfg, run_dir, reference=reference)
    return result.rmse.mean(axis=0)


def sweep(
    cfg: ExperimentConfig,
    fractions: Sequence[float],
    out_dir: Path,
    filters: Optional[Sequence[str]] = None,
    processes: int = 1,
) -> list[dict]:
    """One run per (fraction, filter) against a shared reference.

    Mask seeds are made disjoint per fraction index. Emits ``sweep.csv`` with
    columns fraction,filter,rmse_s,rmse_p,rmse_u (time-averaged).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    filters = list(filters) if filters is not None else [cfg.filter]
    reference = generate_reference(cfg, out_dir / "reference")

    tasks = []
    labels = []
    for k, fraction in enumerate(fractions):
        for filt in filters:
            run_cfg = cfg.model_copy(deep=True)
            run_cfg.obs.fraction = float(fraction)
            run_cfg.filter = filt  # type: ignore[assignment]
            run_cfg.seeds.mask = cfg.seeds.mask + 1000003 * k  # disjoint per fraction
            run_dir = out_dir / f"f{int(round(fraction * 100)):03d}_{filt}"
            tasks.append((run_cfg, run_dir, reference.states, reference.permeability))
            labels.append((float(fraction), filt))

    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            averages = list(pool.map(_sweep_child, tasks))
    else:
        averages = [_sweep_child(t) for t in tasks]

    rows = []
    with open(out_dir / "sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("fraction,filter,rmse_s,rmse_p,rmse_u\n")
        for (fraction, filt), avg in zip(labels, averages):
            fh.write(
                f"{fraction!r},{filt},{FLOAT_FMT % avg[0]},{FLOAT_FMT % avg[1]},{FLOAT_FMT % avg[2]}\n"
            )
            rows.append(
                {"fraction": fraction, "filter": filt,
                 "rmse_s": float(avg[0]), "rmse_p": float(avg[1]), "rmse_u": float(avg[2])}
            )
    return rows


def metrics(rmse_paths: Sequence[Path], burn_in: int = 0) -> list[dict]:
    """Time-averaged RMSE per run directory / rmse.csv path."""
    rows = []
    for path in rmse_paths:
        path = Path(path)
        if path.is_dir():
            path = path / "rmse.csv"
        data = read_rmse_csv(path)
        avg = data[burn_in:, 2:5].mean(axis=0)
        rows.append(
            {"path": str(path), "burn_in": burn_in,
             "rmse_s": float(avg[0]), "rmse_p": float(avg[1]), "rmse_u": float(avg[2])}
        )
    return rows
