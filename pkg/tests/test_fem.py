import numpy as np
import pytest

from ensflow.fem import (
    CflWarning,
    SolverError,
    SolverParams,
    StateVector,
    advance_saturation,
    assemble_and_solve_darcy,
    cfl_number,
    default_inflow_saturation,
    fractional_flow,
    fractional_flow_deriv,
    max_wave_speed,
    state_slices,
    step,
    total_mobility,
)
from ensflow.grid import build_grid

MU = 0.2


def const_bc(value):
    return lambda x, y: np.full_like(np.asarray(x, dtype=float), value)


# -- constitutive relations ---------------------------------------------------


def test_total_mobility_endpoints():
    assert total_mobility(0.0, MU) == pytest.approx(1.0)
    assert total_mobility(1.0, MU) == pytest.approx(5.0)
    assert total_mobility(0.5, MU) == pytest.approx(1.5)


def test_total_mobility_positive_everywhere():
    s = np.linspace(-0.5, 1.5, 101)
    assert np.all(total_mobility(s, MU) > 0)


def test_fractional_flow_endpoints_and_midpoint():
    assert fractional_flow(0.0, MU) == pytest.approx(0.0)
    assert fractional_flow(1.0, MU) == pytest.approx(1.0)
    assert fractional_flow(0.5, MU) == pytest.approx(5.0 / 6.0)


def test_fractional_flow_monotone():
    s = np.linspace(0, 1, 257)
    f = fractional_flow(s, MU)
    assert np.all(np.diff(f) >= 0)


def test_fractional_flow_deriv_matches_finite_differences():
    s = np.linspace(0.05, 0.95, 19)
    h = 1e-7
    fd = (fractional_flow(s + h, MU) - fractional_flow(s - h, MU)) / (2 * h)
    assert np.allclose(fractional_flow_deriv(s, MU), fd, rtol=1e-6)


# -- Darcy solve ----------------------------------------------------------------


def test_darcy_zero_gradient():
    g = build_grid(16, 16)
    u, p = assemble_and_solve_darcy(
        g, np.ones(g.n_cells), np.full(g.n_cells, 0.3),
        SolverParams(dt=1e-3), p_dirichlet=const_bc(2.0),
    )
    assert np.abs(u).max() < 1e-9
    assert np.abs(p - 2.0).max() < 1e-9


def test_darcy_linear_pressure_exact():
    # K=1 and s=0 give K*lambda = 1; p_D = 1 - x has the exact discrete
    # solution p = 1 - x_c with unit x-velocity on every face
    g = build_grid(32, 32)
    params = SolverParams(dt=1e-3, linear_tol=1e-12)
    u, p = assemble_and_solve_darcy(g, np.ones(g.n_cells), np.zeros(g.n_cells), params)
    assert np.abs(u[: g.n_xfaces] - 1.0).max() < 1e-8
    assert np.abs(u[g.n_xfaces :]).max() < 1e-8
    assert np.abs(p - (1.0 - g.cell_centers()[:, 0])).max() < 1e-8


def test_darcy_two_slab_harmonic_flux():
    # series resistance: u = 1 / (0.5/1 + 0.5/4) = 1.6, sealed lateral sides
    g = build_grid(32, 32)
    params = SolverParams(dt=1e-3, linear_tol=1e-12)
    K = np.where(g.cell_centers()[:, 0] < 0.5, 1.0, 4.0)
    u, _ = assemble_and_solve_darcy(
        g, K, np.zeros(g.n_cells), params, sealed=("south", "north")
    )
    assert np.abs(u[: g.n_xfaces] - 1.6).max() < 1e-8
    assert np.abs(u[g.n_xfaces :]).max() < 1e-8


def test_darcy_local_mass_conservation_random_coefficients():
    g = build_grid(24, 20)
    rng = np.random.default_rng(3)
    K = np.exp(0.7 * rng.standard_normal(g.n_cells))
    s = rng.random(g.n_cells)
    params = SolverParams(dt=1e-3)
    u, _ = assemble_and_solve_darcy(g, K, s, params)
    ux = u[: g.n_xfaces].reshape(g.ny, g.nx + 1)
    uy = u[g.n_xfaces :].reshape(g.ny + 1, g.nx)
    net = (ux[:, 1:] - ux[:, :-1]) * g.hy + (uy[1:, :] - uy[:-1, :]) * g.hx
    assert np.abs(net).max() <= 10 * params.linear_tol * np.abs(u).max()


def test_darcy_nonzero_source_balance():
    g = build_grid(16, 16)
    rng = np.random.default_rng(5)
    q = rng.standard_normal(g.n_cells)
    u, _ = assemble_and_solve_darcy(
        g, np.ones(g.n_cells), np.zeros(g.n_cells), SolverParams(dt=1e-3), q=q
    )
    ux = u[: g.n_xfaces].reshape(g.ny, g.nx + 1)
    uy = u[g.n_xfaces :].reshape(g.ny + 1, g.nx)
    net = (ux[:, 1:] - ux[:, :-1]) * g.hy + (uy[1:, :] - uy[:-1, :]) * g.hx
    assert np.allclose(net, q.reshape(g.ny, g.nx) * g.hx * g.hy, atol=1e-9)


def test_darcy_rejects_zero_permeability():
    g = build_grid(4, 4)
    with pytest.raises(SolverError):
        assemble_and_solve_darcy(
            g, np.zeros(g.n_cells), np.zeros(g.n_cells), SolverParams(dt=1e-3)
        )


# -- saturation transport ----------------------------------------------------------


def test_transport_zero_velocity_is_identity():
    g = build_grid(8, 8)
    rng = np.random.default_rng(0)
    s = rng.random(g.n_cells)
    out = advance_saturation(g, s, np.zeros(g.n_faces), SolverParams(dt=1e-3))
    assert np.array_equal(out, s)


def test_transport_preserves_unit_saturation():
    g = build_grid(16, 16)
    params = SolverParams(dt=1e-3)
    s = np.ones(g.n_cells)
    u, _ = assemble_and_solve_darcy(g, np.ones(g.n_cells), s, params)
    out = advance_saturation(g, s, u, params, s_inflow=const_bc(1.0))
    assert np.abs(out - 1.0).max() < 1e-8


def _uniform_x_velocity(g, value=1.0):
    u = np.zeros(g.n_faces)
    u[: g.n_xfaces] = value
    return u


def _bl_profile(n_cells, dt, t_end):
    g = build_grid(n_cells, 2)
    u = _uniform_x_velocity(g)
    params = SolverParams(mu=MU, dt=dt, clamp_saturation=False, cfl_check=False)
    s = np.zeros(g.n_cells)
    for _ in range(int(round(t_end / dt))):
        s = advance_saturation(g, s, u, params)
    return g, s.reshape(2, n_cells)[0]


def _front_position(profile, h, threshold=0.2):
    return np.count_nonzero(profile > threshold) * h


def test_buckley_leverett_self_convergence_and_bounds():
    g64, coarse = _bl_profile(64, 0.004, 0.4)
    _, fine = _bl_profile(256, 0.001, 0.4)
    assert coarse.min() >= -1e-12 and coarse.max() <= 1 + 1e-12
    f_coarse = _front_position(coarse, 1 / 64)
    f_fine = _front_position(fine, 1 / 256)
    assert abs(f_coarse - f_fine) <= 2 / 64


def test_buckley_leverett_welge_front_speed():
    # independent oracle: shock speed = max_s F(s)/s (tangent construction)
    _, fine = _bl_profile(256, 0.001, 0.4)
    s = np.linspace(1e-9, 1.0, 200001)
    speed = np.max(fractional_flow(s, MU) / s)
    predicted = 0.4 * speed
    assert abs(_front_position(fine, 1 / 256) - predicted) <= 3 / 64


def test_transport_monotone_upwind_keeps_bounds_without_clamping():
    g = build_grid(32, 32)
    rng = np.random.default_rng(11)
    K = np.exp(0.5 * rng.standard_normal(g.n_cells))
    params = SolverParams(dt=2e-4, clamp_saturation=False, cfl_check=False)
    state = StateVector(g, np.zeros(g.n_cells), np.zeros(g.n_faces), np.zeros(g.n_cells))
    for _ in range(50):
        state = step(state, K, params)
    assert state.s.min() >= -1e-12 and state.s.max() <= 1 + 1e-12


def test_clamping_bounds_exactly():
    g = build_grid(8, 8)
    params = SolverParams(dt=0.05, clamp_saturation=True, cfl_check=False)
    rng = np.random.default_rng(1)
    s = rng.random(g.n_cells)
    u = _uniform_x_velocity(g, 8.0)  # deliberately violate CFL
    out = advance_saturation(g, s, u, params)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_transport_source_term_hook():
    # with zero velocity, s' = s + dt * F(s) * q cellwise
    g = build_grid(8, 8)
    params = SolverParams(dt=0.01)
    rng = np.random.default_rng(2)
    s = rng.random(g.n_cells)
    q = rng.standard_normal(g.n_cells)
    out = advance_saturation(g, s, np.zeros(g.n_faces), params, q=q)
    expected = np.clip(s + params.dt * fractional_flow(s, MU) * q, 0.0, 1.0)
    assert np.allclose(out, expected)


def test_cfl_checker_warns():
    g = build_grid(16, 16)
    params = SolverParams(dt=0.5)
    u = _uniform_x_velocity(g, 2.0)
    assert cfl_number(g, u, params) > 1
    with pytest.warns(CflWarning):
        advance_saturation(g, np.zeros(g.n_cells), u, params)


def test_max_wave_speed_value():
    # interior maximum of 2 mu s (1-s) / (s^2 + mu (1-s)^2)^2 for mu = 0.2,
    # frozen from a dense scan of the closed-form derivative
    assert max_wave_speed(MU) == pytest.approx(2.4543, abs=2e-3)


# -- whole IMPES step -----------------------------------------------------------------


def test_step_zero_flow_fixed_point():
    g = build_grid(12, 12)
    rng = np.random.default_rng(4)
    s = rng.random(g.n_cells)
    state = StateVector(g, s, np.zeros(g.n_faces), np.zeros(g.n_cells))
    out = step(state, np.ones(g.n_cells), SolverParams(dt=1e-3), p_dirichlet=const_bc(1.0))
    assert np.abs(out.s - s).max() < 1e-9
    assert np.abs(out.u).max() < 1e-9


def test_step_is_deterministic_bitwise():
    g = build_grid(16, 16)
    rng = np.random.default_rng(9)
    K = np.exp(0.3 * rng.standard_normal(g.n_cells))
    s = rng.random(g.n_cells)
    state = StateVector(g, s, np.zeros(g.n_faces), np.zeros(g.n_cells))
    params = SolverParams(dt=5e-4)
    a = step(state, K, params)
    b = step(state, K, params)
    assert np.array_equal(a.flatten(), b.flatten())


def test_flux_antisymmetry_shared_faces():
    # one stored value per face: outflux of a cell through an interior face is
    # exactly minus the neighbor's, by the sign convention
    g = build_grid(8, 8)
    state = StateVector(g, np.zeros(g.n_cells), np.zeros(g.n_faces), np.zeros(g.n_cells))
    out = step(state, np.ones(g.n_cells), SolverParams(dt=1e-3))
    for cell in (9, 20, 35):
        for face, sign in g.cell_faces(cell):
            if g.is_boundary_face(face):
                continue
            other = [c for c in g.face_cells(face) if c != cell][0]
            sign_other = [sg for f, sg in g.cell_faces(other) if f == face][0]
            flux = out.u[face.index(g)]
            assert sign * flux == -(sign_other * flux)


def test_grid_refinement_self_convergence():
    # halving h and dt shrinks the distance to a fine reference
    def run(n, dt, steps):
        g = build_grid(n, n)
        K = np.ones(g.n_cells)
        state = StateVector(g, np.zeros(g.n_cells), np.zeros(g.n_faces), np.zeros(g.n_cells))
        params = SolverParams(dt=dt, cfl_check=False)
        for _ in range(steps):
            state = step(state, K, params)
        return state.s.reshape(n, n)

    s8 = run(8, 4e-3, 50)
    s16 = run(16, 2e-3, 100)
    s32 = run(32, 1e-3, 200)
    coarse_err = np.abs(s8.repeat(4, 0).repeat(4, 1) - s32).mean()
    mid_err = np.abs(s16.repeat(2, 0).repeat(2, 1) - s32).mean()
    assert mid_err < coarse_err


def test_step_400_steps_reaches_example_horizon():
    g = build_grid(8, 8)  # resolution-independent bookkeeping check
    params = SolverParams(dt=0.001, cfl_check=False)
    state = StateVector(g, np.zeros(g.n_cells), np.zeros(g.n_faces), np.zeros(g.n_cells))
    t = 0.0
    for _ in range(400):
        state = step(state, np.ones(g.n_cells), params)
        t += params.dt
    assert t == pytest.approx(0.4)
    assert state.s.max() <= 1.0 and state.s.min() >= 0.0


def test_state_vector_layout_and_roundtrip():
    g = build_grid(5, 4)
    sl = state_slices(g)
    assert sl["saturation"] == slice(0, 20)
    assert sl["velocity"] == slice(20, 20 + g.n_faces)
    assert sl["pressure"].stop == g.state_dim
    rng = np.random.default_rng(0)
    vec = rng.standard_normal(g.state_dim)
    sv = StateVector.from_flat(g, vec)
    assert np.array_equal(sv.flatten(), vec)
    with pytest.raises(ValueError):
        StateVector.from_flat(g, vec[:-1])


def test_solver_params_validation():
    with pytest.raises(ValueError):
        SolverParams(mu=-1.0)
    with pytest.raises(ValueError):
        SolverParams(dt=0.0)
