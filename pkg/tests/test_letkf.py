import numpy as np
import pytest

from ensflow.grid import build_grid
from ensflow.letkf import (
    LetkfConfig,
    _apply_matrix_functions,
    _apply_via_eigh,
    build_localization,
    gaspari_cohn,
    letkf_update,
)
from ensflow.observation import make_mask, observe


def small_grid():
    return build_grid(4, 4)


# -- taper ---------------------------------------------------------------------


def test_gaspari_cohn_shape():
    assert gaspari_cohn(np.array([0.0]))[0] == pytest.approx(1.0)
    assert gaspari_cohn(np.array([2.0]))[0] == pytest.approx(0.0, abs=1e-12)
    assert gaspari_cohn(np.array([2.5]))[0] == 0.0
    # continuity at the inner/outer seam
    left = gaspari_cohn(np.array([1.0 - 1e-9]))[0]
    right = gaspari_cohn(np.array([1.0 + 1e-9]))[0]
    assert left == pytest.approx(right, abs=1e-6)
    x = np.linspace(0, 2.2, 500)
    vals = gaspari_cohn(x)
    assert np.all(np.diff(vals) <= 1e-12)  # nonincreasing
    assert np.all(vals >= 0)


# -- oracle: observation-space Kalman form ----------------------------------------


def kalman_mean_update(members, y, mask, r, inflation, nonlinearity=np.arctan):
    """Independent mean-update oracle: ensemble Kalman gain in observation
    space, K = X' Y'^T (Y' Y'^T + (M-1) R)^{-1}."""
    m = members.shape[0]
    mean = members.mean(axis=0)
    Xp = (members - mean) * inflation
    infl = mean + Xp
    Yb = nonlinearity(infl[:, mask])
    ym = Yb.mean(axis=0)
    Yp = Yb - ym
    S = Yp.T @ Yp + (m - 1) * r * np.eye(mask.size)
    gain = Xp.T @ Yp @ np.linalg.inv(S)
    return mean + gain @ (y - ym)


def subspace_posterior_cov(members, y, mask, r, inflation, nonlinearity=np.arctan):
    """Independent covariance oracle in the ensemble subspace:
    Pa = X'^T [(M-1) I + Y'^T R^-1 Y']^{-1} X'."""
    m = members.shape[0]
    mean = members.mean(axis=0)
    Xp = (members - mean) * inflation
    infl = mean + Xp
    Yb = nonlinearity(infl[:, mask])
    Yp = Yb - Yb.mean(axis=0)
    inner = np.linalg.inv((m - 1) * np.eye(m) + Yp @ Yp.T / r)
    return Xp.T @ inner @ Xp


def test_global_etkf_matches_kalman_oracles():
    g = small_grid()
    rng = np.random.default_rng(0)
    members = 0.5 + 0.2 * rng.standard_normal((12, g.state_dim))
    spec = make_mask(g, ("saturation", "pressure"), 0.5, seed=1, noise_variance=0.05)
    y = observe(members.mean(axis=0) + 0.1, spec, noise_seed=4)
    cfg = LetkfConfig(M=12, localization_radius=None, inflation=1.03)
    analysis = letkf_update(members, y, spec, cfg, g)

    mean_oracle = kalman_mean_update(members, y, spec.mask, 0.05, 1.03)
    assert np.allclose(analysis.mean(axis=0), mean_oracle, atol=1e-10)

    cov_oracle = subspace_posterior_cov(members, y, spec.mask, 0.05, 1.03)
    Xa = analysis - analysis.mean(axis=0)
    cov = Xa.T @ Xa / 11.0
    assert np.allclose(cov, cov_oracle, atol=1e-10)


def test_empty_mask_gives_inflated_forecast():
    g = small_grid()
    rng = np.random.default_rng(1)
    members = rng.standard_normal((8, g.state_dim))
    spec = make_mask(g, ("saturation",), 0.0, seed=0)
    cfg = LetkfConfig(M=8, localization_radius=4.0, inflation=1.5)
    analysis = letkf_update(members, None, spec, cfg, g)
    assert np.allclose(analysis.mean(axis=0), members.mean(axis=0), atol=1e-12)
    assert np.allclose(
        analysis.std(axis=0), 1.5 * members.std(axis=0), atol=1e-12
    )


def test_sharp_observation_limit_recovers_data():
    # needs the ensemble subspace to span the state space (M > dim), since
    # the analysis mean can only move within span(X')
    g = build_grid(2, 2)  # dim = 20
    rng = np.random.default_rng(2)
    truth = rng.standard_normal(g.state_dim)
    members = truth + 0.4 * rng.standard_normal((60, g.state_dim))
    spec = make_mask(
        g, ("saturation", "velocity", "pressure"), 1.0,
        seed=2, nonlinearity="identity", noise_variance=1e-10,
    )
    cfg = LetkfConfig(M=60, localization_radius=None, inflation=1.0)
    analysis = letkf_update(members, truth, spec, cfg, g)
    assert np.abs(analysis.mean(axis=0) - truth).max() < 1e-3


def test_infinite_noise_limit_keeps_forecast():
    g = small_grid()
    rng = np.random.default_rng(3)
    members = rng.standard_normal((10, g.state_dim))
    spec = make_mask(g, ("saturation",), 0.5, seed=3, noise_variance=1e12)
    y = observe(members.mean(axis=0), spec) + 0.5  # O(1) innovation, no noise draw
    cfg = LetkfConfig(M=10, localization_radius=None, inflation=1.0)
    analysis = letkf_update(members, y, spec, cfg, g)
    assert np.abs(analysis.mean(axis=0) - members.mean(axis=0)).max() < 1e-6


def test_scalar_identity_analysis_mean_between_forecast_and_data():
    g = small_grid()
    rng = np.random.default_rng(4)
    members = 0.3 + 0.15 * rng.standard_normal((20, g.state_dim))
    spec = make_mask(g, ("saturation",), 1.0 / g.n_cells, seed=4,
                     nonlinearity="identity", noise_variance=0.05)
    assert spec.n_obs == 1
    k = spec.mask[0]
    fb = members.mean(axis=0)[k]
    y = np.array([fb + 0.5])
    cfg = LetkfConfig(M=20, localization_radius=None, inflation=1.0)
    analysis = letkf_update(members, y, spec, cfg, g)
    am = analysis.mean(axis=0)[k]
    assert fb < am < y[0]


def test_local_radius_none_equals_infinite_radius_with_unit_taper():
    # with taper forced to 1, the localized machinery must reproduce the
    # global transform exactly
    g = small_grid()
    rng = np.random.default_rng(5)
    members = 0.4 + 0.2 * rng.standard_normal((10, g.state_dim))
    spec = make_mask(g, ("saturation", "pressure"), 0.6, seed=5, noise_variance=0.07)
    y = observe(members.mean(axis=0) + 0.05, spec, noise_seed=1)
    global_analysis = letkf_update(
        members, y, spec, LetkfConfig(M=10, localization_radius=None), g
    )
    geometry = build_localization(g, spec, radius_cells=8.0)
    geometry.taper[:] = 1.0
    local_analysis = letkf_update(
        members, y, spec, LetkfConfig(M=10, localization_radius=8.0), g,
        geometry=geometry,
    )
    assert np.allclose(local_analysis, global_analysis, atol=1e-7)


def test_localized_analysis_matches_per_point_eigh_oracle():
    # brute-force oracle: independent eigendecomposition transform per
    # analysis coordinate with the same taper weights
    g = small_grid()
    rng = np.random.default_rng(6)
    m_count = 9
    members = 0.4 + 0.2 * rng.standard_normal((m_count, g.state_dim))
    spec = make_mask(g, ("saturation", "velocity"), 0.5, seed=6, noise_variance=0.06)
    y = observe(members.mean(axis=0) + 0.03, spec, noise_seed=2)
    cfg = LetkfConfig(M=m_count, localization_radius=2.0, inflation=1.02)
    geometry = build_localization(g, spec, cfg.localization_radius)
    analysis = letkf_update(members, y, spec, cfg, g, geometry=geometry)

    mean = members.mean(axis=0)
    Xp = (members - mean) * cfg.inflation
    infl = mean + Xp
    Yb = np.arctan(infl[:, spec.mask])
    ym = Yb.mean(axis=0)
    G = (Yb - ym).T / np.sqrt(0.06)
    dprime = (y - ym) / np.sqrt(0.06)
    expected = np.empty_like(members)
    for coord in range(g.state_dim):
        loc = geometry.coord_loc[coord]
        w = geometry.taper[loc]
        C = (G * w[:, None]).T @ G
        lam, U = np.linalg.eigh((m_count - 1) * np.eye(m_count) + C)
        wbar = U @ ((U.T @ ((G * w[:, None]).T @ dprime)) / lam)
        W = (U * np.sqrt((m_count - 1) / lam)) @ U.T
        xp = Xp[:, coord]
        expected[:, coord] = mean[coord] + xp @ wbar + W @ xp
    assert np.allclose(analysis, expected, atol=1e-8)


def test_matrix_function_chebyshev_agrees_with_eigh():
    rng = np.random.default_rng(7)
    m_count = 12
    P = 5
    A = rng.standard_normal((P, m_count, 3 * m_count))
    C = A @ A.transpose(0, 2, 1)  # PSD stack with moderate spectrum
    rhs = rng.standard_normal((P, m_count, 3))
    fn_index = np.array([0, 0, 1])
    cheb = _apply_matrix_functions(C, rhs, fn_index, m_count, tol=1e-12, degree_cap=160)
    exact = _apply_via_eigh(C, rhs, fn_index, m_count)
    assert cheb is not None
    assert np.allclose(cheb, exact, atol=1e-8)


def test_matrix_function_falls_back_on_extreme_spectra():
    rng = np.random.default_rng(8)
    m_count = 6
    A = rng.standard_normal((2, m_count, m_count)) * 1e5
    C = A @ A.transpose(0, 2, 1)
    rhs = rng.standard_normal((2, m_count, 2))
    out = _apply_matrix_functions(C, rhs, np.array([0, 1]), m_count, 1e-9, degree_cap=64)
    assert out is None  # caller switches to the eigh path


def test_float32_local_analysis_agrees():
    g = small_grid()
    rng = np.random.default_rng(10)
    members = 0.4 + 0.15 * rng.standard_normal((16, g.state_dim))
    spec = make_mask(g, ("saturation", "pressure"), 0.5, seed=8, noise_variance=0.07)
    y = observe(members.mean(axis=0) + 0.05, spec, noise_seed=5)
    a64 = letkf_update(members, y, spec, LetkfConfig(M=16, localization_radius=2.0), g)
    a32 = letkf_update(
        members, y, spec, LetkfConfig(M=16, localization_radius=2.0, dtype="float32"), g
    )
    assert np.abs(a64 - a32).max() < 1e-4
    with pytest.raises(ValueError):
        LetkfConfig(dtype="int8")


def test_letkf_preserves_shape_and_determinism():
    g = small_grid()
    rng = np.random.default_rng(9)
    members = 0.4 + 0.1 * rng.standard_normal((7, g.state_dim))
    spec = make_mask(g, ("saturation",), 0.5, seed=7, noise_variance=0.07)
    y = observe(members.mean(axis=0), spec, noise_seed=3)
    cfg = LetkfConfig(M=7, localization_radius=2.0)
    a = letkf_update(members, y, spec, cfg, g)
    b = letkf_update(members, y, spec, cfg, g)
    assert a.shape == members.shape
    assert np.array_equal(a, b)


def test_letkf_config_validation():
    with pytest.raises(ValueError):
        LetkfConfig(inflation=0.9)
    with pytest.raises(ValueError):
        LetkfConfig(localization_radius=-1.0)
    with pytest.raises(ValueError):
        letkf_update(np.zeros((1, 4)), None, None, LetkfConfig())
