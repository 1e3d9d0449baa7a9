import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psld.errors import ConfigError
from psld.recipe import (BetaSchedule, PsldParams, RecipeSpec, critical_nu,
                         instantiate_cld, instantiate_psld, instantiate_vesde,
                         instantiate_vpsde, recipe_drift,
                         stationarity_residual, validate_recipe)


def test_critical_nu_values():
    assert critical_nu(0.01, 4.0) == pytest.approx(4.01, abs=1e-14)
    assert critical_nu(0.0, 4.0) == pytest.approx(4.0, abs=1e-14)
    assert critical_nu(0.02, 4.0) == pytest.approx(4.02, abs=1e-14)


def test_critical_nu_satisfies_damping_identity():
    nu = critical_nu(0.37, 2.5)
    assert abs((0.37 - nu) ** 2 - 4 * 2.5) < 1e-12


def test_critical_nu_rejects_bad_mass():
    with pytest.raises(ValueError):
        critical_nu(0.1, 0.0)
    with pytest.raises(ValueError):
        critical_nu(0.1, -1.0)


def test_validate_recipe_psld(params):
    report = validate_recipe(instantiate_psld(params, dim=1))
    assert report.psd_ok and report.skew_ok


def test_validate_recipe_negative_diffusion(params):
    spec = instantiate_psld(params, dim=1)
    bad = dataclasses.replace(spec, d_mat=np.array([[-1.0, 0.0], [0.0, 1.0]]),
                              d_block=None)
    assert not validate_recipe(bad).psd_ok


def test_validate_recipe_symmetric_curl(params):
    spec = instantiate_psld(params, dim=1)
    bad = dataclasses.replace(spec, q_mat=np.array([[0.0, 1.0], [1.0, 0.0]]),
                              q_block=None)
    assert not validate_recipe(bad).skew_ok


def test_all_instantiations_validate(params):
    specs = [
        instantiate_psld(params, dim=1),
        instantiate_psld(params, dim=2),
        instantiate_cld(params.mass * params.nu, params.mass_inv,
                        BetaSchedule(beta_const=4.0), dim=1),
        instantiate_vpsde(dim=3),
    ]
    for spec in specs:
        assert validate_recipe(spec).ok


def test_psld_drift_example(params):
    spec = instantiate_psld(params, dim=1)
    drift = recipe_drift(spec, np.array([1.0, 0.0]), 0.0)
    np.testing.assert_allclose(drift, [-0.04, -4.0], atol=1e-14)


def test_drift_zero_state(params):
    spec = instantiate_psld(params, dim=2)
    np.testing.assert_array_equal(recipe_drift(spec, np.zeros(4), 0.3), np.zeros(4))


def test_vpsde_drift_matches_scalar_form():
    # beta(0) = 0.1 under the linear ramp, so dx = -(0.1/2) x at x = 1
    spec = instantiate_vpsde(dim=1)
    drift = recipe_drift(spec, np.array([1.0]), 0.0)
    np.testing.assert_allclose(drift, [-0.05], atol=1e-15)


def test_drift_dimension_mismatch(params):
    spec = instantiate_psld(params, dim=1)
    with pytest.raises(ValueError):
        recipe_drift(spec, np.zeros(3), 0.0)


@settings(max_examples=50, deadline=None)
@given(
    a=st.floats(-1e3, 1e3, allow_nan=False),
    seed=st.integers(0, 2**16),
)
def test_drift_is_linear(a, seed):
    params = PsldParams.critically_damped(0.01)
    spec = instantiate_psld(params, dim=2)
    z = np.random.default_rng(seed).standard_normal(4)
    np.testing.assert_allclose(
        recipe_drift(spec, a * z, 0.2), a * recipe_drift(spec, z, 0.2),
        rtol=1e-12, atol=1e-12)


def test_psld_diffusion_matches_noise_scales(params):
    # G G^T = diag(Gamma beta, M nu beta) per coordinate
    spec = instantiate_psld(params, dim=1)
    gg = spec.diffusion_squared(0.0)
    np.testing.assert_allclose(np.diag(gg), [0.08, 0.25 * 4.01 * 8.0], rtol=1e-14)
    assert gg[0, 1] == 0.0


def test_kron_expansion_dim2(params):
    spec = instantiate_psld(params, dim=2)
    assert spec.d_mat.shape == (4, 4)
    np.testing.assert_array_equal(spec.d_mat,
                                  np.kron(spec.d_block, np.eye(2)))


def test_cld_equals_gamma_zero_psld():
    # Gamma=0 with nu_bar = M nu and beta_bar = beta/2 is the
    # momentum-only-noise process
    p0 = PsldParams.critically_damped(0.0)
    psld0 = instantiate_psld(p0, dim=1)
    cld = instantiate_cld(nu_bar=p0.mass * p0.nu, mass_inv=p0.mass_inv,
                          beta_bar=BetaSchedule(beta_const=p0.beta.beta_const / 2),
                          dim=1)
    for t in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(psld0.drift_matrix(t), cld.drift_matrix(t),
                                   atol=1e-14)
        np.testing.assert_allclose(psld0.diffusion_squared(t),
                                   cld.diffusion_squared(t), atol=1e-14)


def test_vesde_is_rejected():
    with pytest.raises(ConfigError):
        instantiate_vesde()


def test_auxiliary_dimension_must_match():
    with pytest.raises(ValueError):
        RecipeSpec(dim_x=2, dim_m=1, d_mat=np.eye(3), q_mat=np.zeros((3, 3)),
                   mass_inv=1.0, beta=BetaSchedule())


def test_stationarity_residual_valid_recipes(params):
    psld = instantiate_psld(params, dim=1)
    cld = instantiate_cld(params.mass * params.nu, params.mass_inv,
                          BetaSchedule(beta_const=4.0), dim=1)
    vp = instantiate_vpsde(dim=1)
    for spec in (psld, cld, vp):
        assert stationarity_residual(spec, h=0.02) <= 1e-3


def test_stationarity_residual_decays_at_least_quadratically(params):
    spec = instantiate_psld(params, dim=1)
    coarse = stationarity_residual(spec, h=0.02)
    fine = stationarity_residual(spec, h=0.01)
    assert coarse / fine >= 3.5


def test_stationarity_residual_detects_corrupted_curl(params):
    spec = instantiate_psld(params, dim=1)
    bad = dataclasses.replace(spec, q_mat=np.abs(spec.q_mat), q_block=None)
    assert stationarity_residual(bad, h=0.02) > 0.1


def test_stationarity_residual_refuses_coarse_grid(params):
    spec = instantiate_psld(params, dim=1)
    with pytest.raises(ValueError):
        stationarity_residual(spec, h=0.2)


def test_beta_schedule_linear_values():
    beta = BetaSchedule(kind="linear", beta_min=0.1, beta_max=20.0)
    assert float(beta(0.0)) == pytest.approx(0.1)
    assert float(beta(1.0)) == pytest.approx(20.0)


def test_beta_schedule_integral_increasing():
    for beta in (BetaSchedule(), BetaSchedule(kind="linear")):
        ts = np.linspace(0, 1, 11)
        vals = np.array([beta.integral(0.0, t) for t in ts])
        assert np.all(np.diff(vals) > 0)


def test_params_validation():
    with pytest.raises(ValueError):
        PsldParams(gamma=-0.1, nu=1.0, mass_inv=1.0)
    with pytest.raises(ValueError):
        PsldParams(gamma=0.1, nu=1.0, mass_inv=-1.0)


def test_critically_damped_constructor_is_critical():
    for gamma in (0.0, 0.005, 0.25, 4.0):
        assert PsldParams.critically_damped(gamma).is_critical(1e-12)
