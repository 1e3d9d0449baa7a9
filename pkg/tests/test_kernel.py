import numpy as np
import pytest

from psld.errors import NumericError
from psld.kernel import (KernelMoments, beta_integral, chol_block,
                         kernel_moments_dsm, kernel_moments_hsm,
                         kernel_moments_ode_oracle, mean_transition,
                         perturb_sample, vp_kernel_moments)
from psld.recipe import BetaSchedule, PsldParams, instantiate_vpsde

# Frozen oracle values for the canonical setting (Gamma=0.01, nu=4.01,
# M^-1=4, beta=8, momentum marginalized with gamma0=0.04, x0=1).  Computed
# independently from the matrix-exponential/Lyapunov solution integrated with
# scipy DOP853 at rtol 1e-12 (same trajectory reproduced by the in-package
# RK4 oracle to < 1e-13).
FROZEN_HSM = {
    0.25: (0.40196602400641496, -0.13398867466880499,
           0.76948393017678318, 0.071093741160431351, 0.22773832347501644),
    0.5: (0.08976482469751433, -0.03590592987900573,
          0.98699161077319641, 0.0050795890538757405, 0.24801457686726686),
    1.0: (0.00290078055107117, -0.00128923580047608,
          0.99998520289702952, 6.5321667704707151e-06, 0.2499971162062731),
}


def hsm_sigma0(params):
    return np.diag([0.0, params.mass * params.gamma0])


def test_beta_integral_constant():
    beta = BetaSchedule(beta_const=8.0)
    assert beta_integral(beta, 0.0, 1.0) == pytest.approx(8.0)
    assert beta_integral(beta, 0.25, 0.5) == pytest.approx(2.0)


def test_beta_integral_linear():
    beta = BetaSchedule(kind="linear", beta_min=0.1, beta_max=20.0)
    assert beta_integral(beta, 0.0, 1.0) == pytest.approx(10.05)


def test_beta_integral_rejects_bad_interval():
    with pytest.raises(ValueError):
        beta_integral(BetaSchedule(), 0.5, 0.25)


def test_mean_transition_identity_at_zero(params):
    np.testing.assert_allclose(mean_transition(params, 0.0), np.eye(2),
                               atol=1e-15)


def test_mean_transition_cld_coefficients():
    # Gamma=0, nu=4: bracket coefficients (1, 2, -1/2, -1)
    p = PsldParams.critically_damped(0.0)
    t = 0.37
    b = float(beta_integral(p.beta, 0.0, t))
    phi = mean_transition(p, t)
    decay = np.exp(-p.nu * b / 4)
    expected = decay * np.array([[1 + 1.0 * b, 2.0 * b],
                                 [-0.5 * b, 1 - 1.0 * b]])
    np.testing.assert_allclose(phi, expected, rtol=1e-14)


def test_mean_transition_matches_cld_remark_formula():
    # Gamma=0 with nu_bar = M nu, beta_bar = beta/2: the momentum-only mean
    # map written in barred variables, checked entrywise on 20 times.
    p = PsldParams.critically_damped(0.0)  # nu=4, M=1/4, nu_bar=1
    nu_bar = p.mass * p.nu
    for t in np.linspace(0.0, 1.0, 20):
        b_bar = 0.5 * float(beta_integral(p.beta, 0.0, t))
        decay = np.exp(-2.0 * b_bar / nu_bar)
        expected = decay * np.array([
            [1 + 2 * b_bar / nu_bar**2, 4 * b_bar / nu_bar**2],
            [-b_bar, 1 - 2 * b_bar / nu_bar],
        ])
        np.testing.assert_allclose(mean_transition(p, t), expected, atol=1e-12)


def test_mean_transition_refuses_non_critical():
    p = PsldParams(gamma=0.1, nu=1.0, mass_inv=4.0)
    with pytest.raises(ValueError):
        mean_transition(p, 0.5)


def test_dsm_moments_identity_at_zero(params):
    z0 = np.array([1.3, -0.7])
    m = kernel_moments_dsm(params, z0, 0.4, 0.9, 0.0)
    np.testing.assert_allclose(m.mean(), z0, atol=1e-15)
    assert (m.sxx, m.sxm, m.smm) == (0.4, 0.0, 0.9)


def test_hsm_moments_at_zero(params):
    m = kernel_moments_hsm(params, np.array([2.0]), 0.0)
    np.testing.assert_allclose(m.mu_x, [2.0])
    np.testing.assert_allclose(m.mu_m, [0.0])
    assert m.sxx == 0.0
    assert m.smm == pytest.approx(0.25 * 0.04, abs=1e-15)


def test_hsm_moments_match_frozen_oracle(params):
    for t, (mx, mm, sxx, sxm, smm) in FROZEN_HSM.items():
        m = kernel_moments_hsm(params, np.ones(1), t)
        assert float(m.mu_x[0]) == pytest.approx(mx, abs=1e-13)
        assert float(m.mu_m[0]) == pytest.approx(mm, abs=1e-13)
        assert m.sxx == pytest.approx(sxx, abs=1e-13)
        assert m.sxm == pytest.approx(sxm, abs=1e-13)
        assert m.smm == pytest.approx(smm, abs=1e-13)


def test_hsm_moments_match_live_oracle(params):
    oracle = kernel_moments_ode_oracle(params, np.array([1.0, 0.0]),
                                       hsm_sigma0(params), t=0.5, step=1e-5)
    closed = kernel_moments_hsm(params, np.ones(1), 0.5)
    np.testing.assert_allclose(closed.mean(), oracle.mean(), atol=1e-9)
    assert closed.sxx == pytest.approx(oracle.sxx, abs=1e-9)
    assert closed.sxm == pytest.approx(oracle.sxm, abs=1e-9)
    assert closed.smm == pytest.approx(oracle.smm, abs=1e-9)


def test_closed_form_oracle_agreement_noncanonical():
    p = PsldParams.critically_damped(0.6, mass_inv=2.0,
                                     beta=BetaSchedule(beta_const=3.0),
                                     gamma0=0.1)
    for t in (0.2, 0.9):
        oracle = kernel_moments_ode_oracle(p, np.array([0.5, -1.0]),
                                           np.diag([0.3, 0.2]), t=t, step=1e-5)
        closed = kernel_moments_dsm(p, np.array([0.5, -1.0]), 0.3, 0.2, t)
        np.testing.assert_allclose(closed.mean(), oracle.mean(), atol=1e-9)
        np.testing.assert_allclose(closed.cov_block(), oracle.cov_block(),
                                   atol=1e-9)


def test_equilibrium_limit(params):
    m = kernel_moments_hsm(params, np.zeros(1), 1.0)
    np.testing.assert_allclose(m.mean(), np.zeros(2), atol=1e-4)
    np.testing.assert_allclose(m.cov_block(), np.diag([1.0, 0.25]), atol=1e-4)


def test_stationary_initialization_is_fixed_point(params):
    # starting at (0, diag(1, M)) the marginal stays there for all t
    for t in np.linspace(0.0, 1.0, 9):
        m = kernel_moments_dsm(params, np.zeros(2), 1.0, params.mass, t)
        np.testing.assert_allclose(m.cov_block(),
                                   np.diag([1.0, params.mass]), atol=1e-8)
        np.testing.assert_allclose(m.mean(), np.zeros(2), atol=1e-15)


def test_hsm_gamma_one_marginal_invariance(params):
    # with gamma0=1 and unit-variance data the full marginal is stationary:
    # Phi diag(1, M) Phi^T + Sigma_t(noise) = diag(1, M)
    p = PsldParams(gamma=params.gamma, nu=params.nu,
                   mass_inv=params.mass_inv, beta=params.beta, gamma0=1.0)
    for t in np.linspace(0.0, 1.0, 7):
        phi = mean_transition(p, t)
        noise = kernel_moments_dsm(p, np.zeros(2), 0.0, 0.0, t).cov_block()
        marginal = phi @ np.diag([1.0, p.mass]) @ phi.T + noise
        np.testing.assert_allclose(marginal, np.diag([1.0, p.mass]), atol=1e-8)


def test_oracle_identity_at_zero(params):
    m = kernel_moments_ode_oracle(params, np.array([1.0, 2.0]),
                                  np.diag([0.5, 0.25]), t=0.0)
    np.testing.assert_allclose(m.mean(), [1.0, 2.0])
    np.testing.assert_allclose(m.cov_block(), np.diag([0.5, 0.25]))


def test_oracle_rejects_bad_step(params):
    with pytest.raises(ValueError):
        kernel_moments_ode_oracle(params, np.zeros(2), np.zeros((2, 2)),
                                  t=0.5, step=0.0)


def test_oracle_rk4_self_convergence(params):
    # fourth-order: halving the step cuts the error ~16x against Richardson
    t = 0.5
    z0 = np.array([1.0, 0.0])
    sig0 = hsm_sigma0(params)
    vals = {}
    for step in (2e-3, 1e-3, 5e-4):
        m = kernel_moments_ode_oracle(params, z0, sig0, t=t, step=step)
        vals[step] = np.array([m.mu_x[0], m.mu_m[0], m.sxx, m.sxm, m.smm])
    # Richardson limit from the two finest grids
    limit = vals[5e-4] + (vals[5e-4] - vals[1e-3]) / 15.0
    err_coarse = np.abs(vals[2e-3] - limit).max()
    err_fine = np.abs(vals[1e-3] - limit).max()
    assert 8.0 < err_coarse / err_fine < 32.0


def test_oracle_vp_variance(params):
    spec = instantiate_vpsde(dim=1)
    m = kernel_moments_ode_oracle(spec, np.array([1.0]), np.array([[0.0]]),
                                  t=1.0, step=1e-5)
    b = float(beta_integral(spec.beta, 0.0, 1.0))
    assert m.sxx == pytest.approx(1.0 - np.exp(-b), abs=1e-8)
    closed = vp_kernel_moments(spec.beta, np.array([1.0]), 0.0, 1.0)
    assert closed.sxx == pytest.approx(m.sxx, abs=1e-8)
    np.testing.assert_allclose(closed.mu_x, m.mu_x, atol=1e-8)


def test_oracle_handles_non_critical():
    p = PsldParams(gamma=0.3, nu=1.0, mass_inv=4.0)
    m = kernel_moments_ode_oracle(p, np.array([1.0, 0.0]),
                                  np.zeros((2, 2)), t=0.3, step=1e-4)
    assert np.isfinite(m.mean()).all()
    assert m.sxx > 0


def test_chol_block_diagonal():
    m = KernelMoments(np.zeros(1), np.zeros(1), 1.0, 0.0, 0.25)
    c = chol_block(m)
    np.testing.assert_allclose(c.lower(), np.diag([1.0, 0.5]), atol=1e-15)
    np.testing.assert_allclose(c.inv_transpose(), np.diag([1.0, 2.0]),
                               atol=1e-15)


def test_chol_block_hand_example():
    m = KernelMoments(np.zeros(1), np.zeros(1), 4.0, 2.0, 2.0)
    c = chol_block(m)
    np.testing.assert_allclose(c.lower(), [[2.0, 0.0], [1.0, 1.0]], atol=1e-15)


def test_chol_block_random_reconstruction(rng):
    for _ in range(1000):
        a = rng.standard_normal((2, 2))
        cov = a @ a.T + 1e-6 * np.eye(2)
        m = KernelMoments(np.zeros(1), np.zeros(1), cov[0, 0], cov[0, 1],
                          cov[1, 1])
        c = chol_block(m)
        low = c.lower()
        np.testing.assert_allclose(low @ low.T, cov, atol=1e-12)
        np.testing.assert_allclose(low @ np.linalg.inv(low), np.eye(2),
                                   atol=1e-10)


def test_chol_inverse_identity_over_time(params):
    for t in np.geomspace(1e-5, 1.0, 25):
        c = chol_block(kernel_moments_hsm(params, np.ones(1), float(t)))
        prod = c.lower().T @ c.inv_transpose()
        np.testing.assert_allclose(prod, np.eye(2), atol=1e-10)


def test_chol_block_negative_discriminant():
    with pytest.raises(NumericError):
        KernelMoments(np.zeros(1), np.zeros(1), 1.0, 2.0, 1.0)


def test_perturb_sample_zero_noise(params):
    x0 = np.array([[1.0, -2.0]])
    z, eps = perturb_sample(params, 0.5, np.zeros((1, 4)), x0=x0)
    m = kernel_moments_hsm(params, x0[0], 0.5)
    np.testing.assert_allclose(z[0], m.mean(), atol=1e-12)
    np.testing.assert_array_equal(eps, np.zeros((1, 4)))


def test_perturb_sample_refuses_tiny_time(params):
    with pytest.raises(ValueError):
        perturb_sample(params, 1e-6, np.zeros((1, 2)), x0=np.zeros((1, 1)))


def test_perturb_sample_variance_matches_kernel(params, rng):
    n = 1_000_000
    t = 0.3
    x0 = np.zeros((n, 1))
    eps = rng.standard_normal((n, 2))
    z, _ = perturb_sample(params, t, eps, x0=x0, eps_diag=0.0)
    m = kernel_moments_hsm(params, np.zeros(1), t)
    emp = np.cov(z.T)
    # moment standard errors: var(sample var) ~ 2 sigma^4 / n
    for (i, j), target in [((0, 0), m.sxx), ((0, 1), m.sxm), ((1, 1), m.smm)]:
        se = np.sqrt(2.0 * max(m.sxx, m.smm) ** 2 / n)
        assert abs(emp[i, j] - target) < 3 * se


def test_perturb_sample_coordinates_independent(params, rng):
    n = 200_000
    t = 0.4
    x0 = np.zeros((n, 2))
    eps = rng.standard_normal((n, 4))
    z, _ = perturb_sample(params, t, eps, x0=x0, eps_diag=0.0)
    emp = np.cov(z.T)
    m = kernel_moments_hsm(params, np.zeros(2), t)
    scale = max(m.sxx, m.smm)
    se = 3.0 * scale / np.sqrt(n)
    # cross-coordinate covariances vanish under the kron-identity structure
    for i, j in [(0, 1), (0, 3), (2, 1), (2, 3)]:
        assert abs(emp[i, j]) < 3 * se


def test_perturb_sample_per_row_times(params, rng):
    x0 = rng.standard_normal((5, 1))
    t = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    eps = np.zeros((5, 2))
    z, _ = perturb_sample(params, t, eps, x0=x0)
    for i in range(5):
        m = kernel_moments_hsm(params, x0[i], float(t[i]))
        np.testing.assert_allclose(z[i], m.mean(), atol=1e-12)
