"""Closed-form Gaussian perturbation kernels for the critically damped
phase-space process, plus an independent fixed-step moment-ODE oracle.

With b = B(t) = int_0^t beta(s) ds and critical damping
(Gamma - nu)^2 = 4 M^-1, the transition over [0, t] is Gaussian with a
2x2-block-kron-identity structure: per coordinate pair (x_i, m_i),

    mean map    Phi(b) = exp(-(Gamma+nu) b/4) [[1 + A1 b, A2 b],
                                               [C1 b, 1 + C2 b]],
    covariance  Sigma(b) = exp(-(Gamma+nu) b/2) * bracket(b),

where the bracket entries are quadratic polynomials in b plus, on the
diagonal, an exponential relaxation term.  The decay constant of that term is
fixed here to +( Gamma+nu)/2, i.e. the xx bracket carries
(exp(+(Gamma+nu) b/2) - 1) and the mm bracket M times the same factor: this is
the unique choice consistent with Sigma(0) = Sigma_0, with the t -> inf limit
diag(1, M), and with the moment-ODE oracle (verified to 1e-14 against
high-accuracy integration; see tests).  Equivalently, in the stable folded
form used below,

    Sigma_xx = e^{-(Gamma+nu)b/2} (P_xx(b) - 1) + 1
    Sigma_xm = e^{-(Gamma+nu)b/2}  P_xm(b)
    Sigma_mm = e^{-(Gamma+nu)b/2} (P_mm(b) - M) + M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .recipe import CRITICAL_TOL, BetaSchedule, PsldParams, RecipeSpec

TRAIN_EPS = 1e-5       # smallest usable kernel time; Sigma_xx is singular at 0
CHOL_STAB_EPS = 1e-9   # stabilizer added to Cholesky diagonal terms in training
DEFAULT_ORACLE_STEP = 1e-5


def beta_integral(schedule: BetaSchedule, t0, t1):
    """B(t0, t1) = int_{t0}^{t1} beta(s) ds, exact for both schedule kinds."""
    t0a, t1a = np.asarray(t0, dtype=float), np.asarray(t1, dtype=float)
    if np.any(t0a < 0) or np.any(t1a > 1.0 + 1e-12) or np.any(t0a > t1a):
        raise ValueError("need 0 <= t0 <= t1 <= 1")
    return schedule.integral(t0, t1)


@dataclass(frozen=True)
class KernelMoments:
    """Mean (data/momentum blocks) and shared per-coordinate covariance block."""

    mu_x: np.ndarray
    mu_m: np.ndarray
    sxx: float
    sxm: float
    smm: float

    def __post_init__(self):
        if self.sxx < -1e-12 or self.smm < -1e-12:
            raise NumericError(
                f"negative covariance diagonal: sxx={self.sxx}, smm={self.smm}")
        if self.det < -1e-12:
            raise NumericError(f"covariance block not PSD: det={self.det}")

    @property
    def det(self) -> float:
        return self.sxx * self.smm - self.sxm * self.sxm

    def cov_block(self) -> np.ndarray:
        return np.array([[self.sxx, self.sxm], [self.sxm, self.smm]])

    def mean(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.mu_x), np.atleast_1d(self.mu_m)])


@dataclass(frozen=True)
class CholBlock:
    """Lower Cholesky factor of the covariance block and the entries of its
    inverse transpose (upper triangular)."""

    l_xx: float
    l_xm: float
    l_mm: float
    it_xx: float
    it_xm: float
    it_mm: float

    def lower(self) -> np.ndarray:
        return np.array([[self.l_xx, 0.0], [self.l_xm, self.l_mm]])

    def inv_transpose(self) -> np.ndarray:
        return np.array([[self.it_xx, self.it_xm], [0.0, self.it_mm]])

    def spectral_norm_inv_t(self) -> float:
        """Largest singular value of the inverse-transpose block."""
        return float(np.linalg.norm(self.inv_transpose(), 2))


def _require_critical(params: PsldParams, tol: float = CRITICAL_TOL):
    if abs(params.critical_residual()) > tol:
        raise ValueError(
            "closed-form kernel requires critical damping: "
            f"(gamma - nu)^2 - 4/M = {params.critical_residual():.3e}")


def _phi_entries(gamma: float, nu: float, b):
    """Entries of the mean map Phi(b) (vectorized in b)."""
    b = np.asarray(b, dtype=float)
    decay = np.exp(-0.25 * (gamma + nu) * b)
    a1 = 0.25 * (nu - gamma)
    a2 = 0.125 * (gamma - nu) ** 2
    c1 = -0.5
    c2 = 0.25 * (gamma - nu)
    return (decay * (1.0 + a1 * b), decay * (a2 * b),
            decay * (c1 * b), decay * (1.0 + c2 * b))


def _cov_entries(gamma: float, nu: float, mass: float, b, sxx0, smm0):
    """Covariance block entries Sigma(b) for diagonal Sigma_0 (vectorized)."""
    b = np.asarray(b, dtype=float)
    minv = 1.0 / mass
    a, c = sxx0, smm0
    e = np.exp(-0.5 * (gamma + nu) * b)
    b2 = b * b
    # bracket polynomials, coefficient sets for xx / xm / mm
    p_xx = (0.25 * minv * b2 * a + 0.25 * minv * minv * b2 * c
            + 0.5 * (nu - gamma) * b * a
            - 0.5 * minv * b2 + 0.5 * (gamma - nu) * b + a)
    p_xm = (0.125 * (gamma - nu) * b2 * a + (gamma - nu) ** 3 / 32.0 * b2 * c
            - 0.5 * b * a + 0.5 * minv * b * c + 0.25 * (nu - gamma) * b2)
    p_mm = (0.25 * b2 * a + 0.25 * minv * b2 * c + 0.5 * (gamma - nu) * b * c
            - 0.5 * b2 + 0.5 * mass * (nu - gamma) * b + c)
    sxx = e * (p_xx - 1.0) + 1.0
    sxm = e * p_xm
    smm = e * (p_mm - mass) + mass
    return sxx, sxm, smm


def mean_transition(params: PsldParams, t) -> np.ndarray:
    """2x2 mean map Phi(t) with mu_t = (Phi(t) kron I_d) z_0; critical only."""
    _require_critical(params)
    b = beta_integral(params.beta, 0.0, t)
    pxx, pxm, pmx, pmm = _phi_entries(params.gamma, params.nu, b)
    return np.array([[pxx, pxm], [pmx, pmm]])


def kernel_moments_dsm(params: PsldParams, z0: np.ndarray, sxx0: float,
                       smm0: float, t: float) -> KernelMoments:
    """Kernel moments conditioned on a full initial state z0 = (x0, m0) with
    diagonal initial covariance block diag(sxx0, smm0)."""
    _require_critical(params)
    z0 = np.asarray(z0, dtype=float)
    d = z0.shape[-1] // 2
    x0, m0 = z0[..., :d], z0[..., d:]
    b = float(beta_integral(params.beta, 0.0, t))
    pxx, pxm, pmx, pmm = _phi_entries(params.gamma, params.nu, b)
    sxx, sxm, smm = _cov_entries(params.gamma, params.nu, params.mass,
                                 b, sxx0, smm0)
    return KernelMoments(
        mu_x=pxx * x0 + pxm * m0,
        mu_m=pmx * x0 + pmm * m0,
        sxx=float(sxx), sxm=float(sxm), smm=float(smm),
    )


def kernel_moments_hsm(params: PsldParams, x0: np.ndarray, t: float) -> KernelMoments:
    """Kernel moments with the initial momentum marginalized out:
    m0 = 0, Sigma_0 = diag(0, M * gamma0)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    z0 = np.concatenate([x0, np.zeros_like(x0)], axis=-1)
    return kernel_moments_dsm(params, z0, 0.0, params.mass * params.gamma0, t)


def _coerce_sigma0(sigma0) -> np.ndarray:
    s = np.asarray(sigma0, dtype=float)
    if s.ndim == 0:
        return np.array([[float(s)]])
    if s.ndim == 1:
        return np.diag(s)
    return s


def kernel_moments_ode_oracle(model: PsldParams | RecipeSpec, z0: np.ndarray,
                              sigma0, t: float,
                              step: float = DEFAULT_ORACLE_STEP,
                              t_record=None):
    """Ground-truth kernel moments by fixed-step RK4 on the moment ODEs
        d mu/dt = F(t) mu,   d Sigma/dt = F Sigma + Sigma F^T + G G^T.

    Independent of the closed forms: works for non-critical parameters and for
    any block process (e.g. the non-augmented VP special case).  When
    `t_record` is given, returns a list of KernelMoments at those times (which
    must be multiples of `step` up to rounding); otherwise a single
    KernelMoments at time t.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if isinstance(model, PsldParams):
        a_mat = 0.5 * np.array([[-model.gamma, model.mass_inv],
                                [-1.0, -model.nu]])
        w_mat = np.array([[model.gamma, 0.0],
                          [0.0, model.mass * model.nu]])
        beta = model.beta
        naux = 1
    else:
        if model.d_block is None:
            raise ValueError("oracle needs a block-structured process")
        nb = model.d_block.shape[0]
        h_diag = np.ones(nb)
        if model.dim_m:
            h_diag[-1] = model.mass_inv
        a_mat = -(model.d_block + model.q_block) * h_diag[None, :]
        w_mat = 2.0 * model.d_block
        beta = model.beta
        naux = 1 if nb == 2 else 0

    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    nb = a_mat.shape[0]
    d = z0.shape[-1] // nb
    blocks = z0.reshape(nb, d) if d else z0.reshape(nb, 1)
    sig = _coerce_sigma0(sigma0)
    if sig.shape != (nb, nb):
        raise ValueError(f"sigma0 must be {nb}x{nb}")

    targets = [float(t)] if t_record is None else [float(v) for v in t_record]
    n_steps = int(round(max(targets) / step))
    record_idx = {int(round(v / step)): v for v in targets}
    for k, v in record_idx.items():
        if abs(k * step - v) > 1e-9:
            raise ValueError(f"record time {v} is not a multiple of step {step}")

    if beta.kind == "constant":
        bc = beta.beta_const
        beta_f = lambda tt: bc
    else:
        b0, b1 = beta.beta_min, beta.beta_max - beta.beta_min
        beta_f = lambda tt: b0 + b1 * tt

    if nb == 2:
        states = _rk4_block2(a_mat, w_mat, sig, beta_f, n_steps, step,
                             record_idx)
    else:
        states = _rk4_block1(float(a_mat[0, 0]), float(w_mat[0, 0]),
                             float(sig[0, 0]), beta_f, n_steps, step,
                             record_idx)
    out = [_oracle_moments(phi, sigma, blocks, naux) for phi, sigma in states]
    return out if t_record is not None else out[-1]


def _rk4_block2(a_mat, w_mat, sig0, beta_f, n_steps, step, record_idx):
    """Plain-float RK4 on the 2x2 fundamental matrix and covariance block."""
    a00, a01 = float(a_mat[0, 0]), float(a_mat[0, 1])
    a10, a11 = float(a_mat[1, 0]), float(a_mat[1, 1])
    w00, w01, w11 = float(w_mat[0, 0]), float(w_mat[0, 1]), float(w_mat[1, 1])
    p00, p01, p10, p11 = 1.0, 0.0, 0.0, 1.0
    s00, s01, s11 = float(sig0[0, 0]), float(sig0[0, 1]), float(sig0[1, 1])

    def drv(tt, q00, q01, q10, q11, c00, c01, c11):
        bt = beta_f(tt)
        f00, f01, f10, f11 = bt * a00, bt * a01, bt * a10, bt * a11
        return (
            f00 * q00 + f01 * q10, f00 * q01 + f01 * q11,
            f10 * q00 + f11 * q10, f10 * q01 + f11 * q11,
            2.0 * (f00 * c00 + f01 * c01) + bt * w00,
            f10 * c00 + f11 * c01 + f00 * c01 + f01 * c11 + bt * w01,
            2.0 * (f10 * c01 + f11 * c11) + bt * w11,
        )

    states = []
    if 0 in record_idx:
        states.append((np.array([[p00, p01], [p10, p11]]),
                       np.array([[s00, s01], [s01, s11]])))
    h, h2, h6 = step, 0.5 * step, step / 6.0
    y = (p00, p01, p10, p11, s00, s01, s11)
    for k in range(n_steps):
        tt = k * h
        k1 = drv(tt, *y)
        k2 = drv(tt + h2, *(yi + h2 * ki for yi, ki in zip(y, k1)))
        k3 = drv(tt + h2, *(yi + h2 * ki for yi, ki in zip(y, k2)))
        k4 = drv(tt + h, *(yi + h * ki for yi, ki in zip(y, k3)))
        y = tuple(yi + h6 * (a + 2 * b + 2 * c + d)
                  for yi, a, b, c, d in zip(y, k1, k2, k3, k4))
        if (k + 1) in record_idx:
            p00, p01, p10, p11, s00, s01, s11 = y
            states.append((np.array([[p00, p01], [p10, p11]]),
                           np.array([[s00, s01], [s01, s11]])))
    return states


def _rk4_block1(a00, w00, s0, beta_f, n_steps, step, record_idx):
    """Scalar variant for non-augmented processes."""
    p, s = 1.0, s0
    states = []
    if 0 in record_idx:
        states.append((np.array([[p]]), np.array([[s]])))
    h, h2, h6 = step, 0.5 * step, step / 6.0
    for k in range(n_steps):
        tt = k * h

        def drv(ttt, q, c):
            bt = beta_f(ttt)
            return bt * a00 * q, 2.0 * bt * a00 * c + bt * w00

        k1p, k1s = drv(tt, p, s)
        k2p, k2s = drv(tt + h2, p + h2 * k1p, s + h2 * k1s)
        k3p, k3s = drv(tt + h2, p + h2 * k2p, s + h2 * k2s)
        k4p, k4s = drv(tt + h, p + h * k3p, s + h * k3s)
        p += h6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        s += h6 * (k1s + 2 * k2s + 2 * k3s + k4s)
        if (k + 1) in record_idx:
            states.append((np.array([[p]]), np.array([[s]])))
    return states


def _oracle_moments(phi, sigma, blocks, naux) -> KernelMoments:
    mu = phi @ blocks
    if naux:
        return KernelMoments(mu_x=mu[0], mu_m=mu[1], sxx=float(sigma[0, 0]),
                             sxm=float(sigma[0, 1]), smm=float(sigma[1, 1]))
    return KernelMoments(mu_x=mu[0], mu_m=np.zeros(0),
                         sxx=float(sigma[0, 0]), sxm=0.0, smm=0.0)


def _chol_entries(sxx, sxm, smm, eps_diag):
    """Vectorized analytic 2x2 Cholesky and inverse-transpose entries."""
    sxx_e = np.asarray(sxx, dtype=float) + eps_diag
    disc = np.asarray(sxx, dtype=float) * smm - np.asarray(sxm) ** 2 + eps_diag
    if np.any(sxx_e <= 0) or np.any(disc <= 0):
        raise NumericError("covariance block not positive definite")
    l_xx = np.sqrt(sxx_e)
    l_xm = np.asarray(sxm) / l_xx
    l_mm = np.sqrt(disc) / l_xx
    it_xx = 1.0 / l_xx
    it_mm = 1.0 / l_mm
    it_xm = -l_xm * it_xx * it_mm
    return l_xx, l_xm, l_mm, it_xx, it_xm, it_mm


def chol_block(m: KernelMoments, eps_diag: float = 0.0) -> CholBlock:
    """Analytic lower Cholesky of the covariance block with optional diagonal
    stabilizer (1e-9 during training, per the sampling-time perturbation)."""
    if m.det + eps_diag < -1e-12:
        raise NumericError(f"negative Cholesky discriminant: {m.det}")
    vals = _chol_entries(m.sxx, m.sxm, m.smm, eps_diag)
    return CholBlock(*(float(v) for v in vals))


def perturb_sample(params: PsldParams, t, eps: np.ndarray,
                   x0: np.ndarray | None = None, z0: np.ndarray | None = None,
                   eps_diag: float = CHOL_STAB_EPS):
    """Draw z_t = mu_t + (L_t kron I_d) eps from the perturbation kernel.

    Exactly one of x0 (momentum marginalized; shape (n, d)) or z0 (full state;
    shape (n, 2d), point mass at z0) must be given.  t may be a scalar or one
    time per row.  Returns (z_t, eps); eps has shape (n, 2d).
    """
    if (x0 is None) == (z0 is None):
        raise ValueError("pass exactly one of x0 or z0")
    _require_critical(params)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < TRAIN_EPS):
        raise ValueError(
            f"t below the training cutoff {TRAIN_EPS}: kernel is singular near 0")

    if x0 is not None:
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        n, d = x0.shape
        m0 = np.zeros_like(x0)
        sxx0, smm0 = 0.0, params.mass * params.gamma0
    else:
        z0 = np.atleast_2d(np.asarray(z0, dtype=float))
        n, two_d = z0.shape
        d = two_d // 2
        x0, m0 = z0[:, :d], z0[:, d:]
        sxx0, smm0 = 0.0, 0.0

    eps = np.asarray(eps, dtype=float).reshape(n, 2 * d)
    b = beta_integral(params.beta, 0.0, t_arr)
    b = np.broadcast_to(b, (n,)) if np.ndim(b) else np.full(n, float(b))
    pxx, pxm, pmx, pmm = _phi_entries(params.gamma, params.nu, b)
    sxx, sxm, smm = _cov_entries(params.gamma, params.nu, params.mass,
                                 b, sxx0, smm0)
    l_xx, l_xm, l_mm, *_ = _chol_entries(sxx, sxm, smm, eps_diag)

    col = lambda v: v[:, None]
    mu_x = col(pxx) * x0 + col(pxm) * m0
    mu_m = col(pmx) * x0 + col(pmm) * m0
    ex, em = eps[:, :d], eps[:, d:]
    zx = mu_x + col(l_xx) * ex
    zm = mu_m + col(l_xm) * ex + col(l_mm) * em
    return np.concatenate([zx, zm], axis=1), eps


def equilibrium_moments(params: PsldParams, dim: int):
    """Stationary-state mean and covariance block: (0, diag(1, M))."""
    return (np.zeros(2 * dim),
            np.array([[1.0, 0.0], [0.0, params.mass]]))


def vp_kernel_moments(beta: BetaSchedule, x0: np.ndarray, sxx0: float,
                      t: float) -> KernelMoments:
    """Closed form for the non-augmented special case:
    mean e^{-B/2} x0, variance sxx0 e^{-B} + (1 - e^{-B})."""
    b = float(beta_integral(beta, 0.0, t))
    e = math.exp(-b)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return KernelMoments(mu_x=math.exp(-0.5 * b) * x0, mu_m=np.zeros(0),
                         sxx=sxx0 * e + (1.0 - e), sxm=0.0, smm=0.0)
