"""Reverse-time generation.

Three integrators for the reverse SDE / probability-flow ODE of the
phase-space process:

  * Euler-Maruyama on the full reverse SDE,
  * a symmetric splitting scheme alternating an exactly solvable Gaussian
    flow (the score-free part of the reverse SDE, solved in closed form under
    critical damping) with an Euler step on the score part, and
  * an adaptive embedded Runge-Kutta 5(4) pair (Dormand-Prince coefficients)
    on the probability-flow ODE, vectorized over chains with per-chain step
    control so function-evaluation counts are recorded per trajectory.

Reverse-process time tau runs over (0, T - eps_end) with T = 1; a state at
reverse time tau sits at forward time T - tau.  Score functions are always
called with forward time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .kernel import _cov_entries, _phi_entries, beta_integral, chol_block, kernel_moments_hsm
from .recipe import PsldParams

T_END = 1.0


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "em"                # em | sscs | ode
    nfe_budget: int = 1000          # N for em/sscs
    striding: str = "uniform"       # uniform | quadratic
    eps_end: float = 1e-3
    denoise_last: bool = True
    ode_rtol: float = 1e-5
    ode_atol: float = 1e-5
    max_ode_steps: int = 100_000
    record_trajectory: bool = False

    def __post_init__(self):
        if self.kind not in ("em", "sscs", "ode"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.striding not in ("uniform", "quadratic"):
            raise ValueError(f"unknown striding {self.striding!r}")
        if not 0.0 < self.eps_end < 1.0:
            raise ValueError("eps_end must lie in (0, 1)")
        if self.nfe_budget < 1:
            raise ValueError("nfe_budget must be >= 1")
        if self.kind == "ode" and (self.ode_rtol <= 0 or self.ode_atol <= 0):
            raise ValueError("ODE tolerances must be positive")


@dataclass
class SampleRun:
    states: np.ndarray                # (n, 2d) final reverse-time states
    nfe_used: int                     # score evaluations (mean, ceil, for ode)
    nfe_per_chain: np.ndarray | None = None
    trajectory: np.ndarray | None = None

    def data(self, d: int) -> np.ndarray:
        return self.states[:, :d]


def quadratic_raw(n: int) -> np.ndarray:
    """Raw quadratic striding anchors (i/N)^2 for i in [0, N)."""
    i = np.arange(n)
    return (i / n) ** 2


def timestep_grid(config: SamplerConfig) -> np.ndarray:
    """Monotone reverse-time grid tau_0 = 0 < ... < tau_N = T - eps_end.

    Uniform striding spaces the grid evenly.  Quadratic striding rescales the
    raw (i/N)^2 anchors affinely onto the full interval, oriented so the fine
    end of the grid sits at late reverse time (small forward time, where
    score evaluations matter most); the first state is evaluated exactly at
    forward time T.
    """
    n = config.nfe_budget
    span = T_END - config.eps_end
    if config.striding == "uniform":
        return np.linspace(0.0, span, n + 1)
    i = np.arange(n + 1)
    return span * (1.0 - ((n - i) / n) ** 2)


def prior_sample(params: PsldParams, n: int, dim: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Draw from the stationary state N(0, I_d) x N(0, M I_d)."""
    x = rng.standard_normal((n, dim))
    m = math.sqrt(params.mass) * rng.standard_normal((n, dim))
    return np.concatenate([x, m], axis=1)


def reverse_drift(params: PsldParams, score_fn, z: np.ndarray, t_fwd,
                  score: np.ndarray | None = None) -> np.ndarray:
    """Reverse-SDE drift (in reverse time):
    (beta/2) (Gamma x - M^-1 m + 2 Gamma s_x, x + nu m + 2 M nu s_m)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    d = z.shape[1] // 2
    x, m = z[:, :d], z[:, d:]
    s = np.atleast_2d(score_fn(z, t_fwd)) if score is None else np.atleast_2d(score)
    sx, sm = s[:, :d], s[:, d:]
    beta_t = np.asarray(params.beta(t_fwd), dtype=float)
    bt = beta_t[:, None] if beta_t.ndim else float(beta_t)
    drift_x = x * params.gamma - m * params.mass_inv + 2.0 * params.gamma * sx
    drift_m = x + params.nu * m + 2.0 * params.mass * params.nu * sm
    return 0.5 * np.concatenate([drift_x, drift_m], axis=1) * bt


def pf_ode_drift(params: PsldParams, score_fn, z: np.ndarray, t_fwd) -> np.ndarray:
    """Probability-flow drift: single-weighted score terms
    (beta/2)(Gamma x - M^-1 m + Gamma s_x, x + nu m + M nu s_m)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    d = z.shape[1] // 2
    x, m = z[:, :d], z[:, d:]
    s = np.atleast_2d(score_fn(z, t_fwd))
    sx, sm = s[:, :d], s[:, d:]
    beta_t = np.asarray(params.beta(t_fwd), dtype=float)
    bt = beta_t[:, None] if beta_t.ndim else float(beta_t)
    drift_x = x * params.gamma - m * params.mass_inv + params.gamma * sx
    drift_m = x + params.nu * m + params.mass * params.nu * sm
    return 0.5 * np.concatenate([drift_x, drift_m], axis=1) * bt


def _check_finite(z: np.ndarray, step: int):
    if not np.all(np.isfinite(z)):
        raise NumericError(f"non-finite state at sampler step {step}")


def _denoise_step(params: PsldParams, score_fn, z: np.ndarray,
                  eps_end: float) -> np.ndarray:
    """Final noise-free Euler step of size eps_end at forward time eps_end."""
    return z + eps_end * reverse_drift(params, score_fn, z, eps_end)


def em_sample(params: PsldParams, score_fn, config: SamplerConfig, n: int,
              dim: int, rng: np.random.Generator) -> SampleRun:
    """Euler-Maruyama on the reverse SDE from the stationary prior."""
    taus = timestep_grid(config)
    z = prior_sample(params, n, dim, rng)
    traj = [z.copy()] if config.record_trajectory else None
    nfe = 0
    for i in range(len(taus) - 1):
        t_fwd = T_END - taus[i]
        dt = taus[i + 1] - taus[i]
        drift = reverse_drift(params, score_fn, z, t_fwd)
        nfe += 1
        beta_t = float(params.beta(t_fwd))
        eps = rng.standard_normal((n, 2 * dim))
        noise_x = math.sqrt(params.gamma * beta_t * dt) * eps[:, :dim]
        noise_m = math.sqrt(params.mass * params.nu * beta_t * dt) * eps[:, dim:]
        z = z + dt * drift + np.concatenate([noise_x, noise_m], axis=1)
        _check_finite(z, i)
        if traj is not None:
            traj.append(z.copy())
    if config.denoise_last:
        z = _denoise_step(params, score_fn, z, config.eps_end)
        nfe += 1
        _check_finite(z, len(taus))
        if traj is not None:
            traj.append(z.copy())
    return SampleRun(states=z, nfe_used=nfe,
                     trajectory=np.stack(traj) if traj else None)


def sscs_analytic_halfstep(params: PsldParams, z: np.ndarray, t_rev: float,
                           h: float):
    """Exact Gaussian flow of the score-free part of the reverse SDE over the
    reverse-time interval (t_rev, t_rev + h).

    Returns (mean (n, 2d), (sxx, sxm, smm)); the caller draws the Gaussian.
    The flow is the forward transition conjugated by the momentum flip
    diag(1, -1), evaluated at b = integral of beta over the matching
    forward-time interval; its covariance therefore shares the forward
    bracket with the off-diagonal entry negated (the exponential relaxation
    term again carries decay rate +(Gamma+nu)/2, fixed against the moment
    oracle).
    """
    if abs(params.critical_residual()) > 1e-9:
        raise ValueError("analytic splitting flow requires critical damping")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    d = z.shape[1] // 2
    t_lo = max(T_END - t_rev - h, 0.0)
    b = float(beta_integral(params.beta, t_lo, T_END - t_rev))
    pxx, pxm, pmx, pmm = _phi_entries(params.gamma, params.nu, b)
    sxx, sxm, smm = _cov_entries(params.gamma, params.nu, params.mass, b,
                                 0.0, 0.0)
    x, m = z[:, :d], z[:, d:]
    mean = np.concatenate([pxx * x - pxm * m, -pmx * x + pmm * m], axis=1)
    return mean, (float(sxx), -float(sxm), float(smm))


def _draw_halfstep(params, z, t_rev, h, rng):
    mean, (sxx, sxm, smm) = sscs_analytic_halfstep(params, z, t_rev, h)
    n = mean.shape[0]
    d = mean.shape[1] // 2
    if sxx <= 0 and smm <= 0:
        return mean
    lxx = math.sqrt(max(sxx, 0.0))
    lxm = sxm / lxx if lxx > 0 else 0.0
    lmm = math.sqrt(max(smm - lxm * lxm, 0.0))
    eps = rng.standard_normal((n, 2 * d))
    dx = lxx * eps[:, :d]
    dm = lxm * eps[:, :d] + lmm * eps[:, d:]
    return mean + np.concatenate([dx, dm], axis=1)


def sscs_sample(params: PsldParams, score_fn, config: SamplerConfig, n: int,
                dim: int, rng: np.random.Generator) -> SampleRun:
    """Symmetric splitting sampler: analytic half-step, Euler score step,
    analytic half-step, with a final noise-free denoising step."""
    taus = timestep_grid(config)
    z = prior_sample(params, n, dim, rng)
    traj = [z.copy()] if config.record_trajectory else None
    nfe = 0
    for i in range(len(taus) - 1):
        t_rev = taus[i]
        t_fwd = T_END - t_rev
        dt = taus[i + 1] - taus[i]
        z = _draw_halfstep(params, z, t_rev, 0.5 * dt, rng)
        s = np.atleast_2d(score_fn(z, t_fwd))
        nfe += 1
        beta_t = float(params.beta(t_fwd))
        x, m = z[:, :dim], z[:, dim:]
        sx, sm = s[:, :dim], s[:, dim:]
        kick_x = params.gamma * x + params.gamma * sx
        kick_m = params.nu * m + params.mass * params.nu * sm
        z = z + dt * beta_t * np.concatenate([kick_x, kick_m], axis=1)
        z = _draw_halfstep(params, z, t_rev, 0.5 * dt, rng)
        _check_finite(z, i)
        if traj is not None:
            traj.append(z.copy())
    if config.denoise_last:
        z = _denoise_step(params, score_fn, z, config.eps_end)
        nfe += 1
        _check_finite(z, len(taus))
        if traj is not None:
            traj.append(z.copy())
    return SampleRun(states=z, nfe_used=nfe,
                     trajectory=np.stack(traj) if traj else None)


# ---------------------------------------------------------------------------
# adaptive embedded RK 5(4), Dormand-Prince coefficients, per-chain control

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])
_DP_ERR = _DP_B5 - _DP_B4

_SAFETY = 0.9
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0
_H_INIT = 1e-3
_H_MIN = 1e-13
_H_FACTOR_MIN, _H_FACTOR_MAX = 0.2, 5.0


def ode_sample(params: PsldParams, score_fn, config: SamplerConfig, n: int,
               dim: int, rng: np.random.Generator) -> SampleRun:
    """Probability-flow ODE with adaptive per-chain step control.

    Each chain advances with its own step size under a PI controller
    (safety 0.9, initial step 1e-3); score evaluations are counted per
    trajectory and `nfe_used` reports the ceiling of the mean.  The map is
    deterministic given the prior draw.
    """
    tau_end = T_END - config.eps_end
    z = prior_sample(params, n, dim, rng)
    width = 2 * dim

    def rhs(tau, y):
        # reverse-time ODE: dz/dtau = pf drift at forward time T - tau
        return pf_ode_drift(params, score_fn, y, T_END - tau)

    tau = np.zeros(n)
    h = np.full(n, _H_INIT)
    err_prev = np.ones(n)
    done = np.zeros(n, dtype=bool)
    nfe = np.zeros(n, dtype=np.int64)
    k = np.zeros((n, 7, width))

    k[:, 0] = rhs(tau, z)
    nfe += 1
    steps = 0
    while not done.all():
        steps += 1
        if steps > config.max_ode_steps:
            raise NumericError(
                f"ODE sampler exceeded max_ode_steps={config.max_ode_steps} "
                f"({int((~done).sum())} chains unfinished)")
        act = ~done
        h_act = np.minimum(h[act], tau_end - tau[act])
        idx = np.where(act)[0]
        y0 = z[idx]
        t0 = tau[idx]
        for s in range(1, 7):
            incr = np.einsum("j,njd->nd", _DP_A[s - 1], k[idx, :s])
            y_s = y0 + h_act[:, None] * incr
            k[idx, s] = rhs(t0 + _DP_C[s] * h_act, y_s)
        nfe[idx] += 6
        y5 = y0 + h_act[:, None] * np.einsum("j,njd->nd", _DP_B5, k[idx])
        err_vec = h_act[:, None] * np.einsum("j,njd->nd", _DP_ERR, k[idx])
        scale = config.ode_atol + config.ode_rtol * np.maximum(np.abs(y0),
                                                               np.abs(y5))
        err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
        err = np.maximum(err, 1e-16)

        accept = err <= 1.0
        acc_idx = idx[accept]
        if acc_idx.size:
            z[acc_idx] = y5[accept]
            tau[acc_idx] = t0[accept] + h_act[accept]
            k[acc_idx, 0] = k[acc_idx, 6]  # FSAL
            _check_finite(z[acc_idx], steps)
            newly_done = tau[acc_idx] >= tau_end - 1e-14
            done[acc_idx[newly_done]] = True

        factor = _SAFETY * err ** (-_PI_ALPHA) * err_prev[idx] ** _PI_BETA
        factor = np.clip(factor, _H_FACTOR_MIN, _H_FACTOR_MAX)
        factor[~accept] = np.minimum(factor[~accept], 1.0)
        h[idx] = h_act * factor
        err_prev[idx] = np.where(accept, err, err_prev[idx])
        if np.any(h[idx[~done[idx]]] < _H_MIN):
            raise NumericError(
                f"ODE step size underflow below {_H_MIN} at iteration {steps}")

    if config.denoise_last:
        z = _denoise_step(params, score_fn, z, config.eps_end)
        nfe += 1
        _check_finite(z, steps + 1)
    return SampleRun(states=z, nfe_used=int(math.ceil(nfe.mean())),
                     nfe_per_chain=nfe)


def sample(params: PsldParams, score_fn, config: SamplerConfig, n: int,
           dim: int, rng: np.random.Generator) -> SampleRun:
    """Dispatch on config.kind."""
    fn = {"em": em_sample, "sscs": sscs_sample, "ode": ode_sample}[config.kind]
    return fn(params, score_fn, config, n, dim, rng)


def error_coefficients(params: PsldParams, t: float):
    """Error-scaling pair (Gamma^2 i_xx, Gamma^2 i_xm - nu i_mm) built from
    the inverse-transpose Cholesky entries of the marginalized kernel; these
    scale the data- and momentum-noise prediction errors accumulated by two
    consecutive Euler reverse steps."""
    if t < 1e-5:
        raise ValueError("t below the kernel cutoff 1e-5")
    moments = kernel_moments_hsm(params, np.zeros(1), t)
    chol = chol_block(moments, eps_diag=0.0)
    lam1 = params.gamma ** 2 * chol.it_xx
    lam2 = params.gamma ** 2 * chol.it_xm - params.nu * chol.it_mm
    return lam1, lam2
