"""Forward-process construction from a diffusion matrix, a curl matrix and a
quadratic Hamiltonian.

Any SDE written as

    dz = -beta(t) (D + Q) grad_H(z) dt + sqrt(2 beta(t) D) dw

with D positive semidefinite, Q skew-symmetric and H(z) = |x|^2/2 + m^T m / (2M)
keeps N(0, I_d) x N(0, M I_d) stationary.  This module houses the constructors
for the phase-space process and its special cases (CLD, VP), validators for the
(D, Q) structure, and a finite-difference Fokker-Planck residual that checks
stationarity numerically.

D and Q are stored dimensionless (the scalar beta(t) multiplies both), and in
factored 2x2-block-kron-identity form whenever the process is block-structured,
with a dense fallback for hand-built matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

PSD_TOL = -1e-10
SKEW_TOL = 1e-12
CRITICAL_TOL = 1e-9


@dataclass(frozen=True)
class BetaSchedule:
    """Time-dependent scalar multiplier applied to D and Q.

    kind "constant": beta(t) = beta_const (default 8).
    kind "linear":   beta(t) = beta_min + (beta_max - beta_min) t, the usual
    VP-style ramp with defaults 0.1 and 20.
    """

    kind: str = "constant"
    beta_const: float = 8.0
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear"):
            raise ConfigError(f"unknown beta schedule kind: {self.kind!r}")
        if self.kind == "constant" and self.beta_const <= 0:
            raise ConfigError("beta_const must be positive")
        if self.kind == "linear" and (self.beta_min <= 0 or self.beta_max <= 0):
            raise ConfigError("beta_min and beta_max must be positive")

    def __call__(self, t):
        if self.kind == "constant":
            return self.beta_const * np.ones_like(np.asarray(t, dtype=float))
        t = np.asarray(t, dtype=float)
        return self.beta_min + (self.beta_max - self.beta_min) * t

    def integral(self, t0, t1):
        """Exact closed form of int_{t0}^{t1} beta(s) ds (vectorized in t1)."""
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        if self.kind == "constant":
            return self.beta_const * (t1 - t0)
        slope = self.beta_max - self.beta_min
        return self.beta_min * (t1 - t0) + 0.5 * slope * (t1 * t1 - t0 * t0)


def critical_nu(gamma: float, mass_inv: float) -> float:
    """Momentum friction giving critical damping: nu = Gamma + 2 sqrt(M^-1).

    The returned value satisfies (Gamma - nu)^2 = 4 M^-1 exactly.
    """
    if mass_inv <= 0:
        raise ValueError(f"mass_inv must be positive, got {mass_inv}")
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    return gamma + 2.0 * math.sqrt(mass_inv)


@dataclass(frozen=True)
class PsldParams:
    """Scalar parameters of the phase-space forward SDE.

    gamma: position-space noise strength, nu: momentum friction,
    mass_inv: coupling M^-1, gamma0: initial momentum variance factor
    (momentum starts from N(0, M * gamma0 * I)).
    """

    gamma: float
    nu: float
    mass_inv: float
    beta: BetaSchedule = field(default_factory=BetaSchedule)
    gamma0: float = 0.04

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if self.mass_inv <= 0:
            raise ValueError("mass_inv must be positive")
        if self.gamma0 <= 0:
            raise ValueError("gamma0 must be positive")

    @property
    def mass(self) -> float:
        return 1.0 / self.mass_inv

    def critical_residual(self) -> float:
        return (self.gamma - self.nu) ** 2 - 4.0 * self.mass_inv

    def is_critical(self, tol: float = CRITICAL_TOL) -> bool:
        return abs(self.critical_residual()) <= tol

    @classmethod
    def critically_damped(cls, gamma: float, mass_inv: float = 4.0,
                          beta: BetaSchedule | None = None,
                          gamma0: float = 0.04) -> "PsldParams":
        return cls(gamma=gamma, nu=critical_nu(gamma, mass_inv),
                   mass_inv=mass_inv, beta=beta or BetaSchedule(),
                   gamma0=gamma0)


@dataclass(frozen=True)
class RecipeSpec:
    """A forward process defined by constant matrices D (PSD) and Q (skew).

    d_block / q_block hold the per-coordinate 2x2 (or 1x1) scalar blocks; the
    dense matrices are their kron expansion over dim_x coordinates.  Hand-built
    processes may supply dense matrices directly (d_block=None).  The state
    ordering is (x_1..x_d, m_1..m_d).
    """

    dim_x: int
    dim_m: int
    d_mat: np.ndarray
    q_mat: np.ndarray
    mass_inv: float
    beta: BetaSchedule
    d_block: np.ndarray | None = None
    q_block: np.ndarray | None = None

    def __post_init__(self):
        n = self.dim_x + self.dim_m
        if self.dim_x < 1 or self.dim_m < 0:
            raise ValueError("dim_x must be >= 1 and dim_m >= 0")
        if self.dim_m not in (0, self.dim_x):
            raise ValueError("auxiliary dimension must be 0 or equal to dim_x")
        d = np.asarray(self.d_mat, dtype=float)
        q = np.asarray(self.q_mat, dtype=float)
        if d.shape != (n, n) or q.shape != (n, n):
            raise ValueError(
                f"D and Q must be {(n, n)}, got {d.shape} and {q.shape}")
        object.__setattr__(self, "d_mat", d)
        object.__setattr__(self, "q_mat", q)

    @property
    def dim(self) -> int:
        return self.dim_x + self.dim_m

    def grad_hamiltonian(self, z: np.ndarray) -> np.ndarray:
        """grad H for H = |x|^2/2 + m^T m/(2M); z laid out as (..., x | m)."""
        z = np.asarray(z, dtype=float)
        g = z.copy()
        if self.dim_m:
            g[..., self.dim_x:] *= self.mass_inv
        return g

    def diffusion_squared(self, t) -> np.ndarray:
        """G(t) G(t)^T = 2 beta(t) D."""
        return 2.0 * float(self.beta(t)) * self.d_mat

    def drift_matrix(self, t) -> np.ndarray:
        """State matrix F(t) with drift f(z, t) = F(t) z."""
        n = self.dim
        h_diag = np.ones(n)
        if self.dim_m:
            h_diag[self.dim_x:] = self.mass_inv
        return -float(self.beta(t)) * (self.d_mat + self.q_mat) * h_diag[None, :]


@dataclass(frozen=True)
class ValidationReport:
    psd_ok: bool
    skew_ok: bool
    min_eigenvalue: float
    max_skew_defect: float

    @property
    def ok(self) -> bool:
        return self.psd_ok and self.skew_ok


def validate_recipe(spec: RecipeSpec) -> ValidationReport:
    """Check D is PSD (symmetrized eigenvalues >= -1e-10) and Q is
    skew-symmetric (max |Q + Q^T| <= 1e-12)."""
    d = spec.d_mat
    q = spec.q_mat
    if d.shape != q.shape or d.shape[0] != d.shape[1]:
        raise ValueError("D and Q must be square and of equal size")
    sym = 0.5 * (d + d.T)
    min_eig = float(np.linalg.eigvalsh(sym).min())
    skew_defect = float(np.abs(q + q.T).max())
    return ValidationReport(
        psd_ok=min_eig >= PSD_TOL,
        skew_ok=skew_defect <= SKEW_TOL,
        min_eigenvalue=min_eig,
        max_skew_defect=skew_defect,
    )


def recipe_drift(spec: RecipeSpec, z: np.ndarray, t: float) -> np.ndarray:
    """Drift -beta(t) (D + Q) grad_H(z); linear in z, tau vanishes for
    constant matrices."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != spec.dim:
        raise ValueError(f"state length {z.shape[-1]} != {spec.dim}")
    g = spec.grad_hamiltonian(z)
    return -float(spec.beta(t)) * (g @ (spec.d_mat + spec.q_mat).T)


def instantiate_psld(params: PsldParams, dim: int = 1) -> RecipeSpec:
    """Phase-space process: D = (beta/2) diag(Gamma, M nu) kron I,
    Q = (beta/2) [[0,-1],[1,0]] kron I."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    mass = params.mass
    d_block = 0.5 * np.array([[params.gamma, 0.0],
                              [0.0, mass * params.nu]])
    q_block = 0.5 * np.array([[0.0, -1.0],
                              [1.0, 0.0]])
    eye = np.eye(dim)
    return RecipeSpec(
        dim_x=dim, dim_m=dim,
        d_mat=np.kron(d_block, eye), q_mat=np.kron(q_block, eye),
        mass_inv=params.mass_inv, beta=params.beta,
        d_block=d_block, q_block=q_block,
    )


def instantiate_cld(nu_bar: float, mass_inv: float, beta_bar: BetaSchedule,
                    dim: int = 1) -> RecipeSpec:
    """Momentum-only-noise special case: D = beta_bar diag(0, nu_bar) kron I
    with the same curl block as the phase-space process."""
    d_block = np.array([[0.0, 0.0], [0.0, nu_bar]])
    q_block = np.array([[0.0, -1.0], [1.0, 0.0]])
    eye = np.eye(dim)
    return RecipeSpec(
        dim_x=dim, dim_m=dim,
        d_mat=np.kron(d_block, eye), q_mat=np.kron(q_block, eye),
        mass_inv=mass_inv, beta=beta_bar,
        d_block=d_block, q_block=q_block,
    )


def instantiate_vpsde(beta: BetaSchedule | None = None, dim: int = 1) -> RecipeSpec:
    """Non-augmented special case: D = (beta_t/2) I, Q = 0, giving
    dx = -(beta_t/2) x dt + sqrt(beta_t) dw."""
    beta = beta or BetaSchedule(kind="linear")
    d_block = np.array([[0.5]])
    q_block = np.array([[0.0]])
    eye = np.eye(dim)
    return RecipeSpec(
        dim_x=dim, dim_m=0,
        d_mat=np.kron(d_block, eye), q_mat=np.kron(q_block, eye),
        mass_inv=1.0, beta=beta,
        d_block=d_block, q_block=q_block,
    )


def instantiate_vesde(*args, **kwargs):
    """Variance-exploding processes cannot be expressed in this family.

    Zero drift with growing sigma(t) would require (D + Q) grad_H = 0 with
    D != 0, which contradicts D PSD and Q skew for the Gaussian Hamiltonian;
    the kernel variance grows without bound instead of converging to the
    stationary Gaussian.  Always raises.
    """
    raise ConfigError(
        "variance-exploding SDE has zero drift and unbounded kernel variance; "
        "it does not converge to the Gaussian stationary state and cannot be "
        "built from a PSD/skew matrix pair")


def stationarity_residual(spec: RecipeSpec, h: float = 0.02,
                          extent: float = 6.0, t: float = 0.0) -> float:
    """Max |d p / d t| at the claimed stationary Gaussian, normalized by max p.

    Evaluates the Fokker-Planck right-hand side
        -sum_i d_i(f_i p) + sum_ij D_ij d_i d_j p
    on a rectangular grid by fourth-order central differences and returns the
    normalized sup over interior points.  Decays like O(h^2..h^4) under grid
    refinement for any valid (D, Q) pair; order-one for a corrupted Q.
    """
    if spec.dim > 2:
        raise ValueError("residual grid only feasible for total dimension <= 2")
    if h > 0.1:
        raise ValueError(f"grid too coarse: h={h} > 0.1")

    n_side = int(round(2 * extent / h)) + 1
    axis = np.linspace(-extent, extent, n_side)
    f_mat = spec.drift_matrix(t)
    d_full = spec.diffusion_squared(t) / 2.0  # FP uses D_ij = (GG^T)_ij / 2

    if spec.dim == 1:
        x = axis
        p = np.exp(-0.5 * x * x)
        fp = (f_mat[0, 0] * x) * p
        rhs = -_d1(fp, h, 0) + d_full[0, 0] * _d2(p, h, 0)
        interior = slice(4, -4)
        return float(np.abs(rhs[interior]).max() / p.max())

    xg, mg = np.meshgrid(axis, axis, indexing="ij")
    p = np.exp(-0.5 * xg * xg - 0.5 * spec.mass_inv * mg * mg)
    fx = f_mat[0, 0] * xg + f_mat[0, 1] * mg
    fm = f_mat[1, 0] * xg + f_mat[1, 1] * mg
    rhs = -_d1(fx * p, h, 0) - _d1(fm * p, h, 1)
    rhs += d_full[0, 0] * _d2(p, h, 0) + d_full[1, 1] * _d2(p, h, 1)
    rhs += 2.0 * d_full[0, 1] * _d1(_d1(p, h, 0), h, 1)
    interior = (slice(4, -4), slice(4, -4))
    return float(np.abs(rhs[interior]).max() / p.max())


def _d1(a, h, axis):
    """Fourth-order central first derivative (second-order near edges)."""
    out = np.gradient(a, h, axis=axis, edge_order=2)
    inner = [slice(None)] * a.ndim
    inner[axis] = slice(2, -2)
    idx = lambda s: tuple(
        slice(2 + s, a.shape[axis] - 2 + s) if i == axis else slice(None)
        for i in range(a.ndim))
    out[tuple(inner)] = (
        a[idx(-2)] - 8 * a[idx(-1)] + 8 * a[idx(1)] - a[idx(2)]) / (12 * h)
    return out


def _d2(a, h, axis):
    """Fourth-order central second derivative (second-order near edges)."""
    idx = lambda s, pad: tuple(
        slice(pad + s, a.shape[axis] - pad + s) if i == axis else slice(None)
        for i in range(a.ndim))
    out = np.empty_like(a)
    out[idx(0, 1)] = (a[idx(-1, 1)] - 2 * a[idx(0, 1)] + a[idx(1, 1)]) / (h * h)
    edge_lo = [slice(None)] * a.ndim
    edge_lo[axis] = slice(0, 1)
    edge_hi = [slice(None)] * a.ndim
    edge_hi[axis] = slice(-1, None)
    near_lo = [slice(None)] * a.ndim
    near_lo[axis] = slice(1, 2)
    near_hi = [slice(None)] * a.ndim
    near_hi[axis] = slice(-2, -1)
    out[tuple(edge_lo)] = out[tuple(near_lo)]
    out[tuple(edge_hi)] = out[tuple(near_hi)]
    out[idx(0, 2)] = (
        -a[idx(-2, 2)] + 16 * a[idx(-1, 2)] - 30 * a[idx(0, 2)]
        + 16 * a[idx(1, 2)] - a[idx(2, 2)]) / (12 * h * h)
    return out
