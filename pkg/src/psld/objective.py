"""Training losses: the epsilon-prediction objective on the
momentum-marginalized kernel, the plain full-state variant, and
score-space losses under selectable weightings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import TRAIN_EPS, _chol_entries, _cov_entries, beta_integral, perturb_sample
from .recipe import PsldParams
from .score import ScoreModel, eps_forward, score_from_eps


@dataclass(frozen=True)
class LossSample:
    """One training draw; z_t is reproducible as mu_t(x0) + L_t eps."""

    t: float
    x0: np.ndarray
    eps: np.ndarray
    z_t: np.ndarray
    loss: float


class LossBatch:
    """Per-sample records of one loss evaluation (variance diagnostics)."""

    def __init__(self, t, x0, eps, z_t, losses):
        self.t = t
        self.x0 = x0
        self.eps = eps
        self.z_t = z_t
        self.losses = losses

    def __len__(self):
        return len(self.losses)

    def __getitem__(self, i) -> LossSample:
        return LossSample(t=float(self.t[i]), x0=self.x0[i], eps=self.eps[i],
                          z_t=self.z_t[i], loss=float(self.losses[i]))


@dataclass(frozen=True)
class TrainingDraws:
    """Explicit randomness for a loss evaluation: per-sample times, unit
    noise, and (full-state conditioning only) initial momenta."""

    t: np.ndarray
    eps: np.ndarray
    m0: np.ndarray | None = None


def draw_training_times(rng: np.random.Generator, n: int,
                        t_min: float = TRAIN_EPS, t_max: float = 1.0):
    return rng.uniform(t_min, t_max, size=n)


def make_draws(rng: np.random.Generator, n: int, d: int,
               params: PsldParams | None = None,
               with_m0: bool = False) -> TrainingDraws:
    t = draw_training_times(rng, n)
    eps = rng.standard_normal((n, 2 * d))
    m0 = None
    if with_m0:
        scale = np.sqrt(params.mass * params.gamma0)
        m0 = scale * rng.standard_normal((n, d))
    return TrainingDraws(t=t, eps=eps, m0=m0)


def _perturb_batch(params, x0, draws, conditioning):
    if conditioning == "hsm":
        z_t, eps = perturb_sample(params, draws.t, draws.eps, x0=x0)
    else:
        if draws.m0 is None:
            raise ValueError("full-state conditioning needs initial momenta")
        z0 = np.concatenate([x0, draws.m0], axis=1)
        z_t, eps = perturb_sample(params, draws.t, draws.eps, z0=z0)
    return z_t, eps


def hsm_eps_loss(model: ScoreModel, x0: np.ndarray, params: PsldParams,
                 rng: np.random.Generator | None = None,
                 draws: TrainingDraws | None = None):
    """Mean over the batch of |eps_theta(mu_t + L_t eps, t) - eps|^2 with the
    initial momentum marginalized out.  Returns (loss, per-sample records)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    if draws is None:
        draws = make_draws(rng, n, d)
    z_t, eps = _perturb_batch(params, x0, draws, "hsm")
    pred = eps_forward(model, z_t, draws.t)
    losses = np.sum((pred - eps) ** 2, axis=1)
    return float(losses.mean()), LossBatch(draws.t, x0, eps, z_t, losses)


def dsm_eps_loss(model: ScoreModel, x0: np.ndarray, params: PsldParams,
                 rng: np.random.Generator | None = None,
                 draws: TrainingDraws | None = None):
    """Same objective conditioned on the full initial state (point mass),
    with m0 ~ N(0, M gamma0 I) drawn per sample."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    if draws is None:
        draws = make_draws(rng, n, d, params=params, with_m0=True)
    z_t, eps = _perturb_batch(params, x0, draws, "dsm")
    pred = eps_forward(model, z_t, draws.t)
    losses = np.sum((pred - eps) ** 2, axis=1)
    return float(losses.mean()), LossBatch(draws.t, x0, eps, z_t, losses)


def hsm_eps_loss_grad(model: ScoreModel, x0: np.ndarray, params: PsldParams,
                      rng: np.random.Generator | None = None,
                      draws: TrainingDraws | None = None):
    """Loss plus exact parameter gradients (reverse mode)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    if draws is None:
        draws = make_draws(rng, n, d)
    z_t, eps = _perturb_batch(params, x0, draws, "hsm")
    pred, cache = model.forward_cached(z_t, draws.t)
    resid = pred - eps
    loss = float(np.sum(resid * resid) / n)
    upstream = 2.0 * resid / n
    grad_w, grad_b, _ = model.backward(cache, upstream)
    return loss, grad_w, grad_b


def inv_t_norms(params: PsldParams, t, smm0: float | None = None):
    """Spectral norm of the inverse-transpose Cholesky block, vectorized
    over t; smm0 defaults to the marginalized kernel's M gamma0."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if smm0 is None:
        smm0 = params.mass * params.gamma0
    b = beta_integral(params.beta, 0.0, t_arr)
    sxx, sxm, smm = _cov_entries(params.gamma, params.nu, params.mass, b,
                                 0.0, smm0)
    _, _, _, it_xx, it_xm, it_mm = _chol_entries(sxx, sxm, smm, 1e-12)
    # largest singular value of [[a, b], [0, c]]
    a2, b2, c2 = it_xx ** 2, it_xm ** 2, it_mm ** 2
    s = a2 + b2 + c2
    lam_max = 0.5 * (s + np.sqrt(np.maximum(s * s - 4.0 * a2 * c2, 0.0)))
    return np.sqrt(lam_max), (it_xx, it_xm, it_mm)


def weighted_score_loss(model, x0: np.ndarray, params: PsldParams,
                        weighting: str = "ml",
                        rng: np.random.Generator | None = None,
                        draws: TrainingDraws | None = None,
                        conditioning: str = "hsm"):
    """Score-space residual |s_theta - grad log p(z_t | .)|^2, weighted per
    draw, conditioning either on the data point alone (momentum
    marginalized, "hsm") or on a sampled full initial state ("dsm").

    weighting "ml": Gamma beta(t) on the data block plus M nu beta(t) on the
    momentum block (the likelihood weighting induced by G G^T).
    weighting "unit": lambda(t) = 1 / |L_t^-T|_2^2 on the joint residual,
    which is upper-bounded by the epsilon loss.

    `model` is a ScoreModel (scored via -L^-T eps_theta) or any callable
    score_fn(z, t).
    """
    if weighting not in ("ml", "unit"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if conditioning not in ("hsm", "dsm"):
        raise ValueError(f"unknown conditioning {conditioning!r}")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    if draws is None:
        draws = make_draws(rng, n, d, params=params,
                           with_m0=conditioning == "dsm")
    z_t, eps = _perturb_batch(params, x0, draws, conditioning)

    smm0 = 0.0 if conditioning == "dsm" else params.mass * params.gamma0
    norms, (it_xx, it_xm, it_mm) = inv_t_norms(params, draws.t, smm0=smm0)
    ex, em = eps[:, :d], eps[:, d:]
    col = lambda v: np.asarray(v)[:, None]
    target_x = -(col(it_xx) * ex + col(it_xm) * em)
    target_m = -col(it_mm) * em

    if isinstance(model, ScoreModel):
        pred_eps = eps_forward(model, z_t, draws.t)
        px, pm = pred_eps[:, :d], pred_eps[:, d:]
        s_x = -(col(it_xx) * px + col(it_xm) * pm)
        s_m = -col(it_mm) * pm
    else:
        s = np.atleast_2d(model(z_t, draws.t))
        s_x, s_m = s[:, :d], s[:, d:]

    res_x = np.sum((s_x - target_x) ** 2, axis=1)
    res_m = np.sum((s_m - target_m) ** 2, axis=1)
    beta_t = params.beta(draws.t)
    if weighting == "ml":
        losses = (params.gamma * beta_t * res_x
                  + params.mass * params.nu * beta_t * res_m)
    else:
        losses = (res_x + res_m) / norms ** 2
    return float(losses.mean()), LossBatch(draws.t, x0, eps, z_t, losses)
