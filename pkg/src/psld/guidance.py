"""Conditional synthesis: classifier guidance on labeled mixtures (exact
class gradients or a small learned time-dependent classifier) and coordinate
imputation via kernel-resampled observed blocks.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ConfigError
from .kernel import perturb_sample
from .recipe import PsldParams
from .sampler import SamplerConfig, T_END, _check_finite, _denoise_step, prior_sample, reverse_drift, timestep_grid
from .score import GmmSpec, ScoreModel, _component_logpdf_and_pulls, marginal_mixture


def guided_score(score_fn, class_grad_fn, weight: float, z, t):
    """s(z, t) + weight * grad_z log p(y | z_t); drop-in score for any sampler."""
    return np.asarray(score_fn(z, t)) + weight * np.asarray(class_grad_fn(z, t))


def make_guided_score_fn(score_fn, class_grad_fn, weight: float):
    return lambda z, t: guided_score(score_fn, class_grad_fn, weight, z, t)


def gmm_class_grad(gmm: GmmSpec, params: PsldParams, t: float, z: np.ndarray,
                   label) -> np.ndarray:
    """Exact grad_z log p(y = label | z_t) for a labeled mixture.

    p(y|z_t) is the total responsibility of the components carrying the
    label under the time-t marginal mixture, so the gradient is the
    difference between label-restricted and unrestricted responsibility
    averages of the Gaussian pulls.
    """
    if gmm.labels is None:
        raise ConfigError("mixture has no component labels")
    mask = gmm.labels == label
    if not mask.any():
        raise ConfigError(f"no component carries label {label!r}")
    z2 = np.atleast_2d(np.asarray(z, dtype=float))
    means, covs = marginal_mixture(gmm, params, t)
    logp, pulls = _component_logpdf_and_pulls(z2, means, covs)
    logj = logp + np.log(gmm.weights)[None, :]
    resp_all = softmax(logj, axis=1)
    masked = np.where(mask[None, :], logj, -np.inf)
    resp_y = softmax(masked, axis=1)
    grad = np.einsum("nk,nkd->nd", resp_y - resp_all, pulls)
    return grad[0] if np.asarray(z).ndim == 1 else grad


def make_gmm_class_grad_fn(gmm: GmmSpec, params: PsldParams, label):
    def grad_fn(z, t):
        t_arr = np.asarray(t, dtype=float)
        if t_arr.ndim == 0:
            return gmm_class_grad(gmm, params, float(t_arr), z, label)
        z2 = np.atleast_2d(z)
        out = np.empty_like(z2)
        for tv in np.unique(t_arr):
            sel = t_arr == tv
            out[sel] = gmm_class_grad(gmm, params, float(tv), z2[sel], label)
        return out

    return grad_fn


# ---------------------------------------------------------------------------
# learned time-dependent classifier


def classifier_log_probs(model: ScoreModel, z, t):
    logits = np.atleast_2d(model.forward_cached(z, t)[0])
    return logits - logsumexp(logits, axis=1, keepdims=True)


def classifier_grad_fn(model: ScoreModel, label: int):
    """grad_z log C^label(z, t) by backprop through the softmax head."""

    def grad_fn(z, t):
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        logits, cache = model.forward_cached(z2, t)
        probs = softmax(logits, axis=1)
        upstream = -probs
        upstream[:, label] += 1.0
        _, _, grad_feat = model.backward(cache, upstream)
        grad = grad_feat[:, : z2.shape[1]]
        return grad[0] if np.asarray(z).ndim == 1 else grad

    return grad_fn


def classifier_loss_grad(model: ScoreModel, z_t, t, labels):
    """Time-dependent cross-entropy -log C^y(z_t, t), mean over batch,
    with exact parameter gradients."""
    z_t = np.atleast_2d(z_t)
    n = z_t.shape[0]
    logits, cache = model.forward_cached(z_t, t)
    logq = logits - logsumexp(logits, axis=1, keepdims=True)
    loss = -float(np.mean(logq[np.arange(n), labels]))
    probs = np.exp(logq)
    upstream = probs.copy()
    upstream[np.arange(n), labels] -= 1.0
    upstream /= n
    grad_w, grad_b, _ = model.backward(cache, upstream)
    return loss, grad_w, grad_b


def train_toy_classifier(x0: np.ndarray, labels: np.ndarray,
                         params: PsldParams, config, rng: np.random.Generator,
                         hidden=(128, 128)) -> ScoreModel:
    """Fit a softmax MLP over perturbed states (z_t, t) by the
    time-dependent cross-entropy; returns the trained model."""
    from .harness.training import adam_train  # deferred: harness owns the loop

    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ConfigError("classifier training needs at least two classes")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n, d = x0.shape
    class_index = {c: i for i, c in enumerate(classes)}
    y = np.array([class_index[c] for c in labels])

    model = ScoreModel.create(dim=d, hidden=hidden, rng=rng,
                              out_dim=classes.size)

    def batch_loss_grad(m, batch_rng):
        idx = batch_rng.integers(0, n, size=config.batch_size)
        t = batch_rng.uniform(1e-5, 1.0, size=config.batch_size)
        eps = batch_rng.standard_normal((config.batch_size, 2 * d))
        z_t, _ = perturb_sample(params, t, eps, x0=x0[idx])
        return classifier_loss_grad(m, z_t, t, y[idx])

    adam_train(model, batch_loss_grad, config, rng)
    return model


# ---------------------------------------------------------------------------
# imputation


def impute_sample(params: PsldParams, score_fn, observed: np.ndarray,
                  mask: np.ndarray, config: SamplerConfig, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Complete the unobserved data coordinates given observed ones.

    mask[j] True marks coordinate j as observed at value observed[j].  Each
    reverse step draws the observed block (position and momentum jointly)
    from the forward kernel at the current time, concatenates it with the
    evolving free block, evaluates the full score, and applies the
    Euler-Maruyama update to the free coordinates only.  Returns (n, 2d)
    states whose observed data coordinates are pinned to the given values.
    """
    mask = np.asarray(mask, dtype=bool)
    d = mask.size
    observed = np.asarray(observed, dtype=float)
    if observed.shape[-1] != d:
        raise ValueError("observed vector and mask sizes differ")
    free = ~mask
    if not mask.any():
        raise ValueError("imputation needs at least one observed coordinate")

    taus = timestep_grid(config)
    z = prior_sample(params, n, d, rng)
    x_obs = np.broadcast_to(observed, (n, d)).copy()

    def paste_observed(z_cur, t_fwd):
        if t_fwd < 1e-5:
            t_fwd = 1e-5
        eps = rng.standard_normal((n, 2 * d))
        z_kernel, _ = perturb_sample(params, t_fwd, eps, x0=x_obs)
        out = z_cur.copy()
        out[:, :d][:, mask] = z_kernel[:, :d][:, mask]
        out[:, d:][:, mask] = z_kernel[:, d:][:, mask]
        return out

    for i in range(len(taus) - 1):
        t_fwd = T_END - taus[i]
        dt = taus[i + 1] - taus[i]
        z = paste_observed(z, t_fwd)
        drift = reverse_drift(params, score_fn, z, t_fwd)
        beta_t = float(params.beta(t_fwd))
        eps = rng.standard_normal((n, 2 * d))
        noise_x = np.sqrt(params.gamma * beta_t * dt) * eps[:, :d]
        noise_m = np.sqrt(params.mass * params.nu * beta_t * dt) * eps[:, d:]
        step = dt * drift + np.concatenate([noise_x, noise_m], axis=1)
        if free.any():
            z[:, :d][:, free] += step[:, :d][:, free]
            z[:, d:][:, free] += step[:, d:][:, free]
        _check_finite(z, i)

    if config.denoise_last and free.any():
        z = paste_observed(z, config.eps_end)
        step = config.eps_end * reverse_drift(params, score_fn, z,
                                              config.eps_end)
        z[:, :d][:, free] += step[:, :d][:, free]
        z[:, d:][:, free] += step[:, d:][:, free]

    z[:, :d][:, mask] = x_obs[:, mask]
    return z
