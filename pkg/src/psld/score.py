"""Score representations.

Two routes to the marginal score grad log p_t(z):
  * an exact oracle for Gaussian-mixture data, propagated through the linear
    mean map and the additive kernel noise (responsibilities in log space), and
  * a small feedforward noise predictor eps_theta(z, t) with sinusoidal time
    features and hand-written reverse-mode gradients, scored through
    s = -L^-T eps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp, softmax

from .errors import ConfigError
from .kernel import CholBlock, _cov_entries, _phi_entries, beta_integral
from .recipe import PsldParams

DEFAULT_HIDDEN = (128, 128)
DEFAULT_TIME_FREQS = 32


@dataclass(frozen=True)
class GmmSpec:
    """Weighted Gaussian mixture over the augmented initial state z0.

    means: (K, 2d) component means (momentum block typically zero).
    covs:  (K, 2d, 2d) component covariances; `from_blocks` expands shared
           per-coordinate 2x2 blocks, full matrices allow correlated data.
    labels: optional per-component class ids for guidance.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cv = np.asarray(self.covs, dtype=float)
        if cv.ndim == 2:
            cv = cv[None]
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()}, not 1")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        k, two_d = mu.shape
        if cv.shape != (k, two_d, two_d):
            raise ValueError(f"covs must be {(k, two_d, two_d)}, got {cv.shape}")
        for c in cv:
            if np.linalg.eigvalsh(0.5 * (c + c.T)).min() < -1e-10:
                raise ValueError("component covariance not PSD")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cv)
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (k,):
                raise ValueError("labels must have one entry per component")
            object.__setattr__(self, "labels", lab)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1] // 2

    @classmethod
    def from_blocks(cls, weights, means, blocks, labels=None) -> "GmmSpec":
        """Expand per-coordinate 2x2 covariance blocks to full matrices."""
        means = np.atleast_2d(np.asarray(means, dtype=float))
        d = means.shape[1] // 2
        blocks = np.asarray(blocks, dtype=float)
        if blocks.ndim == 2:
            blocks = np.broadcast_to(blocks, (means.shape[0], 2, 2))
        covs = np.stack([np.kron(b, np.eye(d)) for b in blocks])
        return cls(weights=weights, means=means, covs=covs, labels=labels)

    def sample_x(self, n: int, rng: np.random.Generator):
        """Draw n data-space points and their component labels."""
        d = self.dim
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        out = np.empty((n, d))
        for k in range(self.n_components):
            idx = comp == k
            m = int(idx.sum())
            if not m:
                continue
            cov_x = self.covs[k][:d, :d]
            out[idx] = rng.multivariate_normal(self.means[k][:d], cov_x, size=m)
        labels = self.labels[comp] if self.labels is not None else comp
        return out, labels


def _expand_map(phi: np.ndarray, d: int) -> np.ndarray:
    """Blow the 2x2 per-coordinate map up to the (x-block, m-block) layout."""
    eye = np.eye(d)
    return np.block([[phi[0, 0] * eye, phi[0, 1] * eye],
                     [phi[1, 0] * eye, phi[1, 1] * eye]])


def marginal_mixture(gmm: GmmSpec, params: PsldParams, t: float):
    """Per-component (mean, covariance) of the time-t marginal mixture."""
    d = gmm.dim
    b = float(beta_integral(params.beta, 0.0, t))
    pxx, pxm, pmx, pmm = _phi_entries(params.gamma, params.nu, b)
    sxx, sxm, smm = _cov_entries(params.gamma, params.nu, params.mass, b,
                                 0.0, 0.0)
    t_map = _expand_map(np.array([[pxx, pxm], [pmx, pmm]]), d)
    noise = _expand_map(np.array([[sxx, sxm], [sxm, smm]]), d)
    means = gmm.means @ t_map.T
    covs = np.stack([t_map @ c @ t_map.T + noise for c in gmm.covs])
    return means, covs


def _component_logpdf_and_pulls(z, means, covs):
    """log N(z; mu_k, S_k) and the per-component pulls -S_k^-1 (z - mu_k).

    z: (n, 2d).  Returns (logp (n, K), pulls (n, K, 2d)).
    """
    n, two_d = z.shape
    k = means.shape[0]
    logp = np.empty((n, k))
    pulls = np.empty((n, k, two_d))
    for j in range(k):
        diff = z - means[j]
        chol = np.linalg.cholesky(covs[j])
        half = solve_triangular(chol, diff.T, lower=True)
        quad = np.sum(half * half, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        logp[:, j] = -0.5 * (quad + logdet + two_d * np.log(2 * np.pi))
        pulls[:, j] = -solve_triangular(chol.T, half, lower=False).T
    return logp, pulls


def gmm_marginal_score(gmm: GmmSpec, params: PsldParams, t: float,
                       z: np.ndarray) -> np.ndarray:
    """Exact grad_z log p_t(z) for mixture data.

    Responsibilities are computed with the max trick so that collapsed
    components near t = 1 underflow gracefully rather than erroring.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    means, covs = marginal_mixture(gmm, params, t)
    logp, pulls = _component_logpdf_and_pulls(z2, means, covs)
    logw = np.log(gmm.weights)[None, :]
    resp = softmax(logp + logw, axis=1)
    out = np.einsum("nk,nkd->nd", resp, pulls)
    return out[0] if single else out


def gmm_marginal_logpdf(gmm: GmmSpec, params: PsldParams, t: float,
                        z: np.ndarray) -> np.ndarray:
    z2 = np.atleast_2d(np.asarray(z, dtype=float))
    means, covs = marginal_mixture(gmm, params, t)
    logp, _ = _component_logpdf_and_pulls(z2, means, covs)
    out = logsumexp(logp + np.log(gmm.weights)[None, :], axis=1)
    return out[0] if np.asarray(z).ndim == 1 else out


def _marginal_mixture_batch(gmm: GmmSpec, params: PsldParams, t_arr):
    """Per-row marginal component moments for per-row times.

    Returns (means (n, K, 2d), covs (n, K, 2d, 2d)); the per-coordinate mean
    map and kernel noise are scalars per row, so the transformed component
    covariances assemble from block combinations of the initial ones.
    """
    d = gmm.dim
    b = np.asarray(beta_integral(params.beta, 0.0, t_arr), dtype=float)
    a_, b_, c_, e_ = _phi_entries(params.gamma, params.nu, b)
    sxx, sxm, smm = _cov_entries(params.gamma, params.nu, params.mass, b,
                                 0.0, 0.0)
    n = b.shape[0]
    k = gmm.n_components
    means = np.empty((n, k, 2 * d))
    covs = np.empty((n, k, 2 * d, 2 * d))
    eye = np.eye(d)
    sc = lambda v: v[:, None, None]
    for j in range(k):
        mx, mm_ = gmm.means[j, :d], gmm.means[j, d:]
        means[:, j, :d] = np.outer(a_, mx) + np.outer(b_, mm_)
        means[:, j, d:] = np.outer(c_, mx) + np.outer(e_, mm_)
        cxx = gmm.covs[j][:d, :d]
        cxm = gmm.covs[j][:d, d:]
        cmx = gmm.covs[j][d:, :d]
        cmm = gmm.covs[j][d:, d:]
        covs[:, j, :d, :d] = (sc(a_ * a_) * cxx + sc(a_ * b_) * (cxm + cmx)
                              + sc(b_ * b_) * cmm + sc(sxx) * eye)
        topright = (sc(a_ * c_) * cxx + sc(a_ * e_) * cxm
                    + sc(b_ * c_) * cmx + sc(b_ * e_) * cmm + sc(sxm) * eye)
        covs[:, j, :d, d:] = topright
        covs[:, j, d:, :d] = np.swapaxes(topright, 1, 2)
        covs[:, j, d:, d:] = (sc(c_ * c_) * cxx + sc(c_ * e_) * (cxm + cmx)
                              + sc(e_ * e_) * cmm + sc(smm) * eye)
    return means, covs


def _gmm_marginal_score_batch(gmm: GmmSpec, params: PsldParams, t_arr,
                              z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    means, covs = _marginal_mixture_batch(gmm, params, t_arr)
    diff = z[:, None, :] - means                      # (n, K, 2d)
    pulls = -np.linalg.solve(covs, diff[..., None])[..., 0]
    _, logdet = np.linalg.slogdet(covs)
    quad = -np.einsum("nkd,nkd->nk", diff, pulls)
    logp = -0.5 * (quad + logdet + z.shape[1] * np.log(2 * np.pi))
    resp = softmax(logp + np.log(gmm.weights)[None, :], axis=1)
    return np.einsum("nk,nkd->nd", resp, pulls)


def make_gmm_score_fn(gmm: GmmSpec, params: PsldParams):
    """Bind the oracle into the score_fn(z, t) shape the samplers expect.

    t may be a scalar or a per-row vector (the adaptive ODE sampler advances
    chains at individual times); the vector path runs fully batched.
    """

    def score_fn(z, t):
        t_arr = np.asarray(t, dtype=float)
        if t_arr.ndim == 0:
            return gmm_marginal_score(gmm, params, float(t_arr), z)
        uniq = np.unique(t_arr)
        if uniq.size == 1:
            return gmm_marginal_score(gmm, params, float(uniq[0]), z)
        return _gmm_marginal_score_batch(gmm, params, t_arr, z)

    return score_fn


def score_from_eps(eps: np.ndarray, chol: CholBlock) -> np.ndarray:
    """s = -(L^-T kron I_d) eps: x block -(it_xx eps_x + it_xm eps_m),
    m block -it_mm eps_m."""
    eps = np.asarray(eps, dtype=float)
    single = eps.ndim == 1
    e = np.atleast_2d(eps)
    d = e.shape[1] // 2
    ex, em = e[:, :d], e[:, d:]
    sx = -(chol.it_xx * ex + chol.it_xm * em)
    sm = -chol.it_mm * em
    out = np.concatenate([sx, sm], axis=1)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# feedforward noise predictor


def time_features(t, n_freqs: int = DEFAULT_TIME_FREQS) -> np.ndarray:
    """Sinusoidal features [sin(w_k t), cos(w_k t)] on a log-spaced ladder."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = 2.0 * np.pi * np.logspace(0.0, 3.0, n_freqs)
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _swish(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return x * sig, sig


def _swish_grad(x, sig):
    return sig * (1.0 + x * (1.0 - sig))


@dataclass
class ScoreModel:
    """Plain MLP eps_theta(z, t): [z, time_features(t)] -> hidden -> out.

    Weights are mutable (training), evaluation never mutates.  `out_dim`
    defaults to the full augmented dimension of z.
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    n_freqs: int = DEFAULT_TIME_FREQS
    activation: str = "swish"

    @classmethod
    def create(cls, dim: int, hidden=DEFAULT_HIDDEN, n_freqs: int = DEFAULT_TIME_FREQS,
               rng: np.random.Generator | None = None, out_dim: int | None = None,
               zero_final: bool = False) -> "ScoreModel":
        rng = rng or np.random.default_rng(0)
        in_dim = 2 * dim + 2 * n_freqs
        out_dim = 2 * dim if out_dim is None else out_dim
        sizes = [in_dim, *hidden, out_dim]
        weights, biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / a)
            weights.append(rng.normal(0.0, scale, size=(a, b)))
            biases.append(np.zeros(b))
        if zero_final:
            weights[-1][:] = 0.0
        return cls(weights=weights, biases=biases, n_freqs=n_freqs)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self):
        return list(self.weights) + list(self.biases)

    def set_parameters(self, params):
        n = len(self.weights)
        for i in range(n):
            self.weights[i] = params[i].copy()
            self.biases[i] = params[n + i].copy()

    def copy(self) -> "ScoreModel":
        m = ScoreModel(weights=[w.copy() for w in self.weights],
                       biases=[b.copy() for b in self.biases],
                       n_freqs=self.n_freqs, activation=self.activation)
        return m

    def features(self, z, t):
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        t_arr = np.broadcast_to(np.asarray(t, dtype=float), (z2.shape[0],))
        return np.concatenate([z2, time_features(t_arr, self.n_freqs)], axis=1)

    def forward_cached(self, z, t):
        """Forward pass keeping pre-activations for the backward pass."""
        h = self.features(z, t)
        pre, post = [], [h]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = post[-1] @ w + b
            pre.append(a)
            if i < n - 1:
                act, sig = _swish(a)
                post.append(act)
            else:
                post.append(a)
        return post[-1], (pre, post)

    def backward(self, cache, upstream):
        """Exact reverse-mode gradients of sum(upstream * output).

        Returns (weight_grads, bias_grads, input_grad); input_grad covers the
        full feature vector [z, time features], callers slice off the z part.
        """
        pre, post = cache
        n = len(self.weights)
        grad_w = [None] * n
        grad_b = [None] * n
        delta = np.atleast_2d(np.asarray(upstream, dtype=float))
        for i in reversed(range(n)):
            grad_w[i] = post[i].T @ delta
            grad_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                a = pre[i - 1]
                sig = 1.0 / (1.0 + np.exp(-a))
                delta = delta * _swish_grad(a, sig)
        return grad_w, grad_b, delta


def eps_forward(model, z, t):
    """Deterministic batched forward pass of the noise predictor; `model`
    may be any callable (z, t) -> eps (test stubs, analytic predictors)."""
    if not isinstance(model, ScoreModel):
        return model(z, t)
    out, _ = model.forward_cached(z, t)
    return out[0] if np.asarray(z).ndim == 1 else out


def eps_backward(model: ScoreModel, z, t, upstream):
    """Parameter gradients of sum(upstream * eps_theta(z, t))."""
    _, cache = model.forward_cached(z, t)
    grad_w, grad_b, grad_in = model.backward(cache, upstream)
    return grad_w, grad_b, grad_in


def make_model_score_fn(model: ScoreModel, params: PsldParams,
                        eps_diag: float = 0.0):
    """Score s(z, t) = -L_t^-T eps_theta(z, t) using the marginalized kernel
    covariance at each requested time."""
    from .kernel import _chol_entries  # local import to avoid cycle at module load

    def score_fn(z, t):
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        n = z2.shape[0]
        d = z2.shape[1] // 2
        t_arr = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        b = beta_integral(params.beta, 0.0, t_arr)
        sxx, sxm, smm = _cov_entries(params.gamma, params.nu, params.mass, b,
                                     0.0, params.mass * params.gamma0)
        _, _, _, it_xx, it_xm, it_mm = _chol_entries(sxx, sxm, smm, eps_diag)
        eps = np.atleast_2d(eps_forward(model, z2, t_arr))
        ex, em = eps[:, :d], eps[:, d:]
        col = lambda v: np.asarray(v)[:, None]
        sx = -(col(it_xx) * ex + col(it_xm) * em)
        sm = -col(it_mm) * em
        out = np.concatenate([sx, sm], axis=1)
        return out[0] if np.asarray(z).ndim == 1 else out

    return score_fn


def save_model(model: ScoreModel, path):
    """Checkpoint format: npz with a JSON header string.

    Keys: `header` (JSON: layer_sizes, activation, n_freqs) and `w0`, `b0`,
    `w1`, `b1`, ... in layer order, float64.
    """
    header = json.dumps({
        "layer_sizes": model.layer_sizes,
        "activation": model.activation,
        "n_freqs": model.n_freqs,
    })
    arrays = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, header=np.array(header), **arrays)


def load_model(path) -> ScoreModel:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        n_layers = len(header["layer_sizes"]) - 1
        weights = [data[f"w{i}"].astype(float) for i in range(n_layers)]
        biases = [data[f"b{i}"].astype(float) for i in range(n_layers)]
    model = ScoreModel(weights=weights, biases=biases,
                       n_freqs=int(header["n_freqs"]),
                       activation=str(header["activation"]))
    if header["activation"] != "swish":
        raise ConfigError(f"unknown activation id {header['activation']!r}")
    return model
