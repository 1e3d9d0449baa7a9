"""Two-sample metrics for judging generated batches against fresh data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricReport:
    mean_err: float
    cov_err: float
    energy_dist: float
    sliced_w2: float
    nfe: int


def moment_errors(a: np.ndarray, b: np.ndarray):
    """(|mean_a - mean_b|_2, |cov_a - cov_b|_F)."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    mean_err = float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))
    cov_err = float(np.linalg.norm(np.cov(a.T) - np.cov(b.T)))
    return mean_err, cov_err


def _cross_distance_sum(a: np.ndarray, b: np.ndarray, block: int = 2048) -> float:
    """Sum of pairwise Euclidean distances, blocked to bound memory."""
    total = 0.0
    for i in range(0, a.shape[0], block):
        chunk = a[i:i + block]
        d2 = (np.sum(chunk ** 2, axis=1)[:, None]
              + np.sum(b ** 2, axis=1)[None, :]
              - 2.0 * chunk @ b.T)
        total += float(np.sqrt(np.maximum(d2, 0.0)).sum())
    return total


def energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """V-statistic energy distance 2 E|A-B| - E|A-A'| - E|B-B'| (>= 0,
    zero iff the distributions coincide)."""
    a, b = np.atleast_2d(np.asarray(a, float)), np.atleast_2d(np.asarray(b, float))
    n, m = a.shape[0], b.shape[0]
    ab = _cross_distance_sum(a, b) / (n * m)
    aa = _cross_distance_sum(a, a) / (n * n)
    bb = _cross_distance_sum(b, b) / (m * m)
    return max(2.0 * ab - aa - bb, 0.0)


def sliced_w2(a: np.ndarray, b: np.ndarray, n_proj: int = 64,
              rng: np.random.Generator | None = None) -> float:
    """Quadratic Wasserstein distance of 1-D projections, averaged over
    n_proj uniformly random directions (quantile coupling per direction)."""
    rng = rng or np.random.default_rng(0)
    a, b = np.atleast_2d(np.asarray(a, float)), np.atleast_2d(np.asarray(b, float))
    d = a.shape[1]
    dirs = rng.standard_normal((n_proj, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    n = min(a.shape[0], b.shape[0])
    q = (np.arange(n) + 0.5) / n
    total = 0.0
    for u in dirs:
        pa = np.sort(a @ u)
        pb = np.sort(b @ u)
        qa = np.quantile(pa, q, method="linear")
        qb = np.quantile(pb, q, method="linear")
        total += np.sqrt(np.mean((qa - qb) ** 2))
    return float(total / n_proj)


def permutation_energy_test(a: np.ndarray, b: np.ndarray, n_perm: int = 199,
                            rng: np.random.Generator | None = None,
                            subsample: int | None = None):
    """Two-sample permutation test on the energy distance.

    Returns (observed, null 95th percentile, p-value).  With `subsample`,
    the test runs on that many points drawn without replacement from each
    side (still an exact-level test; keeps the pooled pairwise-distance
    matrix tractable).
    """
    rng = rng or np.random.default_rng(0)
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    if subsample is not None:
        a = a[rng.choice(a.shape[0], size=min(subsample, a.shape[0]),
                         replace=False)]
        b = b[rng.choice(b.shape[0], size=min(subsample, b.shape[0]),
                         replace=False)]
    n, m = a.shape[0], b.shape[0]
    pooled = np.concatenate([a, b], axis=0).astype(np.float32)
    d2 = (np.sum(pooled ** 2, axis=1)[:, None]
          + np.sum(pooled ** 2, axis=1)[None, :]
          - 2.0 * pooled @ pooled.T)
    dist = np.sqrt(np.maximum(d2, 0.0))

    def stat(idx_a, idx_b):
        ab = dist[np.ix_(idx_a, idx_b)].sum() / (n * m)
        aa = dist[np.ix_(idx_a, idx_a)].sum() / (n * n)
        bb = dist[np.ix_(idx_b, idx_b)].sum() / (m * m)
        return 2.0 * ab - aa - bb

    idx = np.arange(n + m)
    observed = stat(idx[:n], idx[n:])
    null = np.empty(n_perm)
    for i in range(n_perm):
        perm = rng.permutation(n + m)
        null[i] = stat(perm[:n], perm[n:])
    p_value = (1.0 + np.sum(null >= observed)) / (n_perm + 1.0)
    threshold = float(np.quantile(null, 0.95))
    return float(observed), threshold, float(p_value)


def report(a: np.ndarray, b: np.ndarray, nfe: int,
           rng: np.random.Generator | None = None) -> MetricReport:
    mean_err, cov_err = moment_errors(a, b)
    return MetricReport(
        mean_err=mean_err, cov_err=cov_err,
        energy_dist=energy_distance(a, b),
        sliced_w2=sliced_w2(a, b, rng=rng),
        nfe=nfe,
    )
