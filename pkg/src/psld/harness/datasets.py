"""Toy data distributions with analytic augmented-state descriptions."""

from __future__ import annotations

import numpy as np

from ..recipe import PsldParams
from ..score import GmmSpec

DATASET_NAMES = ("gmm2", "gmm8-ring", "gauss-corr")


def make_dataset(name: str, n: int, rng: np.random.Generator,
                 params: PsldParams):
    """Draw n data points and return (samples, mixture spec, labels).

    The mixture spec describes the augmented initial state: the data
    distribution in the position block and N(0, M gamma0 I) in the momentum
    block, so it can drive the analytic marginal-score oracle directly.

    gmm2:       two unit-covariance components at (+-3, 0), weights 1/2.
    gmm8-ring:  eight unit-covariance components on a radius-4 circle.
    gauss-corr: one zero-mean Gaussian with unit variances and correlation 0.8.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    mom_var = params.mass * params.gamma0
    if name == "gmm2":
        d = 2
        means = np.array([[3.0, 0.0, 0.0, 0.0], [-3.0, 0.0, 0.0, 0.0]])
        gmm = GmmSpec.from_blocks(
            weights=[0.5, 0.5], means=means,
            blocks=np.array([[1.0, 0.0], [0.0, mom_var]]),
            labels=np.array([0, 1]))
    elif name == "gmm8-ring":
        d = 2
        k = 8
        ang = 2 * np.pi * np.arange(k) / k
        means = np.zeros((k, 4))
        means[:, 0] = 4.0 * np.cos(ang)
        means[:, 1] = 4.0 * np.sin(ang)
        gmm = GmmSpec.from_blocks(
            weights=np.full(k, 1.0 / k), means=means,
            blocks=np.array([[1.0, 0.0], [0.0, mom_var]]),
            labels=np.arange(k))
    elif name == "gauss-corr":
        d = 2
        rho = 0.8
        cov_x = np.array([[1.0, rho], [rho, 1.0]])
        cov = np.zeros((4, 4))
        cov[:d, :d] = cov_x
        cov[d:, d:] = mom_var * np.eye(d)
        gmm = GmmSpec(weights=[1.0], means=np.zeros((1, 4)), covs=cov[None])
    else:
        raise ValueError(f"unknown dataset {name!r}; pick one of {DATASET_NAMES}")

    samples, labels = gmm.sample_x(n, rng)
    return samples, gmm, labels
