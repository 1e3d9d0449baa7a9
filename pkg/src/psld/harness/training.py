"""Training loop: adaptive-moment optimizer with linear warmup, global-norm
gradient clipping, and an exponential moving average of the weights."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from ..objective import hsm_eps_loss_grad, make_draws
from ..recipe import PsldParams
from ..score import ScoreModel


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 128
    learning_rate: float = 2e-4
    warmup_steps: int = 5000
    ema_rate: float = 0.9999
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ema_rate < 1.0:
            raise ValueError("ema_rate must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainResult:
    model: ScoreModel
    ema_model: ScoreModel
    log: list = field(default_factory=list)  # rows: (iter, loss, grad_norm, seconds)


class AdamState:
    """First/second-moment adaptive update with bias correction."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0

    def update(self, params, grads, lr):
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.step
        corr2 = 1.0 - b2 ** self.step
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            out.append(p - lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps))
        return out


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


def adam_train(model: ScoreModel, batch_loss_grad, config: TrainConfig,
               rng: np.random.Generator, log=None, ema_model=None):
    """Generic driver: `batch_loss_grad(model, rng) -> (loss, grad_w, grad_b)`.

    Deterministic given the generator state; the gradient reduction inside
    the loss is a plain sequential sum.
    """
    params = model.parameters()
    opt = AdamState(params)
    ema = ema_model.parameters() if ema_model is not None else None
    t0 = time.perf_counter()
    for it in range(config.iterations):
        loss, grad_w, grad_b = batch_loss_grad(model, rng)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at iteration {it}")
        grads = list(grad_w) + list(grad_b)
        grads, norm = clip_by_global_norm(grads, config.grad_clip)
        lr = config.learning_rate * min(1.0, (it + 1) / max(config.warmup_steps, 1))
        params = opt.update(params, grads, lr)
        model.set_parameters(params)
        if ema is not None:
            r = config.ema_rate
            ema = [r * e + (1 - r) * p for e, p in zip(ema, params)]
            ema_model.set_parameters(ema)
        if log is not None:
            log.append((it, loss, norm, time.perf_counter() - t0))
    return model


def train_loop(model: ScoreModel, dataset: np.ndarray, params: PsldParams,
               objective_kind: str = "hsm",
               config: TrainConfig | None = None) -> TrainResult:
    """Train the noise predictor on a fixed dataset of data-space points."""
    config = config or TrainConfig()
    if objective_kind != "hsm":
        raise ValueError("training supports the marginalized objective only")
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    n, d = dataset.shape
    rng = np.random.default_rng(config.seed)
    ema_model = model.copy()
    log = []

    def batch_loss_grad(m, batch_rng):
        idx = batch_rng.integers(0, n, size=config.batch_size)
        draws = make_draws(batch_rng, config.batch_size, d)
        return hsm_eps_loss_grad(m, dataset[idx], params, draws=draws)

    adam_train(model, batch_loss_grad, config, rng, log=log, ema_model=ema_model)
    return TrainResult(model=model, ema_model=ema_model, log=log)
