"""Mini-batch training with a two-step learning-rate schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, ParameterError
from ..sampler import AugmentSpec, PatchSample, augment
from .unet import NetConfig, NetParams, backward, bce_loss, forward, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 0.001
    lr_after: float = 0.0001
    lr_switch_epoch: int = 20
    epochs: int = 25
    batch_size: int = 4
    seed: int = 0
    optimizer: str = "adam"
    augment: AugmentSpec | None = field(default_factory=AugmentSpec)
    precision: int = 64

    def __post_init__(self):
        if not (self.lr_initial > 0 and self.lr_after > 0):
            raise ParameterError("learning rates must be positive")
        if self.lr_switch_epoch > self.epochs:
            raise ParameterError("lr_switch_epoch cannot exceed epochs")
        if self.batch_size < 2:
            raise ParameterError("batch_size must be at least 2 for batch normalisation")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.precision not in (32, 64):
            raise ParameterError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-based epoch number."""
    return cfg.lr_initial if epoch <= cfg.lr_switch_epoch else cfg.lr_after


class Adam:
    def __init__(self, weights, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}
        self.t = 0

    def step(self, weights, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            weights[k] -= (lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(weights[k].dtype)


class SGDMomentum:
    def __init__(self, weights, momentum=0.9):
        self.mu = momentum
        self.vel = {k: np.zeros_like(v) for k, v in weights.items()}

    def step(self, weights, grads, lr):
        for k, g in grads.items():
            self.vel[k] = self.mu * self.vel[k] - lr * g
            weights[k] += self.vel[k].astype(weights[k].dtype)


@dataclass
class TrainResult:
    params: NetParams
    epoch_loss: list[float]
    epoch_lr: list[float]


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    chunks = [order[i:i + size] for i in range(0, n, size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def stack_batch(samples: list[PatchSample], dtype):
    x = np.stack([s.image.pixels for s in samples]).astype(dtype) / 255.0
    y = np.stack([s.mask.bits for s in samples]).astype(dtype)
    return x.transpose(0, 3, 1, 2), y[:, None]


def train(data: list[PatchSample], net_cfg: NetConfig, train_cfg: TrainConfig,
          params: NetParams | None = None, progress=None) -> TrainResult:
    """Fit the network to patch/mask pairs.

    Augmentation is redrawn for every sample in every epoch from a generator
    seeded by ``(seed, epoch)``, so runs are reproducible.
    """
    if not data:
        raise ParameterError("training data is empty")
    if len(data) < 2:
        raise ParameterError("need at least two samples for batch normalisation")
    size = data[0].image.width
    if size != net_cfg.input_px:
        raise ParameterError(f"patches are {size} px but the network expects {net_cfg.input_px}")
    dtype = train_cfg.dtype
    if params is None:
        params = init_params(net_cfg, train_cfg.seed, dtype=dtype)
    else:
        params = params.astype(dtype)
    opt = Adam(params.weights) if train_cfg.optimizer == "adam" else SGDMomentum(params.weights)
    losses, lrs = [], []
    for epoch in range(1, train_cfg.epochs + 1):
        lr = learning_rate(train_cfg, epoch)
        rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, epoch]))
        total, count = 0.0, 0
        for step, idx in enumerate(_batches(len(data), train_cfg.batch_size, rng)):
            batch = [data[i] for i in idx]
            if train_cfg.augment is not None:
                batch = [augment(s, train_cfg.augment, rng) for s in batch]
            x, y = stack_batch(batch, dtype)
            probs, cache = forward(params, x, "train", rng)
            loss = bce_loss(probs, y)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step}")
            grads = backward(params, cache, y)
            opt.step(params.weights, grads, lr)
            params.stats.update(cache.stats)
            total += loss * len(idx)
            count += len(idx)
        losses.append(total / count)
        lrs.append(lr)
        log.info("epoch %d lr %.5g loss %.5f", epoch, lr, losses[-1])
        if progress is not None:
            progress(epoch, lr, losses[-1])
    return TrainResult(params, losses, lrs)
