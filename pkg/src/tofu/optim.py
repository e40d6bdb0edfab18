"""Plain SGD for client training and Adam with step decay for synthesis."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .models import ParamVector
from .ndgrad import NonFiniteError

__all__ = ["Adam", "AdamConfig", "SgdConfig", "lr_at", "sgd_step"]


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.1
    decay_epochs: tuple = ()
    decay_factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if not self.lr >= 0:
            raise ValueError(f"sgd lr must be non-negative, got {self.lr}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"sgd decay_factor must be in (0, 1], got {self.decay_factor}")

    def lr_for_epoch(self, epoch: int) -> float:
        """Learning rate once ``epoch`` local epochs have completed."""
        passed = sum(1 for e in self.decay_epochs if epoch >= e)
        return self.lr * self.decay_factor**passed


@dataclass(frozen=True)
class AdamConfig:
    """Synthesis optimizer settings.

    Defaults: 1000 iterations, all three learning rates 0.1, decayed by 0.1
    at iterations 375, 625 and 875.
    """

    lr_x: float = 0.1
    lr_y: float = 0.1
    lr_alpha: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 1000
    decay_iters: tuple = (375, 625, 875)
    decay_factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "decay_iters", tuple(int(i) for i in self.decay_iters))
        for name in ("lr_x", "lr_y", "lr_alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        d = self.decay_iters
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"decay_iters must be strictly increasing, got {d}")
        if d and d[-1] >= self.max_iters:
            raise ValueError(f"decay_iters must lie below max_iters={self.max_iters}")

    def scaled(self, max_iters: int) -> "AdamConfig":
        """Same schedule shape compressed or stretched to ``max_iters``."""
        f = max_iters / self.max_iters
        decays = tuple(sorted({max(1, min(max_iters - 1, round(i * f))) for i in self.decay_iters}))
        return AdamConfig(
            self.lr_x, self.lr_y, self.lr_alpha, self.beta1, self.beta2, self.eps,
            max_iters, decays if max_iters > 1 else (), self.decay_factor,
        )


def lr_at(iteration: int, cfg: AdamConfig, base: float | None = None) -> float:
    """Step-decayed learning rate at 1-based ``iteration``."""
    if not 1 <= iteration <= cfg.max_iters:
        raise ValueError(f"iteration {iteration} outside [1, {cfg.max_iters}]")
    base = cfg.lr_x if base is None else base
    return base * cfg.decay_factor ** bisect.bisect_right(cfg.decay_iters, iteration)


def sgd_step(params: ParamVector, grads: ParamVector, lr: float) -> ParamVector:
    if not grads.is_finite():
        raise NonFiniteError("non-finite gradient in sgd_step")
    return params - grads * lr


@dataclass
class Adam:
    """Adam over a dict of named arrays, each with its own base learning rate."""

    cfg: AdamConfig
    base_lrs: dict
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        out = {}
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k)
            v = self.v.get(k)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            lr = lr_at(self.t, self.cfg, self.base_lrs[k])
            out[k] = p - lr * m_hat / (np.sqrt(v_hat) + self.cfg.eps)
        return out
