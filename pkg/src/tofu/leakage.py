"""Inverting-gradients style attack used to measure what an update leaks.

The attacker sees a weight update and the model weights and optimizes
candidate inputs (and optionally labels) until their gradient is aligned with
the update, using the same alignment objective as the encoder with uniform
weights. Leakage is scored as the MSE from each reconstruction to its nearest
true datum.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndgrad as nd
from .codec import _check_target, alignment_objective
from .data import one_hot
from .fed import batch_gradient
from .models import ParamVector
from .optim import Adam, AdamConfig

__all__ = ["AttackConfig", "AttackReport", "invert_update", "nearest_datum_mse", "single_datum_gradient"]


@dataclass(frozen=True)
class AttackConfig:
    num_recon: int = 1
    iters: int = 3000
    lr: float = 0.1
    label_mode: str = "known"

    def __post_init__(self):
        if self.num_recon < 1:
            raise ValueError("num_recon must be at least 1")
        if self.iters < 1 or not self.lr > 0:
            raise ValueError("iters and lr must be positive")
        if self.label_mode not in ("known", "optimized"):
            raise ValueError("label_mode must be 'known' or 'optimized'")

    def adam(self) -> AdamConfig:
        decays = tuple(sorted({max(1, min(self.iters - 1, round(self.iters * f))) for f in (0.375, 0.625, 0.875)}))
        return AdamConfig(self.lr, self.lr, self.lr, max_iters=self.iters,
                          decay_iters=decays if self.iters > 1 else ())


@dataclass
class AttackReport:
    recon_inputs: np.ndarray
    final_cosine: float
    nearest_datum_mse: list
    recon_labels: np.ndarray = None

    def to_dict(self) -> dict:
        return {
            "final_cosine": self.final_cosine,
            "nearest_datum_mse": [float(m) for m in self.nearest_datum_mse],
            "num_recon": int(self.recon_inputs.shape[0]),
        }

    def save_inputs(self, path) -> None:
        np.savetxt(Path(path), self.recon_inputs, fmt="%.17g")


def nearest_datum_mse(recon: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Per reconstruction, mean squared error to the closest reference row."""
    d = ((recon[:, None, :] - reference[None, :, :]) ** 2).mean(axis=2)
    return d.min(axis=1)


def single_datum_gradient(params: ParamVector, x: np.ndarray, label: int, num_classes: int) -> ParamVector:
    return batch_gradient(params, np.atleast_2d(x), np.array([label]), num_classes)


def invert_update(target: ParamVector, params: ParamVector, cfg: AttackConfig, seed=0,
                  reference: np.ndarray | None = None, labels=None, init: np.ndarray | None = None) -> AttackReport:
    """Reconstruct ``cfg.num_recon`` inputs whose gradient matches ``target``.

    ``labels`` (class indices) are required when ``cfg.label_mode`` is
    ``"known"``. ``reference`` rows are the true data used for the
    nearest-datum score. ``init`` overrides the standard-normal start.
    """
    _check_target(target, "target")
    params._check(target)
    n = cfg.num_recon
    d = params.layers[0][0].shape[0]
    c = params.layers[-1][0].shape[1]
    rng = np.random.default_rng(seed)

    state = {"x": rng.standard_normal((n, d)) if init is None else np.array(init, dtype=np.float64)}
    lrs = {"x": cfg.lr}
    if cfg.label_mode == "known":
        if labels is None:
            raise ValueError("label_mode 'known' needs labels")
        fixed_labels = one_hot(np.broadcast_to(np.asarray(labels), (n,)), c)
    else:
        state["y"] = rng.standard_normal((n, c))
        lrs["y"] = cfg.lr
    alphas = np.full(n, 1.0 / n)
    opt = Adam(cfg.adam(), lrs)

    def objective(st, trace: bool):
        x = nd.leaf(st["x"]) if trace else st["x"]
        if cfg.label_mode == "known":
            y, leaves = fixed_labels, [x]
        else:
            yl = nd.leaf(st["y"]) if trace else st["y"]
            y, leaves = nd.softmax(yl), [x, yl]
        return alignment_objective(params, target, x, y, alphas), leaves

    keys = list(state)
    for it in range(1, cfg.iters + 1):
        r, leaves = objective(state, True)
        grads = nd.backward(r, leaves)
        if not np.isfinite(r.value) or not all(np.all(np.isfinite(g)) for g in grads):
            raise nd.NonFiniteError(f"non-finite value during inversion at iteration {it}")
        state = opt.step(state, dict(zip(keys, grads)))

    r, _ = objective(state, False)
    recon = state["x"]
    ref = reference if reference is not None else np.empty((0, d))
    mse = nearest_datum_mse(recon, ref).tolist() if len(ref) else []
    recon_labels = None
    if "y" in state:
        z = np.exp(state["y"] - state["y"].max(axis=1, keepdims=True))
        recon_labels = z / z.sum(axis=1, keepdims=True)
    return AttackReport(recon, float(1.0 - r.value), mse, recon_labels)
