"""Encode a weight update into a small synthetic batch, and decode it back.

The encoder optimizes synthetic inputs, soft-label logits and spanning-ratio
logits so that the alpha-weighted gradient of the batch points along the
target update (1 - cosine is minimized). Magnitude is carried separately by
one scaling ratio per layer. Decoding is one forward and one backward pass.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as nd
from .models import ParamVector, SoftBatch, forward, per_example_losses
from .optim import Adam, AdamConfig

__all__ = [
    "DeadLayerWarning",
    "DegenerateUpdateError",
    "EncodeReport",
    "NORM_FLOOR",
    "SyntheticDataset",
    "alignment_objective",
    "decode",
    "encode",
    "payload_scalars",
    "r_loss",
    "scaling_ratios",
    "spanned_update",
    "weighted_gradient",
]

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


class DegenerateUpdateError(ValueError):
    pass


class DeadLayerWarning(UserWarning):
    pass


@dataclass
class SyntheticDataset:
    """The communicated payload."""

    batch: SoftBatch
    gamma: np.ndarray
    final_r_loss: float = 0.0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64).ravel()

    @property
    def nimgs(self) -> int:
        return len(self.batch)

    @property
    def num_scalars(self) -> int:
        b = self.batch
        return b.inputs.size + b.label_logits.size + b.alpha_logits.size + self.gamma.size + 1


@dataclass
class EncodeReport:
    r_loss_trace: list = field(default_factory=list)
    iterations_run: int = 0
    payload_scalars: int = 0
    dead_layers: list = field(default_factory=list)
    attempts: int = 1


def payload_scalars(nimgs: int, input_dim: int, num_classes: int, num_layers: int) -> int:
    return nimgs * (input_dim + num_classes + 1) + num_layers + 1


def _ce_loss(logits, label_logits):
    return per_example_losses(logits, nd.softmax(label_logits))


def weighted_gradient(params: ParamVector, inputs, labels, alphas, loss=_ce_loss,
                      model=forward, create_graph: bool = False) -> list:
    """Gradient of ``sum_i alphas_i * loss_i`` w.r.t. every parameter tensor.

    ``inputs``, ``labels`` and ``alphas`` may be arrays or DualTensors. With
    ``create_graph`` the result stays differentiable w.r.t. those inputs.
    Returns ``[W1, b1, W2, b2, ...]``.
    """
    leaves = [(nd.leaf(w), nd.leaf(b)) for w, b in params.layers]
    per = loss(model(leaves, nd.as_dual(inputs)), labels)
    total = nd.sum(nd.mul(nd.as_dual(alphas), per))
    flat_leaves = [t for pair in leaves for t in pair]
    return nd.backward(total, flat_leaves, create_graph=create_graph)


def _as_param_vector(flat_grads) -> ParamVector:
    vals = [g.value if isinstance(g, nd.DualTensor) else g for g in flat_grads]
    return ParamVector(list(zip(vals[0::2], vals[1::2])))


def spanned_update(params: ParamVector, batch: SoftBatch, loss=_ce_loss, model=forward) -> ParamVector:
    """Gradient of the spanning-ratio weighted loss of ``batch`` at ``params``.

    ``loss(outputs, label_logits)`` returns per-example losses; the default is
    soft-label cross-entropy with labels ``softmax(label_logits)``.
    """
    d = params.layers[0][0].shape[0]
    if batch.inputs.shape[1] != d:
        raise nd.ShapeError(f"batch inputs {batch.inputs.shape} do not match input dim {d}")
    grads = weighted_gradient(params, batch.inputs, batch.label_logits, batch.alphas, loss, model)
    return _as_param_vector(grads)


def _norm_sq(u: ParamVector) -> float:
    return float(np.sum([np.sum(t * t) for t in u.tensors()]))


def r_loss(u_real: ParamVector, u_syn: ParamVector) -> float:
    """1 - cosine similarity between the two flattened updates, in [0, 2]."""
    u_real._check(u_syn)
    na, nb = np.sqrt(_norm_sq(u_real)), np.sqrt(_norm_sq(u_syn))
    if na < NORM_FLOOR and nb < NORM_FLOOR:
        raise DegenerateUpdateError("degenerate update: both vectors have norm below 1e-12")
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        return 1.0
    num = float(np.sum([np.sum(a * b) for a, b in zip(u_real.tensors(), u_syn.tensors())]))
    return float(np.clip(1.0 - num / (na * nb), 0.0, 2.0))


def scaling_ratios(u_real: ParamVector, u_syn: ParamVector, dead: list | None = None) -> np.ndarray:
    """Per-layer ``||u_real_l|| / ||u_syn_l||``.

    A layer whose synthetic norm vanishes while the real one does not gets
    ratio 0 and a :class:`DeadLayerWarning`; its index is appended to ``dead``.
    """
    u_real._check(u_syn)
    nr, ns = u_real.layer_norms(), u_syn.layer_norms()
    gamma = np.zeros(len(nr))
    for l, (a, b) in enumerate(zip(nr, ns)):
        if b >= NORM_FLOOR:
            gamma[l] = a / b
        elif a >= NORM_FLOOR:
            warnings.warn(f"layer {l}: synthetic update vanishes, scaling ratio set to 0", DeadLayerWarning, stacklevel=2)
            if dead is not None:
                dead.append(l)
    return gamma


def alignment_objective(params: ParamVector, target: ParamVector, inputs, labels, alphas):
    """``1 - cos(weighted_gradient, target)`` as a differentiable scalar.

    Shared by the encoder and the inversion attack. ``labels`` are
    probabilities (DualTensor or array), ``alphas`` per-row weights.
    """
    grads = weighted_gradient(
        params, inputs, labels, alphas,
        loss=lambda logits, y: per_example_losses(logits, y),
        create_graph=True,
    )
    target_parts = [nd.constant(t) for t in target.tensors()]
    return nd.sub(1.0, nd.cosine_similarity(grads, target_parts))


def _check_target(u: ParamVector, what: str = "update"):
    if not u.is_finite():
        raise nd.NonFiniteError(f"{what} contains non-finite values")
    if np.sqrt(_norm_sq(u)) < NORM_FLOOR:
        raise DegenerateUpdateError(f"degenerate {what}: norm below 1e-12")


def _synthesize(u_real: ParamVector, params: ParamVector, nimgs: int, cfg: AdamConfig, rng) -> tuple:
    d = params.layers[0][0].shape[0]
    c = params.layers[-1][0].shape[1]
    state = {
        "x": rng.standard_normal((nimgs, d)),
        "y": rng.standard_normal((nimgs, c)),
        "a": rng.standard_normal(nimgs),
    }
    opt = Adam(cfg, {"x": cfg.lr_x, "y": cfg.lr_y, "a": cfg.lr_alpha})
    trace = []
    for it in range(1, cfg.max_iters + 1):
        x, y, a = nd.leaf(state["x"]), nd.leaf(state["y"]), nd.leaf(state["a"])
        r = alignment_objective(params, u_real, x, nd.softmax(y), nd.softmax(a))
        gx, gy, ga = nd.backward(r, [x, y, a])
        rv = float(r.value)
        if not np.isfinite(rv) or not all(np.all(np.isfinite(g)) for g in (gx, gy, ga)):
            raise nd.NonFiniteError(f"non-finite value during synthesis at iteration {it}")
        trace.append(rv)
        state = opt.step(state, {"x": gx, "y": gy, "a": ga})
    if not all(np.all(np.isfinite(v)) for v in state.values()):
        raise nd.NonFiniteError(f"non-finite synthetic data after iteration {cfg.max_iters}")
    batch = SoftBatch(state["x"], state["y"], state["a"])
    u_syn = spanned_update(params, batch)
    return batch, u_syn, r_loss(u_real, u_syn), trace


def encode(u_real: ParamVector, params: ParamVector, nimgs: int, cfg: AdamConfig | None = None,
           seed=0, restarts: int = 1, restart_tol: float | None = None) -> tuple:
    """Synthesize a SyntheticDataset whose decoded update approximates ``u_real``.

    Inputs, label logits and alpha logits start from a seeded standard normal
    and are optimized by Adam for ``cfg.max_iters`` iterations. Returns
    ``(SyntheticDataset, EncodeReport)``.

    ReLU activation patterns make the objective multimodal. With
    ``restarts > 1`` up to that many fresh initializations are tried, stopping
    early once the final reconstruction loss is at most ``restart_tol``; the
    best attempt is kept. The default is a single run.
    """
    cfg = cfg or AdamConfig()
    if nimgs < 1:
        raise ValueError(f"nimgs must be at least 1, got {nimgs}")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    _check_target(u_real)
    params._check(u_real)
    d = params.layers[0][0].shape[0]
    c = params.layers[-1][0].shape[1]

    best = None
    streams = np.random.SeedSequence(seed).spawn(restarts) if restarts > 1 else [seed]
    for attempt, stream in enumerate(streams, start=1):
        batch, u_syn, final, trace = _synthesize(u_real, params, nimgs, cfg, np.random.default_rng(stream))
        if best is None or final < best[2]:
            best = (batch, u_syn, final, trace, attempt)
        if restart_tol is not None and final <= restart_tol:
            break
    batch, u_syn, final, trace, attempt = best

    report = EncodeReport(
        r_loss_trace=trace,
        iterations_run=len(trace),
        payload_scalars=payload_scalars(nimgs, d, c, params.num_layers),
        attempts=attempt,
    )
    gamma = scaling_ratios(u_real, u_syn, report.dead_layers)
    log.debug("encode: nimgs=%d iters=%d r_loss %.4g -> %.4g", nimgs, cfg.max_iters, trace[0], final)
    return SyntheticDataset(batch, gamma, final), report


def decode(params: ParamVector, ds: SyntheticDataset) -> ParamVector:
    """One forward and backward pass over the payload, then per-layer scaling."""
    if ds.gamma.size != params.num_layers:
        raise nd.ShapeError(f"{ds.gamma.size} scaling ratios for {params.num_layers} layers")
    return spanned_update(params, ds.batch).scale_layers(ds.gamma)
