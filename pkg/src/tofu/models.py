"""Dense ReLU MLPs and the flat parameter-vector view used for update arithmetic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import ndgrad as nd
from .ndgrad import ShapeError

__all__ = [
    "MlpSpec",
    "ParamVector",
    "SoftBatch",
    "accuracy",
    "flatten",
    "forward",
    "init_params",
    "per_example_losses",
    "predict",
    "soft_cross_entropy",
    "unflatten",
]

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input dim to class count, e.g. ``(2, 16, 3)``."""

    layer_widths: tuple
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError(f"need at least input and output widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if widths[-1] < 2:
            raise ValueError(f"need at least 2 classes, got {widths[-1]}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_widths) - 1

    def layer_shapes(self) -> list:
        w = self.layer_widths
        return [((w[i], w[i + 1]), (w[i + 1],)) for i in range(len(w) - 1)]

    @property
    def param_count(self) -> int:
        return int(np.sum([a * b + b for (a, b), _ in self.layer_shapes()]))


class ParamVector:
    """Per-layer ``(weight, bias)`` arrays.

    Holds model weights as well as weight updates. Weights are stored
    ``[fan_in, fan_out]`` so ``forward`` computes ``x @ W + b``. Flattening
    goes layer by layer, weight before bias, row-major.
    """

    __slots__ = ("layers",)

    def __init__(self, layers):
        self.layers = [
            (np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in layers
        ]

    # structure
    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def total_len(self) -> int:
        return int(np.sum([w.size + b.size for w, b in self.layers]))

    def shapes(self) -> list:
        return [(w.shape, b.shape) for w, b in self.layers]

    def tensors(self) -> Iterator[np.ndarray]:
        for w, b in self.layers:
            yield w
            yield b

    def layer_norms(self) -> np.ndarray:
        return np.array([np.sqrt(np.sum(w * w) + np.sum(b * b)) for w, b in self.layers])

    def _check(self, other: "ParamVector"):
        if self.shapes() != other.shapes():
            raise ShapeError(f"parameter shapes differ: {self.shapes()} vs {other.shapes()}")

    # arithmetic
    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return ParamVector([(w + v, b + c) for (w, b), (v, c) in zip(self.layers, other.layers)])

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check(other)
        return ParamVector([(w - v, b - c) for (w, b), (v, c) in zip(self.layers, other.layers)])

    def __mul__(self, c: float) -> "ParamVector":
        c = float(c)
        return ParamVector([(w * c, b * c) for w, b in self.layers])

    __rmul__ = __mul__

    def __neg__(self) -> "ParamVector":
        return self * -1.0

    def scale_layers(self, factors: Sequence[float]) -> "ParamVector":
        if len(factors) != self.num_layers:
            raise ShapeError(f"{len(factors)} layer factors for {self.num_layers} layers")
        return ParamVector([(w * float(g), b * float(g)) for (w, b), g in zip(self.layers, factors)])

    def copy(self) -> "ParamVector":
        return ParamVector([(w.copy(), b.copy()) for w, b in self.layers])

    def zeros_like(self) -> "ParamVector":
        return ParamVector([(np.zeros_like(w), np.zeros_like(b)) for w, b in self.layers])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())

    def max_abs_diff(self, other: "ParamVector") -> float:
        self._check(other)
        return float(max(np.max(np.abs(a - b), initial=0.0) for a, b in zip(self.tensors(), other.tensors())))

    def equals(self, other: "ParamVector") -> bool:
        """Bitwise equality."""
        return self.shapes() == other.shapes() and all(
            np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors())
        )

    def __repr__(self):
        return f"ParamVector(shapes={self.shapes()}, total_len={self.total_len})"

    @staticmethod
    def mean(vectors: Sequence["ParamVector"]) -> "ParamVector":
        """Elementwise mean, summed in list order so results are reproducible."""
        if not vectors:
            raise ValueError("mean of an empty list of updates")
        acc = vectors[0].copy()
        for v in vectors[1:]:
            acc = acc + v
        return acc * (1.0 / len(vectors))


def flatten(u: ParamVector) -> np.ndarray:
    return np.concatenate([t.ravel() for t in u.tensors()])


def unflatten(v, spec: MlpSpec) -> ParamVector:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != spec.param_count:
        raise ShapeError(f"flat vector has {v.size} entries, spec {spec.layer_widths} needs {spec.param_count}")
    layers, pos = [], 0
    for wshape, bshape in spec.layer_shapes():
        nw = wshape[0] * wshape[1]
        w = v[pos : pos + nw].reshape(wshape).copy()
        pos += nw
        b = v[pos : pos + bshape[0]].copy()
        pos += bshape[0]
        layers.append((w, b))
    return ParamVector(layers)


def init_params(spec: MlpSpec) -> ParamVector:
    """N(0, 1/fan_in) weights and zero biases, seeded by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    layers = []
    for (fan_in, fan_out), _ in spec.layer_shapes():
        w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        layers.append((w, np.zeros(fan_out)))
    return ParamVector(layers)


def forward(params, inputs):
    """Logits of the MLP.

    ``params`` is a ParamVector, or a list of ``(W, b)`` DualTensor pairs when
    the caller needs gradients. Returns an array or a DualTensor to match.
    """
    layers = params.layers if isinstance(params, ParamVector) else params
    traced = isinstance(inputs, nd.DualTensor) or isinstance(layers[0][0], nd.DualTensor)
    x_shape = inputs.shape
    if len(x_shape) != 2 or x_shape[1] != layers[0][0].shape[0]:
        raise ShapeError(f"inputs of shape {x_shape} do not match input dim {layers[0][0].shape[0]}")

    if not traced:
        h = np.asarray(inputs, dtype=np.float64)
        for i, (w, b) in enumerate(layers):
            h = h @ w + b
            if i < len(layers) - 1:
                h = np.maximum(h, 0.0)
        return h

    h = nd.as_dual(inputs)
    for i, (w, b) in enumerate(layers):
        h = nd.add(nd.matmul(h, w), b)
        if i < len(layers) - 1:
            h = nd.relu(h)
    return h


def _check_simplex(soft_labels: np.ndarray):
    if np.any(soft_labels < -SIMPLEX_TOL) or np.any(np.abs(soft_labels.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("soft labels must lie on the probability simplex")


def per_example_losses(logits, soft_labels):
    """Row-wise ``-sum_k y_k log softmax(logits)_k`` as a length-N vector."""
    lv = logits.value if isinstance(logits, nd.DualTensor) else np.asarray(logits)
    yv = soft_labels.value if isinstance(soft_labels, nd.DualTensor) else np.asarray(soft_labels)
    if lv.shape != yv.shape:
        raise ShapeError(f"logits {lv.shape} and labels {yv.shape} differ")
    if not isinstance(soft_labels, nd.DualTensor):
        _check_simplex(yv)
    return nd.scale(nd.sum(nd.mul(soft_labels, nd.log_softmax(logits)), axis=1), -1.0)


def soft_cross_entropy(logits, soft_labels):
    """Mean soft-label cross-entropy over rows."""
    per = per_example_losses(logits, soft_labels)
    out = nd.scale(nd.sum(per), 1.0 / per.shape[0])
    if not isinstance(logits, nd.DualTensor) and not isinstance(soft_labels, nd.DualTensor):
        return float(out.value)
    return out


@dataclass
class SoftBatch:
    """Synthetic inputs with unconstrained label and weight logits.

    The effective soft labels are ``softmax(label_logits)`` per row and the
    effective spanning ratios are ``softmax(alpha_logits)``.
    """

    inputs: np.ndarray
    label_logits: np.ndarray
    alpha_logits: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.label_logits = np.asarray(self.label_logits, dtype=np.float64)
        self.alpha_logits = np.asarray(self.alpha_logits, dtype=np.float64).ravel()
        n = self.inputs.shape[0]
        if self.inputs.ndim != 2 or self.label_logits.ndim != 2:
            raise ShapeError("inputs and label logits must be 2-D")
        if self.label_logits.shape[0] != n or self.alpha_logits.shape[0] != n:
            raise ShapeError(
                f"row counts disagree: inputs {self.inputs.shape}, labels "
                f"{self.label_logits.shape}, alphas {self.alpha_logits.shape}"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def soft_labels(self) -> np.ndarray:
        z = self.label_logits - self.label_logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    @property
    def alphas(self) -> np.ndarray:
        z = np.exp(self.alpha_logits - self.alpha_logits.max())
        return z / z.sum()


def predict(params: ParamVector, inputs) -> np.ndarray:
    return np.argmax(forward(params, np.asarray(inputs, dtype=np.float64)), axis=1)


def accuracy(params: ParamVector, inputs, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(predict(params, inputs) == labels))
