"""Communication accounting, the per-round metrics stream and the payload file format.

Everything is counted in transmitted scalars. Byte figures assume 4 bytes per
scalar, which is also how payload files store reals.

Metrics files hold one JSON object per line with the keys of
:class:`RoundRecord` in declaration order::

    {"round": 1, "phase": 1, "mode": "tofu", "accuracy": 0.81, "mean_r_loss": 0.04,
     "up_scalars": 976, "down_scalars": 244, "cumulative_scalars": 1220}

Payload files are ``b"TOFU1"``, then N, D, C, L as little-endian uint32, then
inputs (N*D), label logits (N*C), alpha logits (N), scaling ratios (L) and the
final reconstruction loss (1) as little-endian float32, row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import SyntheticDataset
from .models import SoftBatch

__all__ = [
    "BYTES_PER_SCALAR",
    "Ledger",
    "PAYLOAD_MAGIC",
    "PayloadSpec",
    "RoundRecord",
    "UNREACHED",
    "efficiency_ratio",
    "emit",
    "fedavg_payload_scalars",
    "first_crossing",
    "read_metrics",
    "read_payload",
    "tofu_payload_scalars",
    "write_payload",
]

BYTES_PER_SCALAR = 4
PAYLOAD_MAGIC = b"TOFU1"


class _Unreached:
    """Marker returned when a run never reaches the target accuracy."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNREACHED"

    def __bool__(self):
        return False


UNREACHED = _Unreached()


@dataclass(frozen=True)
class PayloadSpec:
    nimgs: int
    input_dim: int
    num_classes: int
    num_layers: int
    param_count: int = 1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be positive")


def tofu_payload_scalars(p: PayloadSpec) -> int:
    """Inputs, label logits, one alpha per row, one ratio per layer, one loss value."""
    return p.nimgs * (p.input_dim + p.num_classes + 1) + p.num_layers + 1


def fedavg_payload_scalars(p: PayloadSpec) -> int:
    return p.param_count


@dataclass
class RoundRecord:
    round: int
    phase: int
    mode: str
    accuracy: float
    mean_r_loss: float
    up_scalars: int
    down_scalars: int
    cumulative_scalars: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class Ledger:
    """Running total of scalars sent; produces one RoundRecord per round."""

    def __init__(self):
        self.cumulative = 0
        self.records: list = []

    def record(self, round: int, phase: int, mode: str, accuracy: float, mean_r_loss: float,
               up_scalars: int, down_scalars: int) -> RoundRecord:
        if up_scalars < 0 or down_scalars < 0:
            raise ValueError("scalar counts cannot be negative")
        self.cumulative += int(up_scalars) + int(down_scalars)
        rec = RoundRecord(int(round), int(phase), str(mode), float(accuracy), float(mean_r_loss),
                          int(up_scalars), int(down_scalars), self.cumulative)
        self.records.append(rec)
        return rec


def emit(record: RoundRecord, sink) -> None:
    """Append ``record`` as one line to an open text sink and flush it."""
    sink.write(record.to_json() + "\n")
    sink.flush()


def read_metrics(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(RoundRecord(**json.loads(line)))
    return out


def first_crossing(records: Sequence[RoundRecord], target_acc: float):
    for r in records:
        if r.accuracy >= target_acc:
            return r
    return None


def efficiency_ratio(baseline: Iterable[RoundRecord], candidate: Iterable[RoundRecord], target_acc: float):
    """Baseline over candidate cumulative scalars at the first round each reaches ``target_acc``.

    Returns :data:`UNREACHED` when either run never gets there.
    """
    b = first_crossing(list(baseline), target_acc)
    c = first_crossing(list(candidate), target_acc)
    if b is None or c is None or c.cumulative_scalars == 0:
        return UNREACHED
    return b.cumulative_scalars / c.cumulative_scalars


# -- payload file -------------------------------------------------------------


def write_payload(ds: SyntheticDataset, path) -> int:
    """Write ``ds`` in the TOFU1 format; returns bytes written."""
    b = ds.batch
    n, d = b.inputs.shape
    c = b.label_logits.shape[1]
    header = PAYLOAD_MAGIC + struct.pack("<4I", n, d, c, ds.gamma.size)
    body = np.concatenate([
        b.inputs.ravel(), b.label_logits.ravel(), b.alpha_logits.ravel(),
        ds.gamma.ravel(), [ds.final_r_loss],
    ]).astype("<f4")
    data = header + body.tobytes()
    Path(path).write_bytes(data)
    return len(data)


def read_payload(path) -> SyntheticDataset:
    data = Path(path).read_bytes()
    if data[:5] != PAYLOAD_MAGIC:
        raise ValueError(f"{path}: not a TOFU1 payload")
    n, d, c, l = struct.unpack_from("<4I", data, 5)
    count = n * (d + c + 1) + l + 1
    body = np.frombuffer(data, dtype="<f4", offset=5 + 16)
    if body.size != count:
        raise ValueError(f"{path}: expected {count} reals, found {body.size}")
    v = body.astype(np.float64)
    pos = 0

    def take(k):
        nonlocal pos
        out = v[pos : pos + k]
        pos += k
        return out

    x = take(n * d).reshape(n, d)
    y = take(n * c).reshape(n, c)
    a = take(n)
    gamma = take(l)
    final = float(take(1)[0])
    return SyntheticDataset(SoftBatch(x, y, a), gamma, final)
