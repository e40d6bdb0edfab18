"""
Payload size and the payload file
=================================

A payload of N synthetic inputs costs N*(D + C + 1) + L + 1 scalars no
matter how many parameters the model has. For 64 CIFAR-sized images and a
13-layer, 9.4M-parameter network that is about 48 times less than the raw
update.
"""

import tempfile
from pathlib import Path

import numpy as np

from tofu.codec import SyntheticDataset
from tofu.ledger import PayloadSpec, read_payload, tofu_payload_scalars, write_payload
from tofu.models import SoftBatch

big = PayloadSpec(nimgs=64, input_dim=3072, num_classes=10, num_layers=13)
n = tofu_payload_scalars(big)
print(f"64 images of 3072 values, 10 classes, 13 layers: {n} scalars")
print(f"9.4e6 / {n} = {9.4e6 / n:.1f}x")

for nimgs in (8, 16, 32, 64, 128):
    print(f"  nimgs={nimgs:4d}: {tofu_payload_scalars(PayloadSpec(nimgs, 3072, 10, 13)):8d} scalars")

# Payloads go over the wire as float32.
rng = np.random.default_rng(0)
ds = SyntheticDataset(SoftBatch(rng.standard_normal((4, 6)), rng.standard_normal((4, 3)),
                                rng.standard_normal(4)), [1.2, 0.8], 0.03)
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "payload.tofu"
    size = write_payload(ds, path)
    back = read_payload(path)
print(f"{ds.num_scalars} scalars -> {size} bytes on disk")
print("max round-trip error:", np.max(np.abs(back.batch.inputs - ds.batch.inputs)))
