"""
Encoding a weight update as synthetic data
==========================================

A client trains for ten minibatches, then replaces its weight update with 32
synthetic inputs whose weighted gradient points the same way. The receiver
recovers the update with one forward and backward pass.
"""

import numpy as np

from tofu.codec import decode, encode, r_loss
from tofu.data import make_dataset
from tofu.fed import FedConfig, client_local_update, client_rng, setup
from tofu.models import MlpSpec, flatten

data = make_dataset("blobs", seed=0, n_samples=600, n_features=10, n_classes=4, test_fraction=0.25)
cfg = FedConfig(num_clients=1, hidden=(32,))
spec, server, (client,) = setup(cfg, data)

u_real = client_local_update(client, 10, 0.1, 32, 4, client_rng(0, 0, 1))
print(f"model has {spec.param_count} parameters")

ds, report = encode(u_real, client.theta, nimgs=32, seed=0)
print(f"payload: {ds.num_scalars} scalars, 1 - cos after {report.iterations_run} iterations: {ds.final_r_loss:.4f}")
print("trace every 100 iterations:", np.round(report.r_loss_trace[::100], 4))

# The receiver only needs the payload and its own copy of the weights.
u_hat = decode(server.theta, ds)
print(f"cosine(u_real, decoded) = {1 - r_loss(u_real, u_hat):.4f}")
print("per-layer norms, real:   ", u_real.layer_norms())
print("per-layer norms, decoded:", u_hat.layer_norms())

# On a net this small the payload is about as large as the update itself. The
# payload does not grow with the hidden width, so wider nets gain.
print(f"raw update {u_real.total_len} scalars, payload {ds.num_scalars}")
for width in (32, 256, 2048):
    p = MlpSpec((10, width, 4)).param_count
    print(f"  hidden {width:5d}: {p:6d} parameters -> {p / ds.num_scalars:5.1f}x")

# Decoding is deterministic, so every party applying it stays in lockstep.
assert np.array_equal(flatten(decode(server.theta, ds)), flatten(u_hat))
