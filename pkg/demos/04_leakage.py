"""
What an update leaks
====================

An attacker who sees a single-datum gradient can rebuild that datum by
matching gradients. The same attack run against a decoded TOFU payload lands
far from every real datum, because the payload's inputs were never real.
"""

import numpy as np

from tofu.codec import decode, encode
from tofu.data import make_dataset
from tofu.fed import FedConfig, client_local_update, client_rng, setup
from tofu.leakage import AttackConfig, invert_update, single_datum_gradient

data = make_dataset("blobs", seed=0, n_samples=600, n_features=10, n_classes=4, test_fraction=0.25)
spec, server, (client,) = setup(FedConfig(num_clients=1, hidden=(32,)), data)
theta = client.theta

# Raw gradient of one training example, label known to the attacker.
x0, y0 = client.x[0], int(client.y[0])
raw = invert_update(single_datum_gradient(theta, x0, y0, 4), theta, AttackConfig(), seed=0,
                    reference=client.x, labels=[y0])
print(f"raw gradient: cosine {raw.final_cosine:.6f}, "
      f"MSE to the true datum {np.mean((raw.recon_inputs[0] - x0) ** 2):.2e}")

# A full local epoch, encoded and decoded the way the server sees it.
u = client_local_update(client, 10, 0.1, 32, 4, client_rng(0, 0, 1))
ds, _ = encode(u, theta, 32, seed=0)
guess = np.argmax(ds.batch.soft_labels, axis=1)[:1]
tofu = invert_update(decode(theta, ds), theta, AttackConfig(), seed=0, reference=client.x, labels=guess)
print(f"TOFU payload: cosine {tofu.final_cosine:.6f}, "
      f"MSE to the nearest datum {tofu.nearest_datum_mse[0]:.2e}")
print(f"ratio: {tofu.nearest_datum_mse[0] / max(raw.nearest_datum_mse[0], 1e-300):.1e}")
