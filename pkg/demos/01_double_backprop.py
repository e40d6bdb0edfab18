"""
Differentiating through a gradient
==================================

The encoder needs the derivative of a function of a parameter gradient with
respect to the inputs that produced it. This script checks one such
derivative against central finite differences.
"""

import numpy as np

from tofu import ndgrad as nd
from tofu.codec import alignment_objective
from tofu.models import MlpSpec, init_params, unflatten

spec = MlpSpec((4, 8, 3), seed=0)
params = init_params(spec)
rng = np.random.default_rng(0)
target = unflatten(rng.standard_normal(spec.param_count), spec)

# Two synthetic inputs with fixed soft labels and weights.
x0 = rng.standard_normal((2, 4))
labels = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])
alphas = np.array([0.3, 0.7])


def objective(xv):
    x = nd.leaf(xv)
    return alignment_objective(params, target, x, labels, alphas), x


r, x = objective(x0)
(analytic,) = nd.backward(r, [x])
print(f"1 - cos at x0: {r.value:.6f}")

h = 1e-5
numeric = np.zeros_like(x0)
for i in np.ndindex(x0.shape):
    e = np.zeros_like(x0)
    e[i] = h
    numeric[i] = (objective(x0 + e)[0].value - objective(x0 - e)[0].value) / (2 * h)

print("analytic:\n", analytic)
print("finite differences:\n", numeric)
print(f"relative error: {np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric)):.2e}")
