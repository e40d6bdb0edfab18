"""Federated learning with updates encoded as small synthetic datasets.

Clients encode their weight updates into a handful of synthetic inputs with
soft labels and per-input weights whose gradient reproduces the update's
direction; per-layer scaling ratios restore its magnitude. Modules:

- ``ndgrad``: reverse-mode autodiff with double backprop
- ``models``: ReLU MLPs and the ``ParamVector`` update type
- ``optim``: SGD and step-decayed Adam
- ``codec``: encode / decode of updates
- ``fed``: TOFU, FedAvg and single-device rounds
- ``ledger``: communication accounting, metrics, payload files
- ``leakage``: gradient-inversion attack harness
- ``data``, ``cli``: datasets and the experiment runner
"""

__version__ = "0.1.0"
