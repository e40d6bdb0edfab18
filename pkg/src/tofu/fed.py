"""Federated rounds: TOFU with its three-phase schedule, FedAvg, and single-device mode.

One TOFU round:

1. every client trains ``synfreq`` minibatches from the global weights,
   takes ``U_real = theta_start - theta_end`` and resets to the global weights;
2. the client encodes ``U_real`` and the server decodes each payload;
3. the server averages the decoded updates into ``U_serv``;
4. the server encodes ``U_serv`` once, and the server and every client apply
   the decoded result to their own copy of the weights.

Phase 2 rounds scale each decoded update by ``1 - final_r_loss`` carried in
the payload; the receiver applies the scaling. Phase 3 rounds and FedAvg send
raw updates both ways.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .codec import NORM_FLOOR, SyntheticDataset, decode, encode, weighted_gradient
from .data import Dataset, iid_partition, one_hot
from .ledger import Ledger, PayloadSpec, RoundRecord
from .models import MlpSpec, ParamVector, accuracy, init_params, per_example_losses
from .optim import AdamConfig, SgdConfig, sgd_step

__all__ = [
    "ClientState",
    "FULL_UPDATE",
    "FedConfig",
    "FedResult",
    "MODES",
    "ServerState",
    "SyncError",
    "aggregate",
    "batch_gradient",
    "client_local_update",
    "client_rng",
    "down_communicate",
    "minibatch_schedule",
    "phase_multiplier",
    "phase_of",
    "run_federated",
    "run_round",
    "setup",
    "up_communicate",
]

log = logging.getLogger(__name__)

MODES = ("tofu", "fedavg", "single_device")
EPOCH = "epoch"

# stream tags for seeded generators
_DATA, _ENCODE, _PARTITION = 0, 1, 2


class _FullUpdate:
    def __repr__(self):
        return "FULL_UPDATE"


FULL_UPDATE = _FullUpdate()


class SyncError(RuntimeError):
    pass


@dataclass(frozen=True)
class FedConfig:
    """Complete description of one experiment.

    ``switch2 = max_rounds + 1`` means no phase 3 round is ever run, and
    ``switch1 = switch2`` skips phase 2. ``synfreq`` is a minibatch count or
    ``"epoch"`` for one pass over the client shard.
    """

    mode: str = "tofu"
    num_clients: int = 4
    synfreq: object = EPOCH
    nimgs: int = 16
    nimgs_down: Optional[int] = None
    switch1: int = 1
    switch2: int = 21
    max_rounds: int = 20
    batch_size: int = 32
    sgd: SgdConfig = field(default_factory=SgdConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    encode_restarts: int = 1
    broadcast_per_client: bool = False
    seed: int = 0
    # model
    hidden: tuple = (32,)
    # data
    dataset: str = "blobs"
    n_samples: int = 1200
    n_features: int = 10
    n_classes: int = 4
    cluster_std: float = 1.0
    center_scale: float = 3.0
    noise: float = 0.1
    test_fraction: float = 0.25
    csv_path: Optional[str] = None
    # inversion attack
    attack_num_recon: int = 1
    attack_iters: int = 3000
    attack_lr: float = 0.1
    attack_label_mode: str = "known"
    attack_target: str = "raw"
    # output
    dump_payloads: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.num_clients < 1:
            raise ValueError("num_clients must be at least 1")
        if self.mode == "single_device" and self.num_clients != 1:
            raise ValueError("single_device mode has exactly one client")
        if self.synfreq != EPOCH and not (isinstance(self.synfreq, int) and self.synfreq >= 1):
            raise ValueError(f"synfreq must be a positive integer or 'epoch', got {self.synfreq!r}")
        if self.nimgs < 1 or (self.nimgs_down is not None and self.nimgs_down < 1):
            raise ValueError("nimgs must be at least 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if not 0 < self.switch1 <= self.switch2 <= self.max_rounds + 1:
            raise ValueError(
                f"need 0 < switch1 <= switch2 <= max_rounds + 1, got switch1={self.switch1}, "
                f"switch2={self.switch2}, max_rounds={self.max_rounds}"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.encode_restarts < 1:
            raise ValueError("encode_restarts must be at least 1")
        if self.attack_label_mode not in ("known", "optimized"):
            raise ValueError("attack_label_mode must be 'known' or 'optimized'")
        if self.attack_target not in ("raw", "tofu"):
            raise ValueError("attack_target must be 'raw' or 'tofu'")

    @property
    def down_nimgs(self) -> int:
        return self.nimgs if self.nimgs_down is None else self.nimgs_down

    def with_(self, **kw) -> "FedConfig":
        return replace(self, **kw)


@dataclass
class ClientState:
    id: int
    shard: np.ndarray
    theta: ParamVector
    x: np.ndarray = None
    y: np.ndarray = None


@dataclass
class ServerState:
    theta: ParamVector
    round: int = 0


@dataclass
class FedResult:
    records: list
    server: ServerState
    clients: list
    spec: MlpSpec


def client_rng(seed: int, party: int, round: int, tag: int = _DATA) -> np.random.Generator:
    """Generator for one party in one round, independent of scheduling order."""
    return np.random.default_rng([int(seed), int(tag), int(party), int(round)])


def minibatch_schedule(n: int, batch_size: int, steps: int, rng) -> list:
    """``steps`` index batches from successive shuffles of ``range(n)``; the last batch of a pass may be short."""
    batches = []
    while len(batches) < steps:
        perm = rng.permutation(n)
        for i in range(0, n, batch_size):
            batches.append(perm[i : i + batch_size])
            if len(batches) == steps:
                break
    return batches


def batch_gradient(params: ParamVector, x: np.ndarray, y: np.ndarray, num_classes: int) -> ParamVector:
    """Gradient of the mean cross-entropy of hard-labelled data."""
    n = len(y)
    g = weighted_gradient(
        params, x, one_hot(y, num_classes), np.full(n, 1.0 / n),
        loss=per_example_losses,
    )
    return ParamVector(list(zip(g[0::2], g[1::2])))


def resolve_synfreq(cfg: FedConfig, shard_size: int) -> int:
    if cfg.synfreq == EPOCH:
        return -(-shard_size // cfg.batch_size)
    return int(cfg.synfreq)


def client_local_update(c: ClientState, synfreq: int, lr: float, batch_size: int,
                        num_classes: int, rng) -> ParamVector:
    """Train ``synfreq`` SGD minibatches, return ``start - end`` and reset to start."""
    if len(c.shard) == 0:
        raise ValueError(f"client {c.id} has an empty shard")
    start = c.theta
    theta = start
    for idx in minibatch_schedule(len(c.shard), batch_size, synfreq, rng):
        g = batch_gradient(theta, c.x[idx], c.y[idx], num_classes)
        theta = sgd_step(theta, g, lr)
    c.theta = start
    return start - theta


def up_communicate(c: ClientState, u_real: ParamVector, nimgs: int, adam: AdamConfig,
                   seed, restarts: int = 1) -> SyntheticDataset:
    """Client-side encode of ``u_real`` against the client's current weights."""
    ds, _ = encode(u_real, c.theta, nimgs, adam, seed=seed, restarts=restarts)
    return ds


def aggregate(updates) -> ParamVector:
    """Mean of client updates, summed in the given (client-id) order."""
    return ParamVector.mean(list(updates))


def down_communicate(s: ServerState, u_serv: ParamVector, nimgs: int, adam: AdamConfig,
                     seed, restarts: int = 1) -> SyntheticDataset:
    ds, _ = encode(u_serv, s.theta, nimgs, adam, seed=seed, restarts=restarts)
    return ds


def phase_of(round: int, cfg: FedConfig) -> int:
    if cfg.mode == "fedavg" or round >= cfg.switch2:
        return 3
    return 1 if round < cfg.switch1 else 2


def phase_multiplier(round: int, r_loss_final: float, cfg: FedConfig):
    """1.0 in phase 1, ``1 - r_loss`` clamped to [0, 1] in phase 2, FULL_UPDATE in phase 3."""
    phase = phase_of(round, cfg)
    if phase == 3:
        return FULL_UPDATE
    if phase == 2:
        return float(np.clip(1.0 - r_loss_final, 0.0, 1.0))
    return 1.0


def _receive(theta: ParamVector, ds: SyntheticDataset, round: int, cfg: FedConfig) -> ParamVector:
    """Decoded update as applied by a receiver, including any phase-2 scaling."""
    u = decode(theta, ds)
    mult = phase_multiplier(round, ds.final_r_loss, cfg)
    return u if mult == 1.0 else u * mult


def _is_zero(u: ParamVector) -> bool:
    return float(np.sqrt(np.sum([np.sum(t * t) for t in u.tensors()]))) < NORM_FLOOR


def setup(cfg: FedConfig, data: Dataset) -> tuple:
    """Model spec, server and clients with IID shards, all on the same initial weights."""
    spec = MlpSpec((data.input_dim, *cfg.hidden, data.num_classes), seed=cfg.seed)
    theta0 = init_params(spec)
    rng = np.random.default_rng([cfg.seed, _PARTITION])
    shards = iid_partition(data.y_train, cfg.num_clients, rng)
    xt, yt = data.x_train, data.y_train
    clients = [ClientState(i, s, theta0.copy(), xt[s], yt[s]) for i, s in enumerate(shards)]
    return spec, ServerState(theta0.copy()), clients


def check_sync(server: ServerState, clients) -> None:
    for c in clients:
        if not c.theta.equals(server.theta):
            diff = c.theta - server.theta
            nrm = float(np.sqrt(np.sum([np.sum(t * t) for t in diff.tensors()])))
            raise SyncError(f"client {c.id} out of sync after round {server.round}: diff norm {nrm:.3e}")


def run_round(s: ServerState, clients, cfg: FedConfig, data: Dataset, ledger: Ledger,
              on_payload: Callable | None = None) -> RoundRecord:
    """Execute one communication round and append its RoundRecord to ``ledger``.

    ``on_payload(round, party, payload)`` sees every encoded payload; the
    server is party ``len(clients)``.
    """
    check_sync(s, clients)
    rnd = s.round + 1
    phase = phase_of(rnd, cfg)
    C = data.num_classes
    P = s.theta.total_len
    k = len(clients)

    r_losses, up, down = [], 0, 0
    decoded, payloads = [], []
    for c in clients:
        synfreq = resolve_synfreq(cfg, len(c.shard))
        steps_per_epoch = -(-len(c.shard) // cfg.batch_size)
        lr = cfg.sgd.lr_for_epoch(((rnd - 1) * synfreq) // steps_per_epoch)
        u_real = client_local_update(c, synfreq, lr, cfg.batch_size, C, client_rng(cfg.seed, c.id, rnd))
        if phase == 3:
            decoded.append(u_real)
            up += P
        elif _is_zero(u_real):
            log.info("round %d: client %d has a zero update, nothing sent", rnd, c.id)
            decoded.append(u_real)
            payloads.append(None)
        else:
            ds = up_communicate(c, u_real, cfg.nimgs, cfg.adam,
                                [cfg.seed, _ENCODE, c.id, rnd], cfg.encode_restarts)
            if on_payload is not None:
                on_payload(rnd, c.id, ds)
            r_losses.append(ds.final_r_loss)
            up += ds.num_scalars
            decoded.append(_receive(s.theta, ds, rnd, cfg))
            payloads.append(ds)

    u_serv = aggregate(decoded)

    if cfg.mode == "single_device":
        # the data holder decodes its own payload and follows the receiver
        s.theta = s.theta - u_serv
        for c in clients:
            if phase == 3:
                c.theta = c.theta - u_serv
            elif payloads[c.id] is not None:
                c.theta = c.theta - _receive(c.theta, payloads[c.id], rnd, cfg)
    elif phase == 3:
        s.theta = s.theta - u_serv
        for c in clients:
            c.theta = c.theta - u_serv
        down = P * (k if cfg.broadcast_per_client else 1)
    elif _is_zero(u_serv):
        log.info("round %d: aggregated update is zero, down-communication skipped", rnd)
    else:
        ds = down_communicate(s, u_serv, cfg.down_nimgs, cfg.adam,
                              [cfg.seed, _ENCODE, k, rnd], cfg.encode_restarts)
        if on_payload is not None:
            on_payload(rnd, k, ds)
        r_losses.append(ds.final_r_loss)
        down = ds.num_scalars * (k if cfg.broadcast_per_client else 1)
        s.theta = s.theta - _receive(s.theta, ds, rnd, cfg)
        for c in clients:
            c.theta = c.theta - _receive(c.theta, ds, rnd, cfg)

    s.round = rnd
    check_sync(s, clients)
    acc = accuracy(s.theta, data.x_test, data.y_test)
    mean_r = float(np.mean(r_losses)) if r_losses else 0.0
    return ledger.record(rnd, phase, cfg.mode, acc, mean_r, up, down)


def run_federated(cfg: FedConfig, data: Dataset, on_round: Callable | None = None,
                  on_payload: Callable | None = None) -> FedResult:
    """Run ``cfg.max_rounds`` rounds; ``on_round(record)`` is called after each one."""
    spec, server, clients = setup(cfg, data)
    ledger = Ledger()
    for _ in range(cfg.max_rounds):
        rec = run_round(server, clients, cfg, data, ledger, on_payload)
        log.info("round %d phase %d acc %.4f r_loss %.4f scalars %d", rec.round, rec.phase,
                 rec.accuracy, rec.mean_r_loss, rec.cumulative_scalars)
        if on_round is not None:
            on_round(rec)
    return FedResult(ledger.records, server, clients, spec)


def payload_spec(cfg: FedConfig, spec: MlpSpec, nimgs: int | None = None) -> PayloadSpec:
    return PayloadSpec(nimgs or cfg.nimgs, spec.input_dim, spec.num_classes, spec.num_layers, spec.param_count)
