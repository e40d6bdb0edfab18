"""Experiment runner.

    python -m tofu --config run.json --mode tofu --out runs/tofu --seed 3

``--mode`` is one of ``train`` (single device), ``fedavg``, ``tofu`` or
``attack``. Everything else comes from the config file, a flat JSON object
whose keys are listed in :data:`CONFIG_KEYS`. The output directory receives
``manifest.json`` (written before the run starts), ``metrics.jsonl`` and, for
``attack``, ``attack_report.json`` plus ``attack_recon.txt``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codec import DegenerateUpdateError, decode, encode
from .data import Dataset, DatasetError, make_dataset as _make_dataset
from .fed import FedConfig, SyncError, client_local_update, client_rng, resolve_synfreq, run_federated, setup
from .leakage import AttackConfig, invert_update, single_datum_gradient
from .ledger import emit, write_payload
from .ndgrad import NonFiniteError, ShapeError
from .optim import AdamConfig, SgdConfig

__all__ = ["CONFIG_KEYS", "ConfigError", "dump_config", "load_config", "main", "make_dataset", "run"]

log = logging.getLogger(__name__)

SUBCOMMANDS = {"train": "single_device", "fedavg": "fedavg", "tofu": "tofu", "attack": None}


class ConfigError(ValueError):
    pass


# key -> (type tag, default). Tags: int, float, str, bool, ints, int|epoch, int?, str?
_D = FedConfig()
_S = SgdConfig()
_A = AdamConfig()
CONFIG_KEYS = {
    "mode": ("str", _D.mode),
    "num_clients": ("int", _D.num_clients),
    "synfreq": ("int|epoch", _D.synfreq),
    "nimgs": ("int", _D.nimgs),
    "nimgs_down": ("int?", _D.nimgs_down),
    "switch1": ("int", _D.switch1),
    "switch2": ("int", _D.switch2),
    "max_rounds": ("int", _D.max_rounds),
    "batch_size": ("int", _D.batch_size),
    "sgd_lr": ("float", _S.lr),
    "sgd_decay_epochs": ("ints", list(_S.decay_epochs)),
    "sgd_decay_factor": ("float", _S.decay_factor),
    "adam_lr_x": ("float", _A.lr_x),
    "adam_lr_y": ("float", _A.lr_y),
    "adam_lr_alpha": ("float", _A.lr_alpha),
    "adam_beta1": ("float", _A.beta1),
    "adam_beta2": ("float", _A.beta2),
    "adam_eps": ("float", _A.eps),
    "adam_max_iters": ("int", _A.max_iters),
    "adam_decay_iters": ("ints", list(_A.decay_iters)),
    "adam_decay_factor": ("float", _A.decay_factor),
    "encode_restarts": ("int", _D.encode_restarts),
    "broadcast_per_client": ("bool", _D.broadcast_per_client),
    "seed": ("int", _D.seed),
    "hidden": ("ints", list(_D.hidden)),
    "dataset": ("str", _D.dataset),
    "n_samples": ("int", _D.n_samples),
    "n_features": ("int", _D.n_features),
    "n_classes": ("int", _D.n_classes),
    "cluster_std": ("float", _D.cluster_std),
    "center_scale": ("float", _D.center_scale),
    "noise": ("float", _D.noise),
    "test_fraction": ("float", _D.test_fraction),
    "csv_path": ("str?", _D.csv_path),
    "attack_num_recon": ("int", _D.attack_num_recon),
    "attack_iters": ("int", _D.attack_iters),
    "attack_lr": ("float", _D.attack_lr),
    "attack_label_mode": ("str", _D.attack_label_mode),
    "attack_target": ("str", _D.attack_target),
    "dump_payloads": ("bool", _D.dump_payloads),
}
REQUIRED_KEYS = ("dataset",)


def _check_type(key: str, tag: str, v):
    def is_int(x):
        return isinstance(x, int) and not isinstance(x, bool)

    ok = {
        "int": is_int(v),
        "float": (is_int(v) or isinstance(v, float)),
        "str": isinstance(v, str),
        "bool": isinstance(v, bool),
        "ints": isinstance(v, list) and all(is_int(i) for i in v),
        "int|epoch": is_int(v) or v == "epoch",
        "int?": v is None or is_int(v),
        "str?": v is None or isinstance(v, str),
    }[tag]
    if not ok:
        raise ConfigError(f"{key}: expected {tag}, got {v!r}")
    return float(v) if tag == "float" else v


def config_from_dict(raw: dict) -> FedConfig:
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    v = {k: _check_type(k, tag, raw.get(k, default)) for k, (tag, default) in CONFIG_KEYS.items()}
    try:
        sgd = SgdConfig(v.pop("sgd_lr"), tuple(v.pop("sgd_decay_epochs")), v.pop("sgd_decay_factor"))
        adam = AdamConfig(
            v.pop("adam_lr_x"), v.pop("adam_lr_y"), v.pop("adam_lr_alpha"), v.pop("adam_beta1"),
            v.pop("adam_beta2"), v.pop("adam_eps"), v.pop("adam_max_iters"),
            tuple(v.pop("adam_decay_iters")), v.pop("adam_decay_factor"),
        )
        return FedConfig(sgd=sgd, adam=adam, **{**v, "hidden": tuple(v["hidden"])})
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> FedConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(raw)


def dump_config(cfg: FedConfig) -> dict:
    """Flat key/value form of ``cfg``; ``config_from_dict`` inverts it."""
    out = {}
    for k in CONFIG_KEYS:
        if k.startswith("sgd_"):
            v = getattr(cfg.sgd, k[4:])
        elif k.startswith("adam_"):
            v = getattr(cfg.adam, k[5:])
        else:
            v = getattr(cfg, k)
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def make_dataset(cfg: FedConfig) -> Dataset:
    return _make_dataset(
        cfg.dataset, seed=cfg.seed, n_samples=cfg.n_samples, n_features=cfg.n_features,
        n_classes=cfg.n_classes, cluster_std=cfg.cluster_std, center_scale=cfg.center_scale,
        noise=cfg.noise, test_fraction=cfg.test_fraction, csv_path=cfg.csv_path,
    )


def _build_id() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def _write_manifest(out: Path, cfg: FedConfig, subcommand: str, outputs: dict) -> None:
    manifest = {
        "subcommand": subcommand,
        "seed": cfg.seed,
        "build": _build_id(),
        "start_time": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": outputs,
        "config": dump_config(cfg),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _run_attack(cfg: FedConfig, data: Dataset, out: Path) -> dict:
    """Invert either a raw single-datum gradient or a decoded TOFU payload of client 0."""
    spec, server, clients = setup(cfg.with_(mode="tofu"), data)
    client = clients[0]
    acfg = AttackConfig(cfg.attack_num_recon, cfg.attack_iters, cfg.attack_lr, cfg.attack_label_mode)
    if cfg.attack_target == "raw":
        target = single_datum_gradient(server.theta, client.x[0], int(client.y[0]), data.num_classes)
        labels = [int(client.y[0])]
    else:
        steps = resolve_synfreq(cfg, len(client.shard))
        u_real = client_local_update(client, steps, cfg.sgd.lr, cfg.batch_size, data.num_classes,
                                     client_rng(cfg.seed, client.id, 1))
        ds, _ = encode(u_real, client.theta, cfg.nimgs, cfg.adam, seed=[cfg.seed, 1, client.id, 1],
                       restarts=cfg.encode_restarts)
        target = decode(server.theta, ds)
        labels = np.argmax(ds.batch.soft_labels, axis=1)[: acfg.num_recon]
        if len(labels) < acfg.num_recon:
            labels = np.resize(labels, acfg.num_recon)
    rep = invert_update(target, server.theta, acfg, seed=[cfg.seed, 3], reference=client.x, labels=labels)
    report = {"attack_target": cfg.attack_target, **rep.to_dict()}
    (out / "attack_report.json").write_text(json.dumps(report, indent=2) + "\n")
    rep.save_inputs(out / "attack_recon.txt")
    return report


def run(cfg: FedConfig, subcommand: str, out) -> int:
    """Execute one experiment into directory ``out``; returns the process exit status."""
    if subcommand not in SUBCOMMANDS:
        print(f"[cli] unknown subcommand {subcommand!r}", file=sys.stderr)
        return 2
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mode = SUBCOMMANDS[subcommand]
    try:
        if mode is not None:
            cfg = cfg.with_(mode=mode, num_clients=1 if mode == "single_device" else cfg.num_clients)
        outputs = {"manifest": "manifest.json", "metrics": "metrics.jsonl"}
        if subcommand == "attack":
            outputs.update(report="attack_report.json", recon="attack_recon.txt")
        _write_manifest(out, cfg, subcommand, outputs)
        data = make_dataset(cfg)
        if subcommand == "attack":
            report = _run_attack(cfg, data, out)
            with open(out / "metrics.jsonl", "w") as sink:
                sink.write(json.dumps({"record": "attack", **report}) + "\n")
            return 0

        on_payload = None
        if cfg.dump_payloads:
            pdir = out / "payloads"
            pdir.mkdir(exist_ok=True)

            def on_payload(rnd, party, ds):
                write_payload(ds, pdir / f"round{rnd:04d}_party{party}.tofu")

        with open(out / "metrics.jsonl", "w") as sink:
            run_federated(cfg, data, on_round=lambda rec: emit(rec, sink), on_payload=on_payload)
        return 0
    except ConfigError as e:
        print(f"[config] {e}", file=sys.stderr)
        return 2
    except DatasetError as e:
        print(f"[data] {e}", file=sys.stderr)
        return 3
    except (NonFiniteError, DegenerateUpdateError, ShapeError) as e:
        print(f"[codec] {e}", file=sys.stderr)
        return 4
    except SyncError as e:
        print(f"[fed] {e}", file=sys.stderr)
        return 5
    except ValueError as e:
        print(f"[config] {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"[io] {e}", file=sys.stderr)
        return 6


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tofu", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", required=True, help="flat JSON config file")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--out", default="runs/latest", help="output directory")
    ap.add_argument("--mode", required=True, choices=sorted(SUBCOMMANDS))
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg = cfg.with_(seed=args.seed)
    except ConfigError as e:
        print(f"[config] {e}", file=sys.stderr)
        return 2
    return run(cfg, args.mode, args.out)
