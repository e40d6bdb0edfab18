import json

import pytest

from tofu.cli import CONFIG_KEYS, ConfigError, config_from_dict, dump_config, load_config, main
from tofu.fed import FedConfig, resolve_synfreq

SMALL = {
    "dataset": "blobs", "n_samples": 160, "n_features": 4, "n_classes": 3, "hidden": [6],
    "num_clients": 2, "max_rounds": 3, "switch1": 2, "switch2": 3, "nimgs": 3,
    "adam_max_iters": 30, "adam_decay_iters": [12, 20, 26], "attack_iters": 200,
}


def write(tmp_path, raw, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


def test_minimal_config_uses_defaults():
    cfg = config_from_dict({"dataset": "moons"})
    assert cfg.dataset == "moons"
    assert cfg.num_clients == FedConfig().num_clients and cfg.adam.max_iters == 1000


def test_every_key_has_a_default_and_round_trips():
    cfg = config_from_dict(SMALL)
    flat = dump_config(cfg)
    assert set(flat) == set(CONFIG_KEYS)
    assert config_from_dict(flat) == cfg


@pytest.mark.parametrize("raw, msg", [
    ({}, "missing required keys: dataset"),
    ({"dataset": "blobs", "colour": 1}, "unknown keys: colour"),
    ({"dataset": "blobs", "nimgs": "8"}, "nimgs"),
    ({"dataset": "blobs", "nimgs": 2.5}, "nimgs"),
    ({"dataset": "blobs", "broadcast_per_client": 1}, "broadcast_per_client"),
    ({"dataset": "blobs", "switch1": 5, "switch2": 3}, "switch1"),
    ({"dataset": "blobs", "adam_decay_iters": [500, 400]}, "decay_iters"),
])
def test_config_errors(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(raw)


def test_epoch_sentinel():
    cfg = config_from_dict({"dataset": "blobs", "synfreq": "epoch", "batch_size": 10})
    assert resolve_synfreq(cfg, 95) == 10
    assert config_from_dict({"dataset": "blobs", "synfreq": 4}).synfreq == 4


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError, match="object"):
        load_config(write(tmp_path, [1, 2]))


def test_main_exit_code_for_bad_config(tmp_path, capsys):
    assert main(["--config", str(write(tmp_path, {"dataset": "blobs", "nimgs": "x"})), "--mode", "tofu",
                 "--out", str(tmp_path / "o")]) == 2
    assert "[config]" in capsys.readouterr().err


def test_main_exit_code_for_bad_data(tmp_path):
    raw = dict(SMALL, dataset="digits_csv", csv_path=str(tmp_path / "none.csv"))
    assert main(["--config", str(write(tmp_path, raw)), "--mode", "tofu", "--out", str(tmp_path / "o")]) == 6
    (tmp_path / "short.csv").write_text("0.1,0.2,1\n0.1,1\n")
    raw["csv_path"] = str(tmp_path / "short.csv")
    assert main(["--config", str(write(tmp_path, raw)), "--mode", "tofu", "--out", str(tmp_path / "o")]) == 3


def test_tofu_smoke_run(tmp_path):
    out = tmp_path / "run"
    raw = dict(SMALL, max_rounds=5, switch1=2, switch2=6, dump_payloads=True)
    assert main(["--config", str(write(tmp_path, raw)), "--mode", "tofu", "--out", str(out), "--seed", "4"]) == 0
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(l)["round"] for l in lines] == [1, 2, 3, 4, 5]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["subcommand"] == "tofu" and manifest["config"]["seed"] == 4
    assert len(list((out / "payloads").glob("*.tofu"))) == 5 * 3


@pytest.mark.parametrize("mode", ["train", "fedavg", "tofu", "attack"])
def test_subcommands_are_deterministic(tmp_path, mode):
    cfg = write(tmp_path, SMALL)
    for name in ("a", "b"):
        assert main(["--config", str(cfg), "--mode", mode, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert (tmp_path / "a" / "metrics.jsonl").stat().st_size > 0


def test_train_mode_is_single_device(tmp_path):
    assert main(["--config", str(write(tmp_path, SMALL)), "--mode", "train", "--out", str(tmp_path / "t")]) == 0
    rec = json.loads((tmp_path / "t" / "metrics.jsonl").read_text().splitlines()[0])
    assert rec["mode"] == "single_device" and rec["down_scalars"] == 0


def test_attack_subcommand_on_raw_gradient(tmp_path):
    out = tmp_path / "atk"
    raw = dict(SMALL, attack_iters=3000)
    assert main(["--config", str(write(tmp_path, raw)), "--mode", "attack", "--out", str(out)]) == 0
    report = json.loads((out / "attack_report.json").read_text())
    assert report["final_cosine"] >= 0.999
    assert (out / "attack_recon.txt").exists()
