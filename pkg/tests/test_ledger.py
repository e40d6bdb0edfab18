import io
import json

import numpy as np
import pytest

from tofu.codec import SyntheticDataset
from tofu.ledger import (
    UNREACHED, Ledger, PayloadSpec, RoundRecord, efficiency_ratio, emit, fedavg_payload_scalars,
    first_crossing, read_metrics, read_payload, tofu_payload_scalars, write_payload,
)
from tofu.models import SoftBatch


def test_payload_scalars_large_model():
    n = tofu_payload_scalars(PayloadSpec(64, 3072, 10, 13))
    assert n == 197_326
    assert 9.4e6 / n == pytest.approx(47.64, abs=0.01)


def test_payload_scalars_small():
    assert tofu_payload_scalars(PayloadSpec(16, 8, 3, 4)) == 197
    assert fedavg_payload_scalars(PayloadSpec(16, 8, 3, 4, param_count=1234)) == 1234


def test_payload_spec_validation():
    with pytest.raises(ValueError):
        PayloadSpec(0, 8, 3, 4)


def curve(accs, per_round):
    led = Ledger()
    for i, a in enumerate(accs, start=1):
        led.record(i, 1, "x", a, 0.0, per_round, 0)
    return led.records


def test_efficiency_identical_runs():
    r = curve([0.5, 0.7, 0.9], 100)
    assert efficiency_ratio(r, r, 0.7) == 1.0


def test_efficiency_half_the_scalars():
    assert efficiency_ratio(curve([0.5, 0.7], 100), curve([0.5, 0.7], 50), 0.7) == 2.0


def test_efficiency_uses_first_crossing():
    base = curve([0.8, 0.6, 0.9], 100)
    cand = curve([0.5, 0.85], 10)
    assert first_crossing(base, 0.8).round == 1
    assert efficiency_ratio(base, cand, 0.8) == 100 / 20


def test_efficiency_unreached():
    r = efficiency_ratio(curve([0.5], 10), curve([0.9], 10), 0.8)
    assert r is UNREACHED and not r


def test_zero_communication_round():
    led = Ledger()
    rec = led.record(1, 1, "tofu", 0.5, 0.0, 0, 0)
    assert rec.up_scalars == rec.down_scalars == rec.cumulative_scalars == 0


def test_ledger_rejects_negative_counts():
    with pytest.raises(ValueError):
        Ledger().record(1, 1, "tofu", 0.5, 0.0, -1, 0)


def test_emit_and_replay(tmp_path):
    led = Ledger()
    path = tmp_path / "m.jsonl"
    with open(path, "w") as fh:
        for i, (u, d) in enumerate([(10, 5), (0, 0), (7, 3)], start=1):
            emit(led.record(i, 1, "tofu", 0.1 * i, 0.01, u, d), fh)
    recs = read_metrics(path)
    assert recs == led.records
    total = 0
    for r in recs:
        total += r.up_scalars + r.down_scalars
        assert r.cumulative_scalars == total


def test_record_line_format():
    buf = io.StringIO()
    emit(RoundRecord(1, 2, "tofu", 0.5, 0.25, 3, 4, 7), buf)
    line = buf.getvalue()
    assert line.endswith("\n") and line.count("\n") == 1
    assert list(json.loads(line)) == [
        "round", "phase", "mode", "accuracy", "mean_r_loss", "up_scalars", "down_scalars", "cumulative_scalars",
    ]


def test_payload_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = SyntheticDataset(SoftBatch(rng.standard_normal((3, 5)), rng.standard_normal((3, 2)),
                                    rng.standard_normal(3)), [1.5, 0.25], 0.125)
    path = tmp_path / "p.tofu"
    nbytes = write_payload(ds, path)
    assert nbytes == 5 + 16 + 4 * ds.num_scalars
    raw = path.read_bytes()
    assert raw[:5] == b"TOFU1" and np.frombuffer(raw[5:21], "<u4").tolist() == [3, 5, 2, 2]
    back = read_payload(path)
    assert np.array_equal(back.batch.inputs, ds.batch.inputs.astype(np.float32))
    assert np.array_equal(back.batch.label_logits, ds.batch.label_logits.astype(np.float32))
    assert np.array_equal(back.batch.alpha_logits, ds.batch.alpha_logits.astype(np.float32))
    assert back.gamma.tolist() == [1.5, 0.25] and back.final_r_loss == 0.125


def test_payload_file_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.tofu"
    bad.write_bytes(b"NOPE!" + bytes(16))
    with pytest.raises(ValueError):
        read_payload(bad)
    short = tmp_path / "short.tofu"
    short.write_bytes(b"TOFU1" + np.array([1, 1, 2, 1], "<u4").tobytes() + bytes(8))
    with pytest.raises(ValueError):
        read_payload(short)
