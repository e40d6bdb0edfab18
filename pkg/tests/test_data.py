import numpy as np
import pytest

from tofu.data import Dataset, DatasetError, iid_partition, make_dataset, one_hot, read_digits_csv
from tofu.fed import batch_gradient
from tofu.models import MlpSpec, accuracy, init_params
from tofu.optim import sgd_step


def test_dataset_is_seeded():
    a = make_dataset("blobs", seed=3, n_samples=100, n_features=4)
    b = make_dataset("blobs", seed=3, n_samples=100, n_features=4)
    assert a.inputs.tobytes() == b.inputs.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert np.array_equal(a.train_idx, b.train_idx)


def test_separated_blobs_are_linearly_solvable():
    data = make_dataset("blobs", seed=0, n_samples=600, n_features=5, n_classes=3,
                        cluster_std=0.3, center_scale=5.0)
    p = init_params(MlpSpec((5, 3), seed=0))
    for _ in range(200):
        p = sgd_step(p, batch_gradient(p, data.x_train, data.y_train, 3), 0.5)
    assert accuracy(p, data.x_test, data.y_test) >= 0.99


def test_moons_shape():
    d = make_dataset("moons", n_samples=101, test_fraction=0.2)
    assert d.inputs.shape == (101, 2) and d.num_classes == 2
    assert len(d.test_idx) == 20 and len(d.train_idx) == 81


def test_csv_reader(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0.0,0.5,1.0,1\n0.2,0.2,0.2,0\n")
    x, y = read_digits_csv(p)
    assert x.shape == (2, 3) and y.tolist() == [1, 0]
    d = make_dataset("digits_csv", csv_path=str(p), test_fraction=0.5)
    assert d.input_dim == 3


def test_csv_short_row_names_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0.0,0.5,1.0,1\n0.2,0.2,0\n")
    with pytest.raises(DatasetError, match=r"d\.csv:2"):
        read_digits_csv(p)


def test_csv_bad_values(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0.0,x,1\n")
    with pytest.raises(DatasetError, match=":1"):
        read_digits_csv(p)
    p.write_text("0.0,1.5,1\n")
    with pytest.raises(DatasetError, match="pixel"):
        read_digits_csv(p)


def test_unknown_kind():
    with pytest.raises(DatasetError):
        make_dataset("mnist")


def test_dataset_rejects_overlap_and_bad_labels():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((3, 2)), [0, 1, 0], 2, [0, 1], [1, 2])
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 2)), [0, 5], 2, [0], [1])


def test_iid_partition_is_disjoint_and_balanced():
    labels = np.repeat(np.arange(3), [10, 7, 5])
    shards = iid_partition(labels, 4, np.random.default_rng(0))
    allidx = np.concatenate(shards)
    assert sorted(allidx.tolist()) == list(range(labels.size))
    sizes = [len(s) for s in shards]
    assert max(sizes) - min(sizes) <= 1
    for c in range(3):
        counts = [np.sum(labels[s] == c) for s in shards]
        assert max(counts) - min(counts) <= 1


def test_one_hot():
    assert np.array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
