import numpy as np
import pytest

from ddcnn.data import (
    CIFAR_PER_FILE,
    CIFAR_RECORD,
    CIFAR_TEST_FILE,
    CIFAR_TRAIN_FILES,
    Dataset,
    cifar_records_to_bytes,
    dump_flat,
    hu_normalize,
    load_cifar10,
    load_flat,
    parse_cifar_batch,
    split,
    synth2d,
    synth3d,
)
from ddcnn.exceptions import FormatError, ParameterError


def fake_records(n, seed):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (n, 32, 32, 3), dtype=np.uint8), rng.integers(0, 10, n)


def test_record_layout_is_planar_rgb():
    X, y = fake_records(3, 0)
    raw = cifar_records_to_bytes(X, y)
    assert len(raw) == 3 * CIFAR_RECORD == 3 * 3073
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(3, 3073)
    assert rec[1, 0] == y[1]
    # byte 1 + 1024 + 32*r + c of a record is the green value at (r, c)
    assert rec[2, 1 + 1024 + 32 * 5 + 7] == X[2, 5, 7, 1]
    Xb, yb = parse_cifar_batch(raw)
    np.testing.assert_array_equal(Xb, X)
    np.testing.assert_array_equal(yb, y)


def test_parse_errors():
    X, y = fake_records(2, 1)
    raw = cifar_records_to_bytes(X, y)
    with pytest.raises(FormatError):
        parse_cifar_batch(raw[:-1])
    with pytest.raises(FormatError):
        parse_cifar_batch(raw, expect_records=3)
    bad = bytearray(raw)
    bad[0] = 10
    with pytest.raises(FormatError):
        parse_cifar_batch(bytes(bad))


def test_train_file_size_constant():
    assert CIFAR_PER_FILE * CIFAR_RECORD == 30_730_000
    assert len(CIFAR_TRAIN_FILES) == 5


@pytest.fixture(scope="module")
def fake_cifar_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cifar")
    for i, name in enumerate((*CIFAR_TRAIN_FILES, CIFAR_TEST_FILE)):
        X, y = fake_records(CIFAR_PER_FILE, i)
        if i == 0:
            X[0, 0, 0] = [255, 0, 128]
        (root / name).write_bytes(cifar_records_to_bytes(X, y))
    return root


def test_load_fake_directory(fake_cifar_dir):
    train, test = load_cifar10(fake_cifar_dir)
    assert train.X.shape == (50_000, 32, 32, 3) and test.X.shape == (10_000, 32, 32, 3)
    assert train.X[0, 0, 0, 0] == 1.0 and train.X[0, 0, 0, 1] == 0.0
    again, _ = load_cifar10(fake_cifar_dir)
    assert np.array_equal(again.X, train.X)


def test_missing_file(tmp_path):
    with pytest.raises(FormatError, match="missing"):
        load_cifar10(tmp_path)


def test_synth2d_noise_free_is_1nn_separable():
    train, test = split(synth2d(200, 5, (16, 16), noise=0.0, seed=0), 0.5, 0)
    A, B = train.X.reshape(len(train), -1), test.X.reshape(len(test), -1)
    for Q, yq in ((A, train.y), (B, test.y)):
        d = ((Q[:, None] - A[None]) ** 2).sum(-1)
        # nearest *other* training sample for the training set itself
        if Q is A:
            np.fill_diagonal(d, np.inf)
        assert (train.y[d.argmin(1)] == yq).mean() == 1.0


def test_synth2d_deterministic_and_balanced():
    a, b = synth2d(103, 4, seed=3), synth2d(103, 4, seed=3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert np.bincount(a.y).tolist() == [26, 26, 26, 25]
    with pytest.raises(ParameterError):
        synth2d(10, 11)


def test_synth3d_threshold_oracle():
    ds = synth3d(40, (32, 32, 16), seed=0)
    means = ds.X.mean(axis=(1, 2, 3, 4))
    best = max(((means > t) == ds.y).mean() for t in np.unique(means))
    assert best > 0.95
    assert np.bincount(ds.y).tolist() == [20, 20]
    assert np.array_equal(synth3d(4, (16, 16, 16), seed=1).X, synth3d(4, (16, 16, 16), seed=1).X)


def test_hu_normalize():
    np.testing.assert_allclose(hu_normalize(np.array([-1000, 400, 2000, -300, -1024])), [0, 1, 1, 0.5, 0])


@pytest.mark.parametrize("n,frac,sizes", [(3670, 0.8, (2936, 734)), (200, 0.7, (140, 60))])
def test_split_counts(n, frac, sizes):
    ds = Dataset(np.arange(n, dtype=float)[:, None, None], np.zeros(n, int), 2)
    a, b = split(ds, frac, 0)
    assert (len(a), len(b)) == sizes
    assert sorted(np.concatenate([a.X.ravel(), b.X.ravel()]).tolist()) == list(range(n))


def test_split_empty_side():
    with pytest.raises(ParameterError):
        split(Dataset(np.zeros((3, 1, 1)), np.zeros(3, int), 2), 0.9, 0)


def test_flat_round_trip(tmp_path):
    ds = synth2d(12, 3, (8, 10), seed=4, channels=2)
    path = tmp_path / "d.bin"
    dump_flat(ds, path)
    back = load_flat(path)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y) and back.n_classes == 3
    raw = path.read_bytes()
    assert raw[:4] == b"DDSY"
    assert len(raw) == 4 + 4 * 6 + 12 * (8 * 10 * 2 * 4 + 1)
    path.write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        load_flat(path)
