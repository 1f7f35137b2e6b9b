import gzip
import struct

import numpy as np
import pytest

from hewlocal.data import (
    Dataset,
    PartitionSpec,
    assign_horizons,
    fetch_dataset,
    load_cache,
    load_covertype,
    load_mnist,
    make_synthetic_classification,
    partition_clients,
    preprocess,
    save_cache,
)
from hewlocal.errors import ConfigurationError, ParseError


def write_idx(path, magic, arr):
    head = struct.pack(">I", magic) + struct.pack(">" + "I" * arr.ndim, *arr.shape)
    with gzip.open(path, "wb") as fh:
        fh.write(head + arr.astype(np.uint8).tobytes())


def test_mnist_roundtrip_and_errors(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(7, 28, 28))
    labs = rng.integers(0, 10, size=7)
    write_idx(tmp_path / "i.gz", 0x803, imgs)
    write_idx(tmp_path / "l.gz", 0x801, labs)
    ds = load_mnist(tmp_path / "i.gz", tmp_path / "l.gz")
    assert ds.features.shape == (7, 784) and ds.n_classes == 10
    assert ds.features.max() <= 1.0
    np.testing.assert_array_equal(ds.labels, labs)
    with pytest.raises(ParseError, match="magic"):
        load_mnist(tmp_path / "l.gz", tmp_path / "l.gz")
    raw = gzip.open(tmp_path / "i.gz").read()
    (tmp_path / "t").write_bytes(raw[:-10])
    with pytest.raises(ParseError, match=f"expected {len(raw)} bytes .* found {len(raw) - 10}"):
        load_mnist(tmp_path / "t", tmp_path / "l.gz")


def test_covertype(tmp_path):
    rng = np.random.default_rng(1)
    rows = np.column_stack([rng.integers(0, 100, size=(12, 54)), rng.integers(1, 8, size=12)])
    p = tmp_path / "covtype.data.gz"
    with gzip.open(p, "wt") as fh:
        for r in rows:
            fh.write(",".join(map(str, r)) + "\n")
    ds = load_covertype(p)
    assert ds.features.shape == (12, 54) and ds.n_classes == 7
    np.testing.assert_array_equal(ds.labels, rows[:, -1] - 1)
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3\n")
    with pytest.raises(ParseError, match="55 columns"):
        load_covertype(bad)


def test_preprocess_contract():
    ds = make_synthetic_classification(10_000, 6, 3, seed=2)
    ds.features[:, 2] = 5.0
    tr, te, sc = preprocess(ds, seed=0)
    assert (tr.N, te.N) == (8000, 2000)
    assert np.all(np.abs(tr.features[:, :-1].mean(axis=0)) <= 1e-10)
    assert np.all(tr.features[:, -1] == 1) and np.all(te.features[:, -1] == 1)
    assert sc.std[2] == 1.0
    with pytest.raises(ConfigurationError):
        sc.apply(tr)


def test_split_independent_of_partition_seed():
    ds = make_synthetic_classification(200, 3, 2, seed=3)
    a, _, _ = preprocess(ds, 5)
    b, _, _ = preprocess(ds, 5)
    np.testing.assert_array_equal(a.features, b.features)
    p1 = partition_clients(a.labels, PartitionSpec("even", 4, seed=1))
    p2 = partition_clients(a.labels, PartitionSpec("even", 4, seed=2))
    assert not all(np.array_equal(x, y) for x, y in zip(p1, p2))


def test_even_partition():
    parts = partition_clients(np.zeros(100, int), PartitionSpec("even", 20, 0))
    assert [p.size for p in parts] == [5] * 20
    parts = partition_clients(np.zeros(103, int), PartitionSpec("even", 20, 0))
    assert max(p.size for p in parts) - min(p.size for p in parts) <= 1
    with pytest.raises(ConfigurationError):
        partition_clients(np.zeros(3, int), PartitionSpec("even", 4, 0))


def test_dirichlet_cover_nonempty_and_skew():
    labels = np.repeat(np.arange(5), 40)
    for seed in range(20):
        parts = partition_clients(labels, PartitionSpec("dirichlet", 20, seed, alpha=0.2))
        assert all(p.size >= 1 for p in parts)
        allidx = np.sort(np.concatenate(parts))
        np.testing.assert_array_equal(allidx, np.arange(200))
    skewed = []
    for seed in (42, 43, 44):
        parts = partition_clients(labels, PartitionSpec("dirichlet", 20, seed, alpha=0.2))
        top = max(np.bincount(labels[p], minlength=5).max() / p.size for p in parts)
        skewed.append(top)
    print("max single-class share per seed", skewed)
    assert max(skewed) >= 0.7


def test_dirichlet_large_alpha_balances():
    labels = np.repeat(np.arange(4), 500)

    def imbalance(spec):
        parts = partition_clients(labels, spec)
        share = np.array([np.bincount(labels[p], minlength=4) / p.size for p in parts])
        return float(np.mean((share - 0.25) ** 2))

    big = np.mean([imbalance(PartitionSpec("dirichlet", 10, s, alpha=1e4)) for s in range(5)])
    even = np.mean([imbalance(PartitionSpec("even", 10, s)) for s in range(5)])
    small = np.mean([imbalance(PartitionSpec("dirichlet", 10, s, alpha=0.2)) for s in range(5)])
    assert big < 3 * even and small > 10 * big


def test_horizons():
    assert assign_horizons(20, "equal", H=4).H.tolist() == [4] * 20
    a = assign_horizons(20, "random", 7)
    np.testing.assert_array_equal(a.H, assign_horizons(20, "random", 7).H)
    big = assign_horizons(10_000, "random", 1).H
    for v in (1, 2, 4, 8):
        assert abs(np.mean(big == v) - 0.25) <= 0.02
    with pytest.raises(ConfigurationError):
        assign_horizons(3, "random", values=())


def test_cache_roundtrip(tmp_path):
    ds = make_synthetic_classification(50, 3, 2, seed=4)
    tr, te, _ = preprocess(ds, 0)
    cfg = {"dataset": "synthetic", "seed": 0}
    p = save_cache(tmp_path / "c.npz", tr, te, cfg)
    tr2, te2 = load_cache(p, cfg)
    np.testing.assert_array_equal(tr2.features, tr.features)
    assert tr2.standardized
    with pytest.raises(ParseError):
        load_cache(p, {"dataset": "other"})


def test_fetch_local(tmp_path):
    src = tmp_path / "src.gz"
    src.write_bytes(b"abc")
    sums = fetch_dataset("covertype", tmp_path / "out", local={"covtype.data.gz": src})
    assert (tmp_path / "out" / "checksums.json").exists()
    with pytest.raises(ParseError):
        fetch_dataset("covertype", tmp_path / "o2", local={"covtype.data.gz": src}, expected={"covtype.data.gz": "0" * 64})
    assert len(sums["covtype.data.gz"]) == 64


def test_dataset_label_check():
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((2, 1)), [0, 3], "x", 3)
