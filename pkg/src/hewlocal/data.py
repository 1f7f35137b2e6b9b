"""Dataset ingestion, preprocessing, client partitioning and horizon assignment."""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import shutil
import struct
import urllib.request
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ParseError

log = logging.getLogger(__name__)

CACHE_VERSION = 1
TRAIN_FRACTION = 0.8

MIRRORS = {
    "covertype": {
        "covtype.data.gz": "https://archive.ics.uci.edu/ml/machine-learning-databases/covtype/covtype.data.gz",
    },
    "mnist": {
        "train-images-idx3-ubyte.gz": "https://ossci-datasets.s3.amazonaws.com/mnist/train-images-idx3-ubyte.gz",
        "train-labels-idx1-ubyte.gz": "https://ossci-datasets.s3.amazonaws.com/mnist/train-labels-idx1-ubyte.gz",
    },
}


def seed_stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named purpose; distinct names never share a stream."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("features must be (N, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigurationError(f"labels must lie in [0, {self.n_classes})")

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def standardized(self) -> bool:
        return bool(self.meta.get("standardized", False))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.name, self.n_classes, dict(self.meta))


# ---------------------------------------------------------------------------
# readers


def _open_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_covertype(path) -> Dataset:
    """UCI Covertype CSV (optionally gzipped): 54 features then a label in 1..7."""
    raw = _open_bytes(path)
    try:
        table = np.loadtxt(raw.decode("ascii").splitlines(), delimiter=",", dtype=float, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if table.shape[1] != 55:
        raise ParseError(f"{path}: expected 55 columns, found {table.shape[1]}")
    labels = table[:, -1].astype(np.int64) - 1
    if labels.min() < 0 or labels.max() > 6:
        raise ParseError(f"{path}: labels outside 1..7")
    return Dataset(table[:, :-1], labels, "covertype", 7, {"source": str(path)})


def _parse_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise ParseError(f"{what}: expected at least 4 bytes, found {len(raw)}")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise ParseError(f"{what}: magic 0x{got:08x} at offset 0, expected 0x{magic:08x}")
    if len(raw) < header:
        raise ParseError(f"{what}: expected {header} header bytes, found {len(raw)}")
    shape = struct.unpack(">" + "I" * ndim, raw[4:header])
    expected = header + int(np.prod(shape))
    if len(raw) != expected:
        raise ParseError(f"{what}: expected {expected} bytes for shape {shape}, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)


def load_mnist(images_path, labels_path) -> Dataset:
    """MNIST IDX pair; pixels flattened to 784 features and scaled to [0, 1]."""
    images = _parse_idx(_open_bytes(images_path), 0x00000803, 3, str(images_path))
    labels = _parse_idx(_open_bytes(labels_path), 0x00000801, 1, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(X, labels.astype(np.int64), "mnist", 10, {"source": str(images_path), "pixel_scale": 255})


def make_synthetic_classification(N: int, d: int, n_classes: int, seed: int, *, separation: float = 2.0) -> Dataset:
    """Gaussian class clusters; a small stand-in for the real datasets."""
    rng = seed_stream(seed, "synthetic")
    centers = separation * rng.normal(size=(n_classes, d)) / np.sqrt(d)
    y = rng.integers(0, n_classes, size=N)
    X = centers[y] + rng.normal(size=(N, d))
    return Dataset(X, y, "synthetic", n_classes, {"seed": seed})


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Scaler":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, ds: Dataset) -> Dataset:
        """Standardize and append a bias column; refuses already-processed data."""
        if ds.standardized:
            raise ConfigurationError("dataset is already standardized; the scaler applies once")
        X = (ds.features - self.mean) / self.std
        X = np.hstack([X, np.ones((X.shape[0], 1))])
        meta = dict(ds.meta, standardized=True, bias=True)
        return Dataset(X, ds.labels, ds.name, ds.n_classes, meta)


def train_test_split(N: int, seed: int, fraction: float = TRAIN_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    perm = seed_stream(seed, "split").permutation(N)
    cut = int(round(fraction * N))
    return perm[:cut], perm[cut:]


def preprocess(ds: Dataset, seed: int) -> tuple[Dataset, Dataset, Scaler]:
    """Seeded 80/20 split, train-only standardization, then a bias feature."""
    if ds.N < 10:
        raise ConfigurationError("need at least 10 examples")
    tr, te = train_test_split(ds.N, seed)
    train, test = ds.subset(tr), ds.subset(te)
    scaler = Scaler.fit(train.features)
    train, test = scaler.apply(train), scaler.apply(test)
    if not (np.all(np.isfinite(train.features)) and np.all(np.isfinite(test.features))):
        raise ConfigurationError("non-finite features after standardization")
    return train, test, scaler


# ---------------------------------------------------------------------------
# partitions and horizons


@dataclass(frozen=True)
class PartitionSpec:
    mode: str = "even"  # "even" or "dirichlet"
    n_clients: int = 20
    seed: int = 0
    alpha: float = 0.2

    def __post_init__(self):
        if self.mode not in ("even", "dirichlet"):
            raise ConfigurationError(f"unknown partition mode {self.mode!r}")
        if self.n_clients < 1:
            raise ConfigurationError("n_clients must be positive")
        if self.mode == "dirichlet" and not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")


def partition_clients(labels: np.ndarray, spec: PartitionSpec) -> list[np.ndarray]:
    """Disjoint cover of ``range(len(labels))`` by ``spec.n_clients`` nonempty index sets."""
    labels = np.asarray(labels)
    N, n = labels.size, spec.n_clients
    if n > N:
        raise ConfigurationError(f"{n} clients but only {N} examples")
    rng = seed_stream(spec.seed, "partition")
    if spec.mode == "even":
        parts = [np.sort(p) for p in np.array_split(rng.permutation(N), n)]
    else:
        buckets: list[list[np.ndarray]] = [[] for _ in range(n)]
        for c in np.unique(labels):
            idx = rng.permutation(np.flatnonzero(labels == c))
            p = rng.dirichlet(np.full(n, spec.alpha))
            counts = rng.multinomial(idx.size, p)
            for i, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
                buckets[i].append(chunk)
        parts = [np.sort(np.concatenate(b)) if b else np.empty(0, dtype=np.int64) for b in buckets]
        parts = _repair_empty(parts)
    cover = np.sort(np.concatenate(parts))
    assert cover.size == N and np.array_equal(cover, np.arange(N))
    return [p.astype(np.int64) for p in parts]


def _repair_empty(parts: list[np.ndarray]) -> list[np.ndarray]:
    parts = list(parts)
    for i in range(len(parts)):
        if parts[i].size == 0:
            donor = int(np.argmax([p.size for p in parts]))
            parts[i] = parts[donor][-1:]
            parts[donor] = parts[donor][:-1]
            log.info("partition repair: moved one example from client %d to client %d", donor, i)
    return parts


@dataclass(frozen=True)
class HorizonAssignment:
    H: np.ndarray
    mode: str
    values: tuple = ()

    def groups(self) -> dict[int, np.ndarray]:
        return {int(h): np.flatnonzero(self.H == h) for h in np.unique(self.H)}


def assign_horizons(n_clients: int, mode: str = "equal", seed: int = 0, *, H: int = 4, values: Sequence[int] = (1, 2, 4, 8)) -> HorizonAssignment:
    if mode == "equal":
        if H < 1:
            raise ConfigurationError("H must be at least 1")
        return HorizonAssignment(np.full(n_clients, int(H)), "equal", (int(H),))
    if mode == "random":
        vals = np.array(sorted(set(int(v) for v in values)))
        if vals.size == 0 or vals.min() < 1:
            raise ConfigurationError("horizon values must be nonempty and positive")
        draw = seed_stream(seed, "horizons").choice(vals, size=n_clients)
        return HorizonAssignment(draw, "random", tuple(vals.tolist()))
    raise ConfigurationError(f"unknown horizon mode {mode!r}")


# ---------------------------------------------------------------------------
# cache and fetching


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_cache(path, train: Dataset, test: Dataset, config: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh,
            version=np.array(CACHE_VERSION),
            config_hash=np.array(config_hash(config)),
            name=np.array(train.name),
            n_classes=np.array(train.n_classes),
            X_train=train.features, y_train=train.labels,
            X_test=test.features, y_test=test.labels,
        )
    return path


def load_cache(path, config: dict | None = None) -> tuple[Dataset, Dataset]:
    """Read a cached split; a version or config-hash mismatch raises ``ParseError``."""
    with np.load(path) as z:
        if int(z["version"]) != CACHE_VERSION:
            raise ParseError(f"{path}: cache version {int(z['version'])}, expected {CACHE_VERSION}")
        if config is not None and str(z["config_hash"]) != config_hash(config):
            raise ParseError(f"{path}: cache built for a different configuration")
        name, C = str(z["name"]), int(z["n_classes"])
        meta = {"standardized": True, "bias": True}
        return (Dataset(z["X_train"], z["y_train"], name, C, dict(meta)),
                Dataset(z["X_test"], z["y_test"], name, C, dict(meta)))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_dataset(name: str, out_dir, *, local: dict | None = None, expected: dict | None = None) -> dict:
    """Place the raw files for ``name`` in ``out_dir`` and record their sha256.

    Files come from ``local`` (filename -> path) when given, otherwise from
    the mirror URLs. Digests listed in ``expected`` must match; the digests
    actually observed are written to ``checksums.json``.
    """
    if name not in MIRRORS:
        raise ConfigurationError(f"unknown dataset {name!r}; choose from {sorted(MIRRORS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    local = local or {}
    expected = expected or {}
    sums = {}
    for fname, url in MIRRORS[name].items():
        dest = out / fname
        if fname in local:
            shutil.copyfile(local[fname], dest)
        elif not dest.exists():
            log.info("downloading %s", url)
            with urllib.request.urlopen(url, timeout=60) as resp, open(dest, "wb") as fh:
                shutil.copyfileobj(resp, fh)
        digest = sha256_file(dest)
        if fname in expected and expected[fname] != digest:
            raise ParseError(f"{fname}: sha256 {digest} does not match expected {expected[fname]}")
        sums[fname] = digest
    (out / "checksums.json").write_text(json.dumps(sums, indent=2, sort_keys=True) + "\n")
    return sums


def load_raw(name: str, data_dir) -> Dataset:
    d = Path(data_dir)
    if name == "covertype":
        for cand in ("covtype.data.gz", "covtype.data", "covtype.csv"):
            if (d / cand).exists():
                return load_covertype(d / cand)
        raise FileNotFoundError(f"no Covertype file in {d}")
    if name == "mnist":
        def find(stem):
            for suffix in (".gz", ""):
                if (d / (stem + suffix)).exists():
                    return d / (stem + suffix)
            raise FileNotFoundError(f"{stem} not found in {d}")
        return load_mnist(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"))
    raise ConfigurationError(f"unknown dataset {name!r}")
