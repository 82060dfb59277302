"""Synthetic datasets, Non-IID client partitioning and IDX ingestion."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import Batch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
PARTITION_RETRIES = 100


class PartitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    class_count: int | None = None  # None for regression targets

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ValueError("empty dataset")
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")
        if self.class_count is not None:
            if self.class_count < 1:
                raise ValueError("class_count must be positive")
            if self.targets.min() < 0 or self.targets.max() >= self.class_count:
                raise ValueError("class index out of range")

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.inputs[indices], self.targets[indices], self.class_count)

    def batch(self, indices=None) -> Batch:
        if indices is None:
            return Batch(self.inputs, self.targets)
        return Batch(self.inputs[indices], self.targets[indices])


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: np.ndarray
    p: float

    @property
    def n(self) -> int:
        return len(self.indices)


def generate_classification(seed: int, n_samples: int, input_dim: int,
                            class_count: int, cluster_spread: float = 1.0) -> Dataset:
    """Gaussian clusters around standard-normal class centres.

    Labels are balanced (round-robin, then shuffled) so every class is present
    whenever ``n_samples >= class_count``.
    """
    if min(n_samples, input_dim, class_count) < 1:
        raise ValueError("n_samples, input_dim and class_count must be positive")
    if not cluster_spread >= 0:
        raise ValueError("cluster_spread must be non-negative")
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(class_count, input_dim))
    labels = rng.permutation(np.arange(n_samples) % class_count)
    x = centres[labels] + cluster_spread * rng.normal(size=(n_samples, input_dim))
    return Dataset(x, labels.astype(np.int64), class_count)


def generate_regression(seed: int, n_samples: int, input_dim: int,
                        output_dim: int = 1, noise: float = 0.1) -> Dataset:
    if min(n_samples, input_dim, output_dim) < 1:
        raise ValueError("n_samples, input_dim and output_dim must be positive")
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(output_dim, input_dim))
    b = rng.normal(size=output_dim)
    x = rng.normal(size=(n_samples, input_dim))
    y = x @ W.T + b + noise * rng.normal(size=(n_samples, output_dim))
    return Dataset(x, y, None)


def train_test_split(dataset: Dataset, test_fraction: float,
                     seed: int) -> tuple[Dataset, Dataset | None]:
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    n_test = int(round(test_fraction * len(dataset)))
    if n_test == 0:
        return dataset, None
    if n_test >= len(dataset):
        raise ValueError("test split would leave no training data")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def _shard_sizes(rng, n: int, n_clients: int, size_alpha: float) -> np.ndarray:
    q = rng.dirichlet(np.full(n_clients, size_alpha))
    raw = q * n
    sizes = np.floor(raw).astype(np.int64)
    # largest remainder, ties to the lower client id
    short = n - sizes.sum()
    order = np.lexsort((np.arange(n_clients), -(raw - sizes)))
    sizes[order[:short]] += 1
    return sizes


def partition_noniid(dataset: Dataset, n_clients: int, label_alpha: float,
                     size_alpha: float, seed: int) -> list[ClientShard]:
    """Split ``dataset`` into disjoint shards skewed in both size and labels.

    Shard sizes follow a Dirichlet(size_alpha) draw over clients; each client
    then fills its quota from a Dirichlet(label_alpha) class mixture, falling
    back to whatever classes are left once its preferred ones run dry.
    Regression datasets get the size skew only.
    """
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if not (label_alpha > 0 and size_alpha > 0):
        raise ValueError("Dirichlet concentrations must be positive")
    n = len(dataset)
    if n < n_clients:
        raise PartitionError(f"{n} samples cannot cover {n_clients} clients")
    rng = np.random.default_rng(seed)
    for _ in range(PARTITION_RETRIES):
        sizes = _shard_sizes(rng, n, n_clients, size_alpha)
        if sizes.min() >= 1:
            break
    else:
        raise PartitionError(
            f"no partition with >= 1 sample per client after {PARTITION_RETRIES} draws")

    if dataset.class_count is None:
        perm = rng.permutation(n)
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        chunks = [perm[bounds[k]:bounds[k + 1]] for k in range(n_clients)]
    else:
        chunks = _fill_by_label(rng, dataset.targets, dataset.class_count,
                                sizes, label_alpha)

    return [ClientShard(k, np.sort(c).astype(np.int64), len(c) / n)
            for k, c in enumerate(chunks)]


def _fill_by_label(rng, labels, class_count, sizes, label_alpha):
    pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in range(class_count)]
    left = np.array([len(p) for p in pools], dtype=np.int64)
    mixes = rng.dirichlet(np.full(class_count, label_alpha), size=len(sizes))
    chunks = []
    for k, quota in enumerate(sizes):
        take = np.zeros(class_count, dtype=np.int64)
        need = int(quota)
        while need > 0:
            avail = left - take
            weights = np.where(avail > 0, mixes[k], 0.0)
            if weights.sum() <= 0:
                # preferred classes exhausted (or underflowed to zero mass)
                weights = (avail > 0).astype(np.float64)
            draw = rng.multinomial(need, weights / weights.sum())
            draw = np.minimum(draw, avail)
            take += draw
            need -= int(draw.sum())
        picked = []
        for c in np.flatnonzero(take):
            start = len(pools[c]) - left[c]
            picked.extend(pools[c][start:start + take[c]])
        left -= take
        chunks.append(np.array(picked, dtype=np.int64))
    return chunks


def _read_header(path: Path, magic: int, dims: int) -> tuple[list[int], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or struct.unpack(">I", raw[:4])[0] != magic:
        raise ValueError(f"{path}: not an IDX file (bad magic number)")
    head = 4 + 4 * dims
    if len(raw) < head:
        raise ValueError(f"{path}: truncated IDX header")
    shape = list(struct.unpack(f">{dims}I", raw[4:head]))
    body = raw[head:]
    if len(body) < int(np.prod(shape)):
        raise ValueError(f"{path}: truncated IDX payload")
    return shape, body


def load_idx(images_path, labels_path) -> Dataset:
    """Read an MNIST-style IDX image/label pair; pixels scaled to [0, 1]."""
    (count, rows, cols), body = _read_header(images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), lbody = _read_header(labels_path, IDX_LABELS_MAGIC, 1)
    if count != n_labels:
        raise ValueError(f"{count} images but {n_labels} labels")
    if count == 0:
        raise ValueError("IDX files hold no samples")
    pixels = np.frombuffer(body, dtype=np.uint8, count=count * rows * cols)
    labels = np.frombuffer(lbody, dtype=np.uint8, count=count).astype(np.int64)
    x = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(x, labels, int(labels.max()) + 1)
