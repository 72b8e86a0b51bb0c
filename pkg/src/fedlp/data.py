"""Dataset sources and client partitioners.

Sources: a seeded Gaussian-cluster generator for desk-scale runs and a loader
for the big-endian IDX image/label format. Partitioners: iid, label-sorted
shards with a uniform mixing fraction, and per-class Dirichlet proportions.
All partitioners are pure functions of (dataset, parameters, seed).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, IdxCountMismatchError, IdxFormatError, IdxTruncatedError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature matrix plus integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ContractError(
                f"features ({self.features.shape[0]}) and labels ({self.labels.shape[0]}) differ in length"
            )
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise ContractError("labels must be < num_classes")
        if self.labels.size and int(self.labels.min()) < 0:
            raise ContractError("labels must be nonnegative")

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass
class PartitionSpec:
    """Which partitioner to run and its scheme-specific parameters."""

    scheme: str = "iid"
    num_clients: int = 0
    shard_size: int | None = None
    shards_per_client: int | None = None
    uniform_fraction: float | None = None
    alpha: float | None = None
    seed: int | None = None


@dataclass
class Partition:
    """Per-client index lists into the parent dataset."""

    assignments: list[np.ndarray]

    def __post_init__(self) -> None:
        self.assignments = [np.asarray(a, dtype=np.int64) for a in self.assignments]
        merged = np.concatenate(self.assignments) if self.assignments else np.empty(0, dtype=np.int64)
        if merged.size != np.unique(merged).size:
            raise ContractError("partition assignments overlap or repeat indices")

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def total_assigned(self) -> int:
        return int(sum(a.size for a in self.assignments))


def generate_synthetic(
    num_classes: int,
    samples_per_class: int,
    feature_dim: int,
    class_separation: float,
    seed: int,
) -> Dataset:
    """Gaussian class clusters with unit covariance.

    Class means are random directions rescaled so the minimum pairwise mean
    distance equals class_separation; deterministic for a fixed seed.
    """
    if num_classes <= 0 or samples_per_class <= 0 or feature_dim <= 0:
        raise ContractError("num_classes, samples_per_class and feature_dim must be positive")
    if class_separation <= 0:
        raise ContractError("class_separation must be positive")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    means = rng.standard_normal((num_classes, feature_dim))
    if num_classes > 1:
        diffs = means[:, None, :] - means[None, :, :]
        dists = np.sqrt((diffs**2).sum(axis=2))
        min_dist = dists[np.triu_indices(num_classes, k=1)].min()
        if min_dist == 0.0:
            raise ContractError("degenerate class means drawn; use a different seed")
        means *= class_separation / min_dist
    n = num_classes * samples_per_class
    features = np.empty((n, feature_dim))
    labels = np.empty(n, dtype=np.int64)
    for c in range(num_classes):
        sl = slice(c * samples_per_class, (c + 1) * samples_per_class)
        features[sl] = means[c] + rng.standard_normal((samples_per_class, feature_dim))
        labels[sl] = c
    return Dataset(features, labels, num_classes)


def _read_exact(data: bytes, offset: int, count: int, path: str) -> bytes:
    if offset + count > len(data):
        raise IdxTruncatedError(f"{path}: file ends after {len(data)} bytes, needed {offset + count}")
    return data[offset : offset + count]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair (big-endian), scaling pixels to [0,1]."""
    with open(images_path, "rb") as f:
        img_data = f.read()
    with open(labels_path, "rb") as f:
        lbl_data = f.read()

    (img_magic,) = struct.unpack(">I", _read_exact(img_data, 0, 4, images_path))
    if img_magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic 0x{img_magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    n_img, rows, cols = struct.unpack(">III", _read_exact(img_data, 4, 12, images_path))
    pixels = np.frombuffer(
        _read_exact(img_data, 16, n_img * rows * cols, images_path), dtype=np.uint8
    )

    (lbl_magic,) = struct.unpack(">I", _read_exact(lbl_data, 0, 4, labels_path))
    if lbl_magic != IDX_LABEL_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic 0x{lbl_magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
    (n_lbl,) = struct.unpack(">I", _read_exact(lbl_data, 4, 4, labels_path))
    raw_labels = np.frombuffer(_read_exact(lbl_data, 8, n_lbl, labels_path), dtype=np.uint8)

    if n_img != n_lbl:
        raise IdxCountMismatchError(
            f"{images_path} has {n_img} images but {labels_path} has {n_lbl} labels"
        )
    features = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labels = raw_labels.astype(np.int64)
    num_classes = int(labels.max()) + 1 if n_img else 0
    return Dataset(features, labels, num_classes)


def _partition_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def partition_iid(dataset: Dataset, num_clients: int, seed: int) -> Partition:
    """Random permutation split into near-equal parts (sizes differ by <= 1)."""
    if num_clients <= 0:
        raise ContractError("num_clients must be >= 1")
    if num_clients > len(dataset):
        raise ContractError(f"cannot split {len(dataset)} samples across {num_clients} clients")
    rng = _partition_rng(seed)
    perm = rng.permutation(len(dataset))
    return Partition(list(np.array_split(perm, num_clients)))


def _build_shards(
    dataset: Dataset,
    total_shards: int,
    shard_size: int,
    uniform_fraction: float,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Label-sorted shards, each mixed with a uniformly drawn fraction.

    Each shard takes round(uniform_fraction * shard_size) samples drawn
    uniformly from the whole dataset (without replacement) and the rest
    contiguously from the label-sorted remainder, so the non-uniform portion
    is class-concentrated. Leftover samples stay unassigned.
    """
    n = len(dataset)
    u_per = int(uniform_fraction * shard_size + 0.5)
    contig_per = shard_size - u_per
    uniform_total = total_shards * u_per
    pool = rng.choice(n, size=uniform_total, replace=False) if uniform_total else np.empty(0, dtype=np.int64)
    in_pool = np.zeros(n, dtype=bool)
    in_pool[pool] = True
    sorted_idx = np.argsort(dataset.labels, kind="stable")
    sorted_rest = sorted_idx[~in_pool[sorted_idx]]
    shards = []
    for s in range(total_shards):
        contig = sorted_rest[s * contig_per : (s + 1) * contig_per]
        uni = pool[s * u_per : (s + 1) * u_per]
        shards.append(np.concatenate([contig, uni]).astype(np.int64))
    return shards


def partition_shards(
    dataset: Dataset,
    num_clients: int,
    shard_size: int,
    shards_per_client: int,
    uniform_fraction: float,
    seed: int,
) -> Partition:
    """Deal label-concentrated shards to clients, shards_per_client each."""
    if num_clients <= 0 or shard_size <= 0 or shards_per_client <= 0:
        raise ContractError("num_clients, shard_size and shards_per_client must be positive")
    if not 0.0 <= uniform_fraction <= 1.0:
        raise ContractError("uniform_fraction must lie in [0, 1]")
    total_shards = num_clients * shards_per_client
    if total_shards * shard_size > len(dataset):
        raise ContractError(
            f"need {total_shards * shard_size} samples for {total_shards} shards "
            f"of {shard_size}, dataset has {len(dataset)}"
        )
    rng = _partition_rng(seed)
    shards = _build_shards(dataset, total_shards, shard_size, uniform_fraction, rng)
    deal = rng.permutation(total_shards)
    assignments = []
    for k in range(num_clients):
        mine = deal[k * shards_per_client : (k + 1) * shards_per_client]
        assignments.append(np.concatenate([shards[s] for s in mine]))
    return Partition(assignments)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to total, closest to proportions * total."""
    raw = proportions * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def partition_dirichlet(dataset: Dataset, num_clients: int, alpha: float, seed: int) -> Partition:
    """Split each class across clients by Dirichlet(alpha) proportions.

    Largest-remainder rounding keeps per-class totals exact, so the union of
    all client shards covers the dataset; client volumes generally differ.
    """
    if num_clients <= 0:
        raise ContractError("num_clients must be >= 1")
    if alpha <= 0:
        raise ContractError("alpha must be positive")
    rng = _partition_rng(seed)
    per_client: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in range(dataset.num_classes):
        idx_c = np.flatnonzero(dataset.labels == c)
        rng.shuffle(idx_c)
        props = rng.dirichlet(np.full(num_clients, float(alpha)))
        counts = _largest_remainder(props, idx_c.size)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for k in range(num_clients):
            per_client[k].append(idx_c[bounds[k] : bounds[k + 1]])
    assignments = [
        np.concatenate(parts) if parts else np.empty(0, dtype=np.int64) for parts in per_client
    ]
    return Partition(assignments)


def split_train_test(dataset: Dataset, test_fraction: float, rng: np.random.Generator):
    """Hold out a uniform test split; returns (train, test) datasets."""
    if not 0.0 <= test_fraction < 1.0:
        raise ContractError("test_fraction must lie in [0, 1)")
    n = len(dataset)
    n_test = int(round(test_fraction * n))
    perm = rng.permutation(n)
    return dataset.subset(perm[n_test:]), dataset.subset(perm[:n_test])


def run_partitioner(dataset: Dataset, spec: PartitionSpec, seed: int) -> Partition:
    """Dispatch on spec.scheme; seed overrides spec.seed when the latter is unset."""
    effective_seed = spec.seed if spec.seed is not None else seed
    if spec.scheme == "iid":
        return partition_iid(dataset, spec.num_clients, effective_seed)
    if spec.scheme == "mixed_shard":
        return partition_shards(
            dataset,
            spec.num_clients,
            int(spec.shard_size),
            int(spec.shards_per_client),
            float(spec.uniform_fraction),
            effective_seed,
        )
    if spec.scheme == "dirichlet":
        return partition_dirichlet(dataset, spec.num_clients, float(spec.alpha), effective_seed)
    raise ContractError(f"unknown partition scheme {spec.scheme!r}")
