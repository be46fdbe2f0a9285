"""Synthetic desk-scale datasets and IID client partitioning.

Each class is a structured template (a distinct blob pattern plus a shared
background) with per-sample Gaussian noise, so a small MLP separates the
classes quickly. Pixel values always live in [0, 255].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"HJLDATA1"


@dataclass
class LabeledDataset:
    name: str
    samples: np.ndarray  # (N, channels, H, W) float64 in [0, 255]
    labels: np.ndarray   # (N,) int64
    num_classes: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.shape[0] != self.labels.shape[0]:
            raise ValueError("sample/label count mismatch")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")
        if len(self.labels) and (self.samples.min() < 0.0 or self.samples.max() > 255.0):
            raise ValueError("pixel values outside [0, 255]")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def sample_shape(self):
        return self.samples.shape[1:]

    @property
    def input_dim(self):
        return int(np.prod(self.sample_shape))

    def flat(self) -> np.ndarray:
        """Row-major flattened pixel matrix (N, input_dim)."""
        return self.samples.reshape(len(self), -1)

    def subset(self, indices, name=None) -> "LabeledDataset":
        indices = np.asarray(indices)
        return LabeledDataset(name or self.name, self.samples[indices],
                              self.labels[indices], self.num_classes)


@dataclass
class ClientPartition:
    n: int
    assignment: list  # per client, index array into a dataset

    def __post_init__(self):
        sizes = {len(a) for a in self.assignment}
        if len(sizes) > 1:
            raise ValueError("client shares must be equal-sized")
        flat = np.concatenate([np.asarray(a) for a in self.assignment]) if self.assignment else np.array([])
        if len(flat) != len(set(flat.tolist())):
            raise ValueError("client shares must be disjoint")


def synthesize_task(num_classes: int, samples_per_class: int, shape=(3, 16, 16),
                    separation: float = 1.0, seed: int = 0,
                    name: str = "synthetic", noise_sigma: float = 18.0,
                    background_sigma: float | None = None) -> LabeledDataset:
    """Deterministic per-class template + noise dataset.

    ``separation`` scales the class-specific template offsets; at 0 every
    class shares one template and a trained model can only guess.
    ``noise_sigma`` is the per-sample pixel noise scale.

    When ``background_sigma`` is set, the highest class drops its template
    offset and instead scatters widely around the shared base pattern. Such
    a catch-all class claims the weird parts of pixel space, so a model
    trained on the task keeps reasserting that region every round; poisoned
    labels planted there get washed out by honest training.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = np.random.default_rng(seed)
    base = rng.uniform(60.0, 195.0, size=shape)
    offsets = rng.normal(0.0, 70.0, size=(num_classes, *shape))
    samples = np.empty((num_classes * samples_per_class, *shape))
    labels = np.empty(num_classes * samples_per_class, dtype=np.int64)
    for c in range(num_classes):
        lo = c * samples_per_class
        labels[lo:lo + samples_per_class] = c
        if background_sigma is not None and c == num_classes - 1:
            samples[lo:lo + samples_per_class] = base + rng.normal(
                0.0, background_sigma, size=(samples_per_class, *shape))
            continue
        template = base + separation * offsets[c]
        noise = rng.normal(0.0, noise_sigma, size=(samples_per_class, *shape))
        samples[lo:lo + samples_per_class] = template + noise
    np.clip(samples, 0.0, 255.0, out=samples)
    return LabeledDataset(name, samples, labels, num_classes)


def replicate_channels(gray: LabeledDataset) -> LabeledDataset:
    """Expand a single-channel dataset to three identical channels."""
    if gray.sample_shape[0] != 1:
        raise ValueError(f"expected single-channel samples, got {gray.sample_shape}")
    tripled = np.repeat(gray.samples, 3, axis=1)
    return LabeledDataset(gray.name, tripled, gray.labels, gray.num_classes)


def partition_iid(dataset: LabeledDataset, n: int, seed: int) -> ClientPartition:
    """Shuffle by seed and split into n equal shares; remainder dropped."""
    if n <= 0:
        raise ValueError("client count must be positive")
    if len(dataset) < n:
        raise ValueError(f"dataset size {len(dataset)} < {n} clients")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    share = len(dataset) // n
    assignment = [order[i * share:(i + 1) * share] for i in range(n)]
    return ClientPartition(n, assignment)


def train_test_split(dataset: LabeledDataset, test_fraction: float, seed: int):
    """Label-stratified disjoint split, deterministic per seed."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < 2:
            raise ValueError(f"class {c} has fewer than 2 samples")
        idx = rng.permutation(idx)
        n_test = max(1, round(len(idx) * test_fraction))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    # global shuffle so class blocks do not survive into batches
    train_idx = train_idx[rng.permutation(len(train_idx))]
    test_idx = test_idx[rng.permutation(len(test_idx))]
    return (dataset.subset(train_idx, f"{dataset.name}-train"),
            dataset.subset(test_idx, f"{dataset.name}-test"))


def check_hijack_class_budget(hijack_classes: int, original_classes: int) -> None:
    """The hijacking task must leave at least one original class reserved."""
    if hijack_classes > original_classes - 1:
        raise ValueError(
            f"hijacking task has {hijack_classes} classes but only "
            f"{original_classes - 1} original classes are assignable "
            f"(one is reserved as the negative class)")


# -- dataset file format ------------------------------------------------------
# Layout (little-endian):
#   magic (8 bytes) | format version u32 | name length u32 | name utf-8 |
#   num_classes u32 | ndim u32 | shape u32[ndim] | count u32 |
#   labels i64[count] | row-major float64 pixels.


def save_dataset(dataset: LabeledDataset, path) -> None:
    name = dataset.name.encode("utf-8")
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<II", 1, len(name)))
        f.write(name)
        shape = dataset.sample_shape
        f.write(struct.pack("<II", dataset.num_classes, len(shape)))
        f.write(struct.pack(f"<{len(shape)}I", *shape))
        f.write(struct.pack("<I", len(dataset)))
        f.write(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())
        f.write(np.ascontiguousarray(dataset.samples, dtype="<f8").tobytes())


def load_dataset(path) -> LabeledDataset:
    with open(path, "rb") as f:
        if f.read(8) != DATASET_MAGIC:
            raise ValueError("not a dataset file")
        version, name_len = struct.unpack("<II", f.read(8))
        if version != 1:
            raise ValueError(f"unsupported dataset version {version}")
        name = f.read(name_len).decode("utf-8")
        num_classes, ndim = struct.unpack("<II", f.read(8))
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        (count,) = struct.unpack("<I", f.read(4))
        labels = np.frombuffer(f.read(8 * count), dtype="<i8").astype(np.int64)
        pixels = np.frombuffer(f.read(8 * count * int(np.prod(shape))), dtype="<f8")
        samples = pixels.reshape(count, *shape).astype(np.float64)
    return LabeledDataset(name, samples, labels, num_classes)
