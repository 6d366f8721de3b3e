"""Dataset IO: IDX parsing, MNIST loading, synthetic blobs, deterministic batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .initgen import derive_state, unit_normals, xorshift32

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX payload; byte_offset points at the problem."""

    def __init__(self, message: str, byte_offset: int):
        self.byte_offset = byte_offset
        super().__init__(f"{message} (byte offset {byte_offset})")


@dataclass
class Dataset:
    features: np.ndarray  # (samples, dims) float32 in [0, 1]
    labels: np.ndarray  # (samples,) int64
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows vs {len(self.labels)} labels")
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise ValueError(f"label {int(self.labels.max())} >= num_classes {self.num_classes}")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


def _read_u32(raw: bytes, offset: int) -> int:
    if offset + 4 > len(raw):
        raise IdxFormatError("file truncated inside header", len(raw))
    return struct.unpack_from(">I", raw, offset)[0]


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode one IDX file: images (n, rows*cols) in [0,1], or labels (n,).

    Big-endian header, unsigned-byte payload. Errors name the byte offset
    where the problem sits.
    """
    magic = _read_u32(raw, 0)
    if magic == IMAGES_MAGIC:
        n = _read_u32(raw, 4)
        rows = _read_u32(raw, 8)
        cols = _read_u32(raw, 12)
        expected_end = 16 + n * rows * cols
        if len(raw) < expected_end:
            raise IdxFormatError(f"image payload needs {expected_end} bytes, file ends early", len(raw))
        if len(raw) > expected_end:
            raise IdxFormatError("trailing data after image payload", expected_end)
        pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
        return (pixels.reshape(n, rows * cols).astype(np.float32)) / np.float32(255.0)
    if magic == LABELS_MAGIC:
        n = _read_u32(raw, 4)
        expected_end = 8 + n
        if len(raw) < expected_end:
            raise IdxFormatError(f"label payload needs {expected_end} bytes, file ends early", len(raw))
        if len(raw) > expected_end:
            raise IdxFormatError("trailing data after label payload", expected_end)
        labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
        if len(labels) and labels.max() > 9:
            bad = int(np.nonzero(labels > 9)[0][0])
            raise IdxFormatError(f"label value {int(labels[bad])} out of range 0-9", 8 + bad)
        return labels.astype(np.int64)
    raise IdxFormatError(f"bad magic 0x{magic:08x}", 0)


def serialize_idx_images(features: np.ndarray, rows: int, cols: int) -> bytes:
    """Inverse of parse_idx for images; exact for data that came from bytes."""
    n, dims = features.shape
    if dims != rows * cols:
        raise ValueError(f"feature dim {dims} != {rows}x{cols}")
    pixels = np.rint(np.asarray(features, dtype=np.float64) * 255.0).astype(np.uint8)
    return struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    return struct.pack(">II", LABELS_MAGIC, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()


def read_idx_file(path) -> np.ndarray:
    """Read an IDX file, decompressing gzip transparently."""
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def _find_idx(directory: Path, stem: str) -> Path:
    # accept the two common spellings and optional .gz
    for name in (f"{stem}-ubyte", f"{stem}-ubyte.gz",
                 f"{stem.replace('-idx', '.idx')}-ubyte", f"{stem.replace('-idx', '.idx')}-ubyte.gz"):
        candidate = directory / name
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no {stem}-ubyte[.gz] under {directory}")


def load_mnist(directory) -> dict[str, Dataset]:
    """Load MNIST from IDX files; train = first 50k, val = last 10k of the 60k set."""
    directory = Path(directory)
    train_x = read_idx_file(_find_idx(directory, "train-images-idx3"))
    train_y = read_idx_file(_find_idx(directory, "train-labels-idx1"))
    test_x = read_idx_file(_find_idx(directory, "t10k-images-idx3"))
    test_y = read_idx_file(_find_idx(directory, "t10k-labels-idx1"))
    if len(train_x) != len(train_y):
        raise IdxFormatError(f"{len(train_x)} train images vs {len(train_y)} labels", 4)
    full = Dataset(train_x, train_y, 10)
    split = len(full) - 10_000 if len(full) > 10_000 else max(1, len(full) // 2)
    return {
        "train": full.subset(np.arange(split)),
        "val": full.subset(np.arange(split, len(full))),
        "test": Dataset(test_x, test_y, 10),
    }


def synth_blobs(seed: int, num_classes: int, dims: int, samples_per_class: int,
                spread: float) -> Dataset:
    """Gaussian clusters at fixed diagonal centers, clamped to [0,1].

    Class c is centered at 0.2 + 0.6*c/(num_classes-1) in every dimension,
    so classes sit along the cube diagonal and separability is controlled
    entirely by `spread`. Sample noise comes from the same counter-based
    generator as weight init, keyed by a disjoint stream.
    """
    if dims < 1:
        raise ValueError("dims must be >= 1")
    n = num_classes * samples_per_class
    centers = np.full(num_classes, 0.5)
    if num_classes > 1:
        centers = 0.2 + 0.6 * np.arange(num_classes) / (num_classes - 1)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    noise = unit_normals(seed ^ 0x5EED5EED, 0, n * dims).reshape(n, dims)
    features = centers[labels][:, None] + spread * noise
    features = np.clip(features, 0.0, 1.0).astype(np.float32)
    return Dataset(features, labels, num_classes)


def fisher_yates_order(n: int, epoch_seed: int, epoch_index: int) -> np.ndarray:
    """Deterministic permutation of range(n) from the xorshift32 core."""
    order = np.arange(n, dtype=np.int64)
    state = derive_state(epoch_seed, epoch_index)
    for i in range(n - 1, 0, -1):
        state = xorshift32(state)
        j = state % (i + 1)
        order[i], order[j] = order[j], order[i]
    return order


@dataclass(frozen=True)
class BatchPlan:
    """One epoch's mini-batch schedule, fully determined by (seed, epoch)."""

    batch_size: int
    epoch_seed: int
    epoch_index: int

    def order(self, n: int) -> np.ndarray:
        return fisher_yates_order(n, self.epoch_seed, self.epoch_index)


def shuffled_batches(dataset: Dataset, plan: BatchPlan):
    """Yield (features, labels) blocks partitioning the permuted dataset."""
    if plan.batch_size < 1 or plan.batch_size > len(dataset):
        raise ValueError(f"batch_size {plan.batch_size} out of range for {len(dataset)} samples")
    order = plan.order(len(dataset))
    for start in range(0, len(dataset), plan.batch_size):
        idx = order[start : start + plan.batch_size]
        yield dataset.features[idx], dataset.labels[idx]
