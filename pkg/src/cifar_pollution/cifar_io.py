"""CIFAR-10 binary batch files, splits, normalization and augmentation.

Images are held as float32 arrays of shape ``(3, 32, 32)`` with intensities
in ``[0, 1]``; a dataset stacks them into ``(N, 3, 32, 32)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateStdError,
    EmptyInputError,
    InvalidLabelError,
    MalformedFileError,
    SizeError,
)
from .rng import substream

CLASS_NAMES = (
    "plane", "car", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
NUM_CLASSES = 10
IMAGE_SHAPE = (3, 32, 32)
RECORD_BYTES = 1 + 3 * 32 * 32

TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"

FULL_TRAIN_SIZE = 50000
TRAIN_SIZE = 45000
VALIDATION_SIZE = 5000
CROP_PADDING = 4


class LabeledExample(NamedTuple):
    image: np.ndarray
    label: int


@dataclass
class Dataset:
    """An ordered collection of labelled images.

    Supports ``len`` and indexing so it behaves as a sequence of
    :class:`LabeledExample`.
    """

    images: np.ndarray
    labels: np.ndarray
    role: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1:] != IMAGE_SHAPE:
            raise SizeError(f"images must have shape (N, 3, 32, 32), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise SizeError("labels must be a vector with one entry per image")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, index: int) -> LabeledExample:
        return LabeledExample(self.images[index], int(self.labels[index]))

    def __iter__(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices: Sequence[int] | np.ndarray, role: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], role or self.role)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("channel stats need exactly three components")
        if any(not s > 0 for s in self.std):
            raise DegenerateStdError(f"channel std must be strictly positive, got {self.std}")

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))


def check_image(image: np.ndarray) -> None:
    """Raise if ``image`` violates the shape or unit-interval invariant."""
    if image.shape != IMAGE_SHAPE:
        raise SizeError(f"image must be 3x32x32, got {image.shape}")
    if not (np.all(image >= 0.0) and np.all(image <= 1.0)):
        raise ValueError("image intensities must lie in [0, 1]")


# ---------------------------------------------------------------------------
# binary format

def parse_batch_file(raw: bytes) -> Dataset:
    """Parse the concatenated 3073-byte records of a CIFAR-10 batch file."""
    if len(raw) % RECORD_BYTES != 0:
        raise MalformedFileError(
            f"byte length {len(raw)} is not a multiple of the {RECORD_BYTES}-byte record size"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise InvalidLabelError(f"record {int(bad[0])} has label byte {int(labels[bad[0]])}")
    pixels = records[:, 1:].reshape(-1, *IMAGE_SHAPE).astype(np.float32) / np.float32(255.0)
    return Dataset(pixels, labels)


def quantize(images: np.ndarray) -> np.ndarray:
    """Map unit-interval intensities back to bytes by ``round(255 * x)``."""
    return np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def serialize_batch(dataset: Dataset) -> bytes:
    n = len(dataset)
    out = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = dataset.labels.astype(np.uint8)
    out[:, 1:] = quantize(dataset.images).reshape(n, -1)
    return out.tobytes()


def read_batch_file(path: str | Path) -> Dataset:
    return parse_batch_file(Path(path).read_bytes())


def write_batch_file(path: str | Path, dataset: Dataset) -> None:
    Path(path).write_bytes(serialize_batch(dataset))


def _require_dir(data_dir: str | Path) -> Path:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"CIFAR-10 data directory not found: {data_dir}")
    return data_dir


def load_train(data_dir: str | Path) -> Dataset:
    """Concatenate the five training batch files into one 50000-image set."""
    data_dir = _require_dir(data_dir)
    parts = []
    for name in TRAIN_FILES:
        path = data_dir / name
        if not path.is_file():
            raise FileNotFoundError(f"missing CIFAR-10 batch file: {path}")
        parts.append(read_batch_file(path))
    return Dataset(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        role="train",
    )


def load_test(data_dir: str | Path) -> Dataset:
    path = _require_dir(data_dir) / TEST_FILE
    if not path.is_file():
        raise FileNotFoundError(f"missing CIFAR-10 batch file: {path}")
    ds = read_batch_file(path)
    ds.role = "test"
    return ds


# ---------------------------------------------------------------------------
# splitting

def stratified_indices(labels: np.ndarray, per_class: int, rng: np.random.Generator) -> np.ndarray:
    """Pick ``per_class`` random indices of every class, returned sorted."""
    chosen = []
    for k in range(NUM_CLASSES):
        members = np.flatnonzero(labels == k)
        if members.size < per_class:
            raise SizeError(f"class {k} has {members.size} examples, need {per_class}")
        chosen.append(rng.choice(members, size=per_class, replace=False))
    return np.sort(np.concatenate(chosen))


def split_train_val(full_train: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Split the 50000 training images into 45000 train / 5000 validation.

    Validation holds exactly 500 images of every class. Both parts keep the
    original file order.
    """
    if len(full_train) != FULL_TRAIN_SIZE:
        raise SizeError(f"expected {FULL_TRAIN_SIZE} training examples, got {len(full_train)}")
    rng = substream(seed, "split")
    val_idx = stratified_indices(full_train.labels, VALIDATION_SIZE // NUM_CLASSES, rng)
    mask = np.ones(len(full_train), dtype=bool)
    mask[val_idx] = False
    train_idx = np.flatnonzero(mask)
    return full_train.subset(train_idx, "train"), full_train.subset(val_idx, "validation")


def stratified_subset(dataset: Dataset, size: int, seed: int, tag: str = "subset") -> Dataset:
    """Class-balanced random subset; ``size`` must be a multiple of 10."""
    if size % NUM_CLASSES:
        raise SizeError(f"subset size {size} is not a multiple of {NUM_CLASSES}")
    if size >= len(dataset):
        return dataset
    idx = stratified_indices(dataset.labels, size // NUM_CLASSES, substream(seed, tag))
    return dataset.subset(idx)


# ---------------------------------------------------------------------------
# normalization

def compute_channel_stats(train: Dataset) -> ChannelStats:
    """Per-channel mean and population std over every pixel of every image."""
    if len(train) == 0:
        raise EmptyInputError("cannot compute channel statistics of an empty dataset")
    x = train.images
    mean = np.zeros(3)
    var = np.zeros(3)
    for c in range(3):
        ch = x[:, c].astype(np.float64)
        mean[c] = ch.mean()
        var[c] = np.mean((ch - mean[c]) ** 2)
    return ChannelStats(tuple(float(m) for m in mean), tuple(float(s) for s in np.sqrt(var)))


def _stat_arrays(stats: ChannelStats, dtype) -> tuple[np.ndarray, np.ndarray]:
    mean = np.asarray(stats.mean, dtype=dtype).reshape(3, 1, 1)
    std = np.asarray(stats.std, dtype=dtype).reshape(3, 1, 1)
    if np.any(std <= 0):
        raise DegenerateStdError("channel std must be strictly positive")
    return mean, std


def normalize(images: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """``(x - mean[c]) / std[c]``; accepts one image or a stack of images."""
    images = np.asarray(images)
    dtype = images.dtype if images.dtype.kind == "f" else np.float64
    mean, std = _stat_arrays(stats, dtype)
    return (images - mean) / std


def denormalize(images: np.ndarray, stats: ChannelStats) -> np.ndarray:
    images = np.asarray(images)
    mean, std = _stat_arrays(stats, images.dtype if images.dtype.kind == "f" else np.float64)
    return images * std + mean


# ---------------------------------------------------------------------------
# augmentation

def crop_and_flip(images: np.ndarray, offsets: np.ndarray, flips: np.ndarray,
                  padding: int = CROP_PADDING) -> np.ndarray:
    """Zero-pad, crop at the given ``(row, col)`` offsets, then mirror where ``flips``.

    ``images`` is ``(N, C, H, W)``; ``offsets`` is ``(N, 2)`` with values in
    ``[0, 2 * padding]``.
    """
    n, c, h, w = images.shape
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=images.dtype)
    padded[:, :, padding:padding + h, padding:padding + w] = images
    rows = offsets[:, 0, None] + np.arange(h)          # (N, H)
    cols = offsets[:, 1, None] + np.arange(w)          # (N, W)
    cols = np.where(flips[:, None], cols[:, ::-1], cols)
    out = padded[np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None],
                 rows[:, None, :, None], cols[:, None, None, :]]
    return out


def augment_batch(images: np.ndarray, rng: np.random.Generator,
                  padding: int = CROP_PADDING) -> np.ndarray:
    """Random padded crop plus horizontal flip with probability 1/2, per image."""
    n = images.shape[0]
    offsets = rng.integers(0, 2 * padding + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    return crop_and_flip(images, offsets, flips, padding)


def augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return augment_batch(image[None], rng)[0]
