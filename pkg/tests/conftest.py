import os
from pathlib import Path

import numpy as np
import pytest

from cifar_pollution import cifar_io

REAL_DATA_CANDIDATES = ("data/cifar-10-batches-bin", "cifar-10-batches-bin")


def real_cifar_dir() -> Path | None:
    """Directory holding the real CIFAR-10 binary batches, if one is available."""
    candidates = [os.environ.get("CIFAR10_DIR")] + list(REAL_DATA_CANDIDATES)
    root = Path(__file__).resolve().parent.parent
    for c in candidates:
        if not c:
            continue
        path = Path(c) if Path(c).is_absolute() else root / c
        if all((path / f).is_file() for f in (*cifar_io.TRAIN_FILES, cifar_io.TEST_FILE)):
            return path
    return None


def synthetic_records(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced labels and class-tinted random pixels, as raw bytes."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    tint = np.linspace(40, 215, 10)
    base = rng.integers(0, 256, size=(n, 3, 32, 32)).astype(np.float64)
    pixels = 0.5 * base + 0.5 * tint[labels][:, None, None, None]
    for k in range(10):
        sel = labels == k
        pixels[sel, k % 3] = np.minimum(255, pixels[sel, k % 3] + 30)
    return labels.astype(np.uint8), np.clip(np.rint(pixels), 0, 255).astype(np.uint8)


def write_synthetic_cifar(directory: Path, seed: int = 0, per_file: int = 10000,
                          test_size: int = 10000) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(cifar_io.TRAIN_FILES):
        labels, pixels = synthetic_records(per_file, seed * 100 + i)
        rec = np.concatenate([labels[:, None], pixels.reshape(per_file, -1)], axis=1)
        (directory / name).write_bytes(rec.tobytes())
    labels, pixels = synthetic_records(test_size, seed * 100 + 99)
    rec = np.concatenate([labels[:, None], pixels.reshape(test_size, -1)], axis=1)
    (directory / cifar_io.TEST_FILE).write_bytes(rec.tobytes())
    return directory


@pytest.fixture(scope="session")
def synthetic_cifar_dir(tmp_path_factory) -> Path:
    """A full-size (50000 + 10000) directory in the CIFAR-10 binary layout."""
    return write_synthetic_cifar(tmp_path_factory.mktemp("synthetic-cifar"))


@pytest.fixture(scope="session")
def synthetic_full_train(synthetic_cifar_dir) -> cifar_io.Dataset:
    return cifar_io.load_train(synthetic_cifar_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
