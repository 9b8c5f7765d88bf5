"""Mixed-quality training sets: corrupt a seeded random fraction of images."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cifar_io import Dataset
from .corruption import CorruptionSpec, apply, gaussian_blur
from .errors import ParameterError
from .rng import substream

DEFAULT_FRACTIONS = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.50, 0.75, 1.0)
DEFAULT_SEEDS = tuple(range(10))

TRAIN_TAG = "pollute"
TEST_TAG = "test-corrupt"


@dataclass(frozen=True)
class PollutionPlan:
    fraction: float
    spec: CorruptionSpec
    master_seed: int

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ParameterError(f"fraction must lie in [0, 1], got {self.fraction}")

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "spec": self.spec.to_dict(), "master_seed": self.master_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "PollutionPlan":
        return cls(float(d["fraction"]), CorruptionSpec.from_dict(d["spec"]), int(d["master_seed"]))


@dataclass
class PollutedDataset:
    examples: Dataset
    corrupted_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.examples)


def build_plan_grid(fractions: Sequence[float], specs: Sequence[CorruptionSpec],
                    seeds: Sequence[int]) -> list[PollutionPlan]:
    """Cartesian product of fractions, specs and seeds, fraction-major."""
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ParameterError(f"fraction must lie in [0, 1], got {f}")
    if not fractions:
        raise ParameterError("at least one fraction is required")
    if not specs:
        raise ParameterError("at least one corruption spec is required")
    if not seeds:
        raise ParameterError("at least one seed is required")
    return [PollutionPlan(float(f), s, int(seed))
            for f, s, seed in itertools.product(fractions, specs, seeds)]


def corrupted_count(fraction: float, n: int) -> int:
    """``round(fraction * n)`` with halves rounded up."""
    return int(math.floor(fraction * n + 0.5))


def select_indices(n: int, fraction: float, master_seed: int) -> np.ndarray:
    """Sorted indices of the images to corrupt; depends only on (n, fraction, seed)."""
    k = corrupted_count(fraction, n)
    rng = substream(master_seed, TRAIN_TAG + "/select")
    return np.sort(rng.permutation(n)[:k])


def corrupt_images(images: np.ndarray, indices: np.ndarray, spec: CorruptionSpec,
                   master_seed: int, tag: str) -> np.ndarray:
    """Copy of ``images`` with ``images[indices]`` corrupted.

    Each image ``i`` draws its noise from the substream keyed by
    ``(master_seed, tag, i)``.
    """
    out = images.copy()
    if len(indices) == 0:
        return out
    if spec.noise_type == "blur":
        out[indices] = gaussian_blur(images[indices], spec.param)
        return out
    for i in indices:
        out[i] = apply(spec, images[i], substream(master_seed, tag, int(i)))
    return out


def pollute(train: Dataset, plan: PollutionPlan) -> PollutedDataset:
    idx = select_indices(len(train), plan.fraction, plan.master_seed)
    images = corrupt_images(train.images, idx, plan.spec, plan.master_seed, TRAIN_TAG)
    return PollutedDataset(Dataset(images, train.labels.copy(), train.role), idx)


def corrupted_test_seed(seed: int) -> int:
    """Seed used for test-set corruption, kept apart from the training pollution seed."""
    return int(seed) + 1_000_003


def corrupt_test_set(test: Dataset, spec: CorruptionSpec, seed: int) -> Dataset:
    """Corrupt every test image with ``spec``."""
    idx = np.arange(len(test))
    images = corrupt_images(test.images, idx, spec, seed, TEST_TAG)
    return Dataset(images, test.labels.copy(), "test")
