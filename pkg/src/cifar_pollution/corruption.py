"""Gaussian noise, salt-and-pepper noise and Gaussian blur on unit-interval images.

All operators act on raw ``[0, 1]`` pixels (before normalization) and work on
a single ``(C, H, W)`` image; :func:`gaussian_blur` also accepts any leading
batch dimensions since it needs no randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

NOISE_TYPES = ("gaussian", "salt-pepper", "blur")
LEVELS = ("mild", "moderate", "strong")

# severity presets per noise type: mild, moderate, strong
SEVERITY_PRESETS: dict[str, dict[str, float]] = {
    "gaussian": {"mild": 0.1, "moderate": 0.3, "strong": 0.5},
    "salt-pepper": {"mild": 0.05, "moderate": 0.1, "strong": 0.2},
    "blur": {"mild": 0.5, "moderate": 1.0, "strong": 2.0},
}

PARAM_NAMES = {"gaussian": "sigma", "salt-pepper": "p_total", "blur": "sigma_blur"}


@dataclass(frozen=True)
class CorruptionSpec:
    """One corruption operator together with its severity parameter.

    ``param`` is sigma for ``gaussian``, the total impulse density for
    ``salt-pepper`` and the kernel standard deviation for ``blur``.
    """

    noise_type: str
    param: float

    def __post_init__(self):
        if self.noise_type not in NOISE_TYPES:
            raise ParameterError(f"unknown noise type {self.noise_type!r}; expected one of {NOISE_TYPES}")
        p = self.param
        if not math.isfinite(p):
            raise ParameterError(f"{self.param_name} must be finite")
        if self.noise_type == "gaussian" and p < 0:
            raise ParameterError(f"sigma must be >= 0, got {p}")
        if self.noise_type == "salt-pepper" and not 0 <= p <= 1:
            raise ParameterError(f"p_total must lie in [0, 1], got {p}")
        if self.noise_type == "blur" and p <= 0:
            raise ParameterError(f"sigma_blur must be > 0, got {p}")

    @property
    def param_name(self) -> str:
        return PARAM_NAMES[self.noise_type]

    @property
    def label(self) -> str:
        return f"{self.noise_type}({self.param_name}={self.param:g})"

    def to_dict(self) -> dict:
        return {"noise_type": self.noise_type, "param": self.param}

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        return cls(d["noise_type"], float(d["param"]))


def GaussianNoise(sigma: float) -> CorruptionSpec:
    return CorruptionSpec("gaussian", float(sigma))


def SaltPepper(p_total: float) -> CorruptionSpec:
    return CorruptionSpec("salt-pepper", float(p_total))


def GaussianBlur(sigma_blur: float) -> CorruptionSpec:
    return CorruptionSpec("blur", float(sigma_blur))


def preset(noise_type: str, level: str) -> CorruptionSpec:
    """Look up the named severity for a noise type."""
    if noise_type not in SEVERITY_PRESETS:
        raise ParameterError(f"unknown noise type {noise_type!r}")
    if level not in LEVELS:
        raise ParameterError(f"unknown severity level {level!r}; expected one of {LEVELS}")
    return CorruptionSpec(noise_type, SEVERITY_PRESETS[noise_type][level])


# ---------------------------------------------------------------------------
# additive Gaussian noise

def gaussian_perturbation(shape, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Draw the raw ``N(0, sigma^2)`` perturbation field (before clipping)."""
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    return rng.normal(0.0, sigma, size=shape) if sigma > 0 else np.zeros(shape)


def gaussian_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return image.copy()
    noisy = image + gaussian_perturbation(image.shape, sigma, rng)
    return np.clip(noisy, 0.0, 1.0).astype(image.dtype, copy=False)


# ---------------------------------------------------------------------------
# salt and pepper

def impulse_mask(shape_hw: tuple[int, int], p_total: float,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Return boolean ``(pepper, salt)`` location masks, each with probability ``p_total / 2``."""
    if not 0 <= p_total <= 1:
        raise ParameterError(f"p_total must lie in [0, 1], got {p_total}")
    u = rng.random(shape_hw)
    half = p_total / 2.0
    pepper = u < half
    salt = (u >= half) & (u < p_total)
    return pepper, salt


def salt_pepper(image: np.ndarray, p_total: float, rng: np.random.Generator) -> np.ndarray:
    """Replace whole pixel locations (all channels) with 0 or 1."""
    pepper, salt = impulse_mask(image.shape[-2:], p_total, rng)
    out = image.copy()
    out[..., pepper] = 0.0
    out[..., salt] = 1.0
    return out


# ---------------------------------------------------------------------------
# Gaussian blur

@dataclass(frozen=True)
class BlurKernel:
    taps: np.ndarray
    radius: int

    def outer(self) -> np.ndarray:
        """The dense 2-D kernel."""
        return np.outer(self.taps, self.taps)


def gaussian_kernel(sigma_blur: float) -> BlurKernel:
    """Sampled 1-D Gaussian truncated at ``ceil(3 sigma)`` and renormalized."""
    if not sigma_blur > 0:
        raise ParameterError(f"sigma_blur must be > 0, got {sigma_blur}")
    radius = max(1, math.ceil(3.0 * sigma_blur))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(k * k) / (2.0 * sigma_blur * sigma_blur))
    taps /= taps.sum()
    return BlurKernel(taps, radius)


def _convolve_axis(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = (taps.size - 1) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (radius, radius)
    xp = np.pad(x, pad, mode="reflect")
    n = x.shape[axis]
    out = np.zeros_like(x, dtype=np.float64)
    for i, w in enumerate(taps):
        out += w * np.take(xp, np.arange(i, i + n), axis=axis)
    return out


def blur_unclipped(images: np.ndarray, sigma_blur: float) -> np.ndarray:
    """Separable blur (rows then columns) in float64 without the final clip."""
    kernel = gaussian_kernel(sigma_blur)
    x = np.asarray(images, dtype=np.float64)
    x = _convolve_axis(x, kernel.taps, axis=-1)
    return _convolve_axis(x, kernel.taps, axis=-2)


def gaussian_blur(images: np.ndarray, sigma_blur: float) -> np.ndarray:
    out = np.clip(blur_unclipped(images, sigma_blur), 0.0, 1.0)
    return out.astype(images.dtype if images.dtype.kind == "f" else np.float64, copy=False)


# ---------------------------------------------------------------------------

def apply(spec: CorruptionSpec, image: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Corrupt ``image`` according to ``spec``; blur ignores ``rng``."""
    if spec.noise_type == "blur":
        return gaussian_blur(image, spec.param)
    if rng is None:
        raise ParameterError(f"{spec.noise_type} corruption needs a random stream")
    if spec.noise_type == "gaussian":
        return gaussian_noise(image, spec.param, rng)
    return salt_pepper(image, spec.param, rng)
