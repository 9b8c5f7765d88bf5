import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cifar_pollution import corruption
from cifar_pollution.corruption import (
    CorruptionSpec,
    GaussianBlur,
    GaussianNoise,
    SaltPepper,
    apply,
    gaussian_blur,
    gaussian_kernel,
    gaussian_noise,
    salt_pepper,
)
from cifar_pollution.errors import ParameterError
from cifar_pollution.rng import substream

from oracles import binomial_interval, clipped_normal_mean, dense_blur_2d, dense_blur_2d_fast


@pytest.mark.parametrize("noise,level,value", [
    ("gaussian", "mild", 0.1), ("gaussian", "moderate", 0.3), ("gaussian", "strong", 0.5),
    ("salt-pepper", "mild", 0.05), ("salt-pepper", "moderate", 0.1), ("salt-pepper", "strong", 0.2),
    ("blur", "mild", 0.5), ("blur", "moderate", 1.0), ("blur", "strong", 2.0),
])
def test_severity_presets(noise, level, value):
    assert corruption.preset(noise, level) == CorruptionSpec(noise, value)


def test_spec_rejects_out_of_range():
    with pytest.raises(ParameterError):
        GaussianNoise(-0.1)
    with pytest.raises(ParameterError):
        SaltPepper(1.5)
    with pytest.raises(ParameterError):
        GaussianBlur(0.0)
    with pytest.raises(ParameterError):
        CorruptionSpec("jpeg", 0.5)


# -- Gaussian noise ----------------------------------------------------------

def test_gaussian_zero_sigma_is_identity(rng):
    img = rng.random((3, 32, 32)).astype(np.float32)
    assert np.array_equal(gaussian_noise(img, 0.0, substream(0, "t")), img)


def test_gaussian_negative_sigma():
    with pytest.raises(ParameterError):
        gaussian_noise(np.zeros((3, 32, 32)), -1.0, substream(0, "t"))


def test_gaussian_perturbation_moments():
    n = 10**6
    x = corruption.gaussian_perturbation(n, 0.1, substream(7, "moments"))
    assert abs(x.mean()) <= 0.001
    assert abs(x.std() - 0.1) <= 0.001


def test_gaussian_clipped_mean_matches_quadrature():
    img = np.zeros((3, 1000, 1000))
    out = gaussian_noise(img, 0.5, substream(3, "quad"))
    expected = clipped_normal_mean(0.5)
    n = out.size
    # the clipped output has variance below 0.25, so 5 standard errors is generous
    assert abs(out.mean() - expected) < 5 * 0.5 / math.sqrt(n)


def test_gaussian_output_in_unit_interval(rng):
    img = rng.random((3, 32, 32))
    out = gaussian_noise(img, 0.5, substream(1, "clip"))
    assert out.min() >= 0 and out.max() <= 1 and out.shape == img.shape


# -- salt and pepper ---------------------------------------------------------

def test_salt_pepper_zero_is_identity(rng):
    img = rng.random((3, 32, 32))
    assert np.array_equal(salt_pepper(img, 0.0, substream(0, "sp")), img)


def test_salt_pepper_rates():
    img = np.full((3, 1000, 1000), 0.5)
    out = salt_pepper(img, 0.05, substream(11, "sp"))
    n = 10**6
    altered = int(np.sum(out[0] != 0.5))
    lo, hi = binomial_interval(n, 0.05, 0.99)
    assert lo <= altered <= hi
    salt = int(np.sum(out[0] == 1.0))
    # given an alteration, salt vs pepper is a fair coin
    lo, hi = binomial_interval(altered, 0.5, 0.99)
    assert lo <= salt <= hi


def test_salt_pepper_hits_all_channels_jointly(rng):
    img = rng.uniform(0.1, 0.9, (3, 32, 32))
    out = salt_pepper(img, 0.5, substream(2, "sp"))
    changed = out != img
    assert np.array_equal(changed[0], changed[1]) and np.array_equal(changed[0], changed[2])


def test_salt_pepper_full_density(rng):
    out = salt_pepper(rng.random((3, 32, 32)), 1.0, substream(4, "sp"))
    assert np.all((out == 0) | (out == 1))


def test_salt_pepper_bad_density():
    with pytest.raises(ParameterError):
        salt_pepper(np.zeros((3, 32, 32)), 1.2, substream(0, "sp"))


# -- blur --------------------------------------------------------------------

@pytest.mark.parametrize("sigma", [0.1, 0.5, 1.0, 2.0, 4.0])
def test_kernel_normalized_and_symmetric(sigma):
    k = gaussian_kernel(sigma)
    assert abs(k.taps.sum() - 1.0) <= 1e-9
    assert np.array_equal(k.taps, k.taps[::-1])
    assert k.radius == max(1, math.ceil(3 * sigma))


def test_kernel_half_sigma_matches_formula():
    k = gaussian_kernel(0.5)
    assert k.radius == 2
    # direct evaluation of the 2-D density on the axis, then renormalization
    dens = [math.exp(-(x * x) / (2 * 0.25)) / (2 * math.pi * 0.25) for x in range(-2, 3)]
    expected = np.array(dens) / sum(dens)
    np.testing.assert_allclose(k.taps, expected, rtol=0, atol=1e-12)


def test_kernel_rejects_nonpositive():
    with pytest.raises(ParameterError):
        gaussian_kernel(0.0)


@pytest.mark.parametrize("c", [0.0, 0.3, 1.0])
def test_blur_constant_fixed_point(c):
    img = np.full((3, 32, 32), c)
    np.testing.assert_allclose(gaussian_blur(img, 2.0), c, atol=1e-6)


def test_blur_impulse_response():
    img = np.zeros((3, 32, 32))
    img[:, 16, 16] = 1.0
    out = gaussian_blur(img, 1.0)
    k = gaussian_kernel(1.0)
    r = k.radius
    expected = np.zeros((32, 32))
    expected[16 - r:16 + r + 1, 16 - r:16 + r + 1] = k.outer()
    for c in range(3):
        np.testing.assert_allclose(out[c], expected, atol=1e-6)


def test_blur_matches_dense_convolution(rng):
    img = rng.random((3, 32, 32))
    np.testing.assert_allclose(gaussian_blur(img, 2.0), dense_blur_2d(img, 2.0), atol=1e-6)


def test_dense_oracles_agree(rng):
    img = rng.random((3, 32, 32))
    np.testing.assert_allclose(dense_blur_2d_fast(img, 1.0), dense_blur_2d(img, 1.0), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 2), st.floats(-2, 2), st.sampled_from([0.5, 1.0, 2.0]))
def test_blur_is_linear(seed, a, b, sigma):
    gen = np.random.default_rng(seed)
    x, y = gen.random((3, 32, 32)), gen.random((3, 32, 32))
    lhs = corruption.blur_unclipped(a * x + b * y, sigma)
    rhs = a * corruption.blur_unclipped(x, sigma) + b * corruption.blur_unclipped(y, sigma)
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_blur_preserves_mean_of_constant_region():
    img = np.zeros((3, 32, 32))
    img[:, 8:24, 8:24] = 0.7
    out = gaussian_blur(img, 1.0)
    assert abs(out[:, 12:20, 12:20].mean() - 0.7) < 1e-6


# -- dispatch ----------------------------------------------------------------

def test_apply_identity_and_values(rng):
    img = rng.random((3, 32, 32))
    assert np.array_equal(apply(GaussianNoise(0.0), img, substream(0, "a")), img)
    gray = np.full((3, 32, 32), 0.5)
    out = apply(SaltPepper(0.2), gray, substream(0, "a"))
    assert set(np.unique(out)) <= {0.0, 0.5, 1.0}


def test_blur_twice_differs_from_double_sigma(rng):
    img = rng.random((3, 32, 32))
    twice = apply(GaussianBlur(1.0), apply(GaussianBlur(1.0), img))
    once = apply(GaussianBlur(2.0), img)
    assert not np.allclose(twice, once, atol=1e-6)


def test_blur_ignores_stream(rng):
    img = rng.random((3, 32, 32))
    a = apply(GaussianBlur(1.0), img, substream(0, "x"))
    b = apply(GaussianBlur(1.0), img, substream(99, "y"))
    assert np.array_equal(a, b)


OPERATOR_SPECS = [GaussianNoise(0.3), SaltPepper(0.1), GaussianBlur(1.0), GaussianNoise(0.5), SaltPepper(1.0)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(OPERATOR_SPECS))
def test_operators_preserve_invariants_and_are_deterministic(seed, spec):
    img = np.random.default_rng(seed).random((3, 32, 32)).astype(np.float32)
    a = apply(spec, img, substream(seed, "prop"))
    b = apply(spec, img, substream(seed, "prop"))
    assert a.shape == (3, 32, 32)
    assert a.min() >= 0 and a.max() <= 1
    assert np.array_equal(a, b)
