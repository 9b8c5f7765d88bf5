"""Finite-difference gradient checks for single layers in 64-bit mode."""

from __future__ import annotations

import numpy as np

from cifar_pollution.nn import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    ReLU,
    ResidualBasicBlock,
)
from cifar_pollution.nn.model import softmax_cross_entropy

from oracles import numeric_grad, rel_error

F64 = np.float64
STEP = 1e-5


def _randomize(layer, gen):
    for _, sub in layer.named_layers():
        for k, v in sub.params.items():
            sub.params[k] = gen.normal(0, 1, v.shape)
            if isinstance(sub, BatchNorm2d) and k == "weight":
                sub.params[k] = gen.uniform(0.5, 1.5, v.shape)


def _away_from_zero(gen, shape, gap=0.1):
    x = gen.normal(0, 1, shape)
    return np.where(np.abs(x) < gap, np.copysign(gap, x), x)


def make_conv(gen):
    c_in, c_out = gen.integers(1, 4), gen.integers(1, 5)
    k = int(gen.choice([1, 3]))
    stride = int(gen.choice([1, 2]))
    pad = int(gen.integers(0, 2)) if k == 3 else 0
    size = int(gen.integers(4, 8))
    layer = Conv2d(c_in, c_out, k, stride, pad, bias=bool(gen.integers(0, 2)), dtype=F64)
    return layer, gen.normal(0, 1, (int(gen.integers(1, 4)), size, size, c_in))


def make_batchnorm(gen):
    c = int(gen.integers(1, 4))
    shape = (int(gen.integers(2, 5)), int(gen.integers(2, 4)), int(gen.integers(2, 4)), c)
    return BatchNorm2d(c, dtype=F64), gen.normal(0.5, 2.0, shape)


def make_relu(gen):
    shape = tuple(int(s) for s in gen.integers(1, 5, size=4))
    return ReLU(), _away_from_zero(gen, shape)


def make_maxpool(gen):
    n, c = int(gen.integers(1, 3)), int(gen.integers(1, 3))
    h, w = 2 * int(gen.integers(1, 4)), 2 * int(gen.integers(1, 4))
    # distinct values spaced well beyond the step so no window ties
    x = gen.permutation(n * h * w * c).reshape(n, h, w, c) * 0.01
    return MaxPool2d(), x.astype(F64)


def make_avgpool(gen):
    shape = tuple(int(s) for s in gen.integers(1, 5, size=4))
    return GlobalAvgPool(), gen.normal(0, 1, shape)


def make_linear(gen):
    i, o = int(gen.integers(1, 8)), int(gen.integers(1, 6))
    return Linear(i, o, dtype=F64), gen.normal(0, 1, (int(gen.integers(1, 5)), i))


def make_residual(gen):
    # with one channel the 1x1 shortcut feeds a batch norm that cancels its scale,
    # so its weight gradient is identically zero and a relative error is undefined
    c_in = int(gen.integers(2, 4))
    c_out = int(gen.choice([c_in, c_in + 1]))
    stride = int(gen.choice([1, 2]))
    block = ResidualBasicBlock(c_in, c_out, stride, dtype=F64)
    return block, gen.normal(0, 1, (2, 4, 4, c_in))


LAYER_FACTORIES = {
    "conv": make_conv,
    "batchnorm": make_batchnorm,
    "relu": make_relu,
    "maxpool": make_maxpool,
    "avgpool": make_avgpool,
    "linear": make_linear,
    "residual": make_residual,
}


def check_layer(kind: str, seed: int) -> float:
    """Largest relative error over the input and every parameter for one random trial."""
    gen = np.random.default_rng(seed)
    layer, x = LAYER_FACTORIES[kind](gen)
    _randomize(layer, gen)
    out = layer.forward(x, training=True)
    r = gen.normal(0, 1, out.shape)

    def f():
        return float(np.sum(layer.forward(x, training=True) * r))

    f()
    dx = layer.backward(r.copy())
    analytic = {"input": dx}
    for prefix, sub in layer.named_layers():
        for k in sub.params:
            analytic[f"{prefix}.{k}"] = sub.grads[k].copy()
    worst = rel_error(dx, numeric_grad(f, x, STEP))
    for prefix, sub in layer.named_layers():
        for k in sub.params:
            worst = max(worst, rel_error(analytic[f"{prefix}.{k}"], numeric_grad(f, sub.params[k], STEP)))
    return worst


def check_cross_entropy(seed: int) -> float:
    gen = np.random.default_rng(seed)
    n, k = int(gen.integers(1, 6)), int(gen.integers(2, 11))
    logits = gen.normal(0, 3, (n, k))
    labels = gen.integers(0, k, n)
    _, grad = softmax_cross_entropy(logits, labels)
    numeric = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits, STEP)
    return rel_error(grad, numeric)


GRADIENT_KINDS = tuple(LAYER_FACTORIES) + ("cross_entropy",)


def check(kind: str, seed: int) -> float:
    return check_cross_entropy(seed) if kind == "cross_entropy" else check_layer(kind, seed)
