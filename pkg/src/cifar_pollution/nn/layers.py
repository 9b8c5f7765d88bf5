"""Layers with hand-written backward passes.

Activations flow in NHWC layout (``(batch, height, width, channels)``) so
the im2col matrices need no transposes. Convolution weights keep the
conventional ``(out, in, kh, kw)`` shape.

Each layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``self.grads`` during ``backward``.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def named_layers(self, prefix: str = "") -> Iterator[tuple[str, "Layer"]]:
        yield prefix, self
        for name, child in self.children():
            yield from child.named_layers(f"{prefix}.{name}" if prefix else name)

    def astype(self, dtype) -> None:
        for d in (self.params, self.buffers):
            for k in d:
                d[k] = d[k].astype(dtype)


class Conv2d(Layer):
    """2-D convolution via im2col; ``padding`` zeros on every side."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1,
                 padding: int = 1, bias: bool = False, dtype=np.float32):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.needs_input_grad = True
        self.params["weight"] = np.zeros((out_ch, in_ch, kernel, kernel), dtype=dtype)
        if bias:
            self.params["bias"] = np.zeros(out_ch, dtype=dtype)

    @property
    def fan_in(self) -> int:
        return self.in_ch * self.kernel * self.kernel

    def _wmat(self) -> np.ndarray:
        # columns ordered (kh, kw, in) to match the im2col layout
        return self.params["weight"].transpose(0, 2, 3, 1).reshape(self.out_ch, -1)

    def forward(self, x, training=False):
        n, h, w, c = x.shape
        if c != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} input channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        if xp.shape[1] < k or xp.shape[2] < k:
            raise ShapeError(f"input {h}x{w} too small for a {k}x{k} kernel")
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        ho, wo = win.shape[1], win.shape[2]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
        out = cols @ self._wmat().T
        if "bias" in self.params:
            out += self.params["bias"]
        self._cache = (x.shape, xp.shape, cols, ho, wo)
        return out.reshape(n, ho, wo, self.out_ch)

    def backward(self, dout):
        x_shape, xp_shape, cols, ho, wo = self._cache
        n, h, w, c = x_shape
        k, s, p = self.kernel, self.stride, self.padding
        d2 = dout.reshape(-1, self.out_ch)
        dw = (d2.T @ cols).reshape(self.out_ch, k, k, c)
        self.grads["weight"] = dw.transpose(0, 3, 1, 2)
        if "bias" in self.params:
            self.grads["bias"] = d2.sum(axis=0)
        if not self.needs_input_grad:
            return None
        dcols = (d2 @ self._wmat()).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j]
        return dxp[:, p:p + h, p:p + w, :] if p else dxp


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (batch, height, width).

    Training mode normalizes with batch statistics and updates the running
    estimates (unbiased variance); evaluation mode uses the running ones.
    """

    def __init__(self, ch: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.ch, self.eps, self.momentum = ch, eps, momentum
        self.params["weight"] = np.ones(ch, dtype=dtype)
        self.params["bias"] = np.zeros(ch, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(ch, dtype=dtype)
        self.buffers["running_var"] = np.ones(ch, dtype=dtype)

    def forward(self, x, training=False):
        if x.shape[-1] != self.ch:
            raise ShapeError(f"batch norm expects {self.ch} channels, got {x.shape[-1]}")
        x2 = x.reshape(-1, self.ch)
        if training:
            m = x2.shape[0]
            mean = x2.mean(axis=0)
            xc = x2 - mean
            var = np.einsum("ij,ij->j", xc, xc) / m
            inv_std = 1.0 / np.sqrt(var + self.eps)
            mom = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            self.buffers["running_mean"] = ((1 - mom) * rm + mom * mean).astype(rm.dtype)
            unbiased = var * (m / max(m - 1, 1))
            self.buffers["running_var"] = ((1 - mom) * rv + mom * unbiased).astype(rv.dtype)
        else:
            xc = x2 - self.buffers["running_mean"]
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
        xhat = xc * inv_std.astype(x.dtype)
        self._cache = (xhat, inv_std.astype(x.dtype), training)
        return (xhat * self.params["weight"] + self.params["bias"]).reshape(x.shape)

    def backward(self, dout):
        xhat, inv_std, training = self._cache
        d2 = dout.reshape(-1, self.ch)
        gb = d2.sum(axis=0)
        gw = np.einsum("ij,ij->j", d2, xhat)
        self.grads["weight"] = gw
        self.grads["bias"] = gb
        scale = self.params["weight"] * inv_std
        if not training:
            return (d2 * scale).reshape(dout.shape)
        m = d2.shape[0]
        dx = scale * (d2 - (gb + xhat * gw) / m)
        return dx.reshape(dout.shape)


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._mask


class MaxPool2d(Layer):
    """Non-overlapping 2x2 max pooling; gradient goes to the first argmax of each window."""

    def forward(self, x, training=False):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"max pool needs even spatial size, got {h}x{w}")
        # window positions in row-major order: (0,0), (0,1), (1,0), (1,1)
        quads = [x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2]]
        out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
        taken = np.zeros(out.shape, dtype=bool)
        masks = []
        for q in quads:
            hit = (q == out) & ~taken
            taken |= hit
            masks.append(hit)
        self._cache = (x.shape, masks)
        return out

    def backward(self, dout):
        shape, masks = self._cache
        dx = np.empty(shape, dtype=dout.dtype)
        dx[:, 0::2, 0::2] = dout * masks[0]
        dx[:, 0::2, 1::2] = dout * masks[1]
        dx[:, 1::2, 0::2] = dout * masks[2]
        dx[:, 1::2, 1::2] = dout * masks[3]
        return dx


class GlobalAvgPool(Layer):
    """Average over the spatial positions: ``(N, H, W, C) -> (N, C)``."""

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        n, h, w, c = self._shape
        return np.broadcast_to(dout[:, None, None, :] / (h * w), self._shape).astype(dout.dtype)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, dtype=np.float32):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = np.zeros((out_features, in_features), dtype=dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    @property
    def fan_in(self) -> int:
        return self.in_features

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear expects (N, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dout):
        self.grads["weight"] = dout.T @ self._x
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"]


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
            if dout is None:
                break
        return dout


class ResidualBasicBlock(Layer):
    """Two 3x3 conv-BN stages plus an identity or 1x1-projection shortcut."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, 1, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, 1, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        self.relu_out = ReLU()
        if stride != 1 or in_ch != out_ch:
            self.shortcut: Sequential | None = Sequential(
                Conv2d(in_ch, out_ch, 1, stride, 0, dtype=dtype), BatchNorm2d(out_ch, dtype=dtype))
        else:
            self.shortcut = None

    def children(self):
        kids = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.shortcut is not None:
            kids.append(("shortcut", self.shortcut))
        return kids

    def forward(self, x, training=False):
        out = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, training), training))
        out = self.bn2.forward(self.conv2.forward(out, training), training)
        short = x if self.shortcut is None else self.shortcut.forward(x, training)
        return self.relu_out.forward(out + short)

    def backward(self, dout):
        d = self.relu_out.backward(dout)
        dmain = self.conv2.backward(self.bn2.backward(d))
        dmain = self.conv1.backward(self.bn1.backward(self.relu1.backward(dmain)))
        dshort = d if self.shortcut is None else self.shortcut.backward(d)
        return dmain + dshort
