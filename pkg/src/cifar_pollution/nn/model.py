"""Model assembly, initialization and the classification loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError
from ..rng import substream
from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    ResidualBasicBlock,
    Sequential,
)

MODEL_VARIANTS = ("small_cnn", "resnet18")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "small_cnn"
    class_count: int = 10

    def __post_init__(self):
        if self.variant not in MODEL_VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}; expected one of {MODEL_VARIANTS}")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "class_count": self.class_count}


class Model:
    """A layer stack taking NCHW batches and returning ``(N, classes)`` logits."""

    def __init__(self, net: Layer, in_channels: int = 3, dtype=np.float32):
        self.net = net
        self.in_channels = in_channels
        self.dtype = np.dtype(dtype)
        self._mark_input_layer()

    def _mark_input_layer(self) -> None:
        # The first convolution never needs a gradient w.r.t. the raw images.
        for _, layer in self.net.named_layers():
            if isinstance(layer, Conv2d):
                layer.needs_input_grad = False
                return
            if isinstance(layer, ResidualBasicBlock):
                return

    def enable_input_grad(self) -> None:
        for _, layer in self.net.named_layers():
            if isinstance(layer, Conv2d):
                layer.needs_input_grad = True

    # -- parameters ------------------------------------------------------
    def _entries(self, kind: str):
        for prefix, layer in self.net.named_layers():
            store = getattr(layer, kind)
            for key in store:
                yield (f"{prefix}.{key}" if prefix else key), layer, key

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {name: layer.params[key] for name, layer, key in self._entries("params")}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {name: layer.grads[key] for name, layer, key in self._entries("params")}

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return {name: layer.buffers[key] for name, layer, key in self._entries("buffers")}

    def set_param(self, name: str, value: np.ndarray) -> None:
        for n, layer, key in self._entries("params"):
            if n == name:
                layer.params[key] = np.asarray(value, dtype=self.dtype)
                return
        raise KeyError(name)

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer."""
        state = {name: layer.params[key].copy() for name, layer, key in self._entries("params")}
        state.update({name: layer.buffers[key].copy() for name, layer, key in self._entries("buffers")})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for kind in ("params", "buffers"):
            for name, layer, key in self._entries(kind):
                if name not in state:
                    raise KeyError(f"state is missing {name}")
                value = np.asarray(state[name], dtype=self.dtype)
                if value.shape != getattr(layer, kind)[key].shape:
                    raise ShapeError(f"{name}: expected {getattr(layer, kind)[key].shape}, got {value.shape}")
                getattr(layer, kind)[key] = value.copy()

    def astype(self, dtype) -> "Model":
        self.dtype = np.dtype(dtype)
        for _, layer in self.net.named_layers():
            layer.astype(self.dtype)
        return self

    # -- computation -----------------------------------------------------
    def forward(self, batch: np.ndarray, training: bool = False) -> np.ndarray:
        batch = np.asarray(batch)
        if batch.ndim != 4 or batch.shape[1] != self.in_channels:
            raise ShapeError(f"expected a (N, {self.in_channels}, H, W) batch, got {batch.shape}")
        x = np.ascontiguousarray(batch.transpose(0, 2, 3, 1), dtype=self.dtype)
        logits = self.net.forward(x, training)
        if not np.all(np.isfinite(logits)):
            raise NumericError("non-finite logits")
        return logits

    __call__ = forward

    def backward(self, dlogits: np.ndarray) -> np.ndarray | None:
        dx = self.net.backward(np.asarray(dlogits, dtype=self.dtype))
        return None if dx is None else dx.transpose(0, 3, 1, 2)


# ---------------------------------------------------------------------------
# architectures

def small_cnn(class_count: int = 10, dtype=np.float32) -> Sequential:
    return Sequential(
        Conv2d(3, 32, dtype=dtype), BatchNorm2d(32, dtype=dtype), ReLU(), MaxPool2d(),
        Conv2d(32, 64, dtype=dtype), BatchNorm2d(64, dtype=dtype), ReLU(), MaxPool2d(),
        Conv2d(64, 128, dtype=dtype), BatchNorm2d(128, dtype=dtype), ReLU(), GlobalAvgPool(),
        Linear(128, class_count, dtype=dtype),
    )


def resnet18(class_count: int = 10, dtype=np.float32) -> Sequential:
    """18-layer residual network for 32x32 inputs (3x3 stem, no stem pooling)."""
    layers: list[Layer] = [Conv2d(3, 64, dtype=dtype), BatchNorm2d(64, dtype=dtype), ReLU()]
    in_ch = 64
    for width, stride in ((64, 1), (128, 2), (256, 2), (512, 2)):
        layers.append(ResidualBasicBlock(in_ch, width, stride, dtype=dtype))
        layers.append(ResidualBasicBlock(width, width, 1, dtype=dtype))
        in_ch = width
    layers += [GlobalAvgPool(), Linear(512, class_count, dtype=dtype)]
    return Sequential(*layers)


def he_init(model: Model, seed: int) -> None:
    """Normal(0, 2 / fan_in) weights, zero biases, unit BN scale, zero BN shift."""
    rng = substream(seed, "init")
    for _, layer in model.net.named_layers():
        if isinstance(layer, (Conv2d, Linear)):
            w = layer.params["weight"]
            layer.params["weight"] = rng.normal(0.0, np.sqrt(2.0 / layer.fan_in), size=w.shape).astype(model.dtype)
            if "bias" in layer.params:
                layer.params["bias"] = np.zeros_like(layer.params["bias"])
        elif isinstance(layer, BatchNorm2d):
            layer.params["weight"] = np.ones(layer.ch, dtype=model.dtype)
            layer.params["bias"] = np.zeros(layer.ch, dtype=model.dtype)
            layer.buffers["running_mean"] = np.zeros(layer.ch, dtype=model.dtype)
            layer.buffers["running_var"] = np.ones(layer.ch, dtype=model.dtype)


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    factory = small_cnn if config.variant == "small_cnn" else resnet18
    model = Model(factory(config.class_count, dtype=dtype), dtype=dtype)
    he_init(model, seed)
    return model


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    return build_model(config, seed, dtype).state_dict()


# ---------------------------------------------------------------------------
# loss

def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient with respect to the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in 0..{k - 1}")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad.astype(logits.dtype)


def per_example_loss(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return -log_softmax(logits)[np.arange(len(labels)), labels]


def loss_and_grad(model: Model, batch: np.ndarray, labels: np.ndarray,
                  training: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    logits = model.forward(batch, training)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    model.backward(dlogits)
    return loss, model.grads
