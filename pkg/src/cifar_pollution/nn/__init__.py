"""Minimal numpy layer core: convolution, batch norm, pooling, residual blocks, SGD."""

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
from .model import (
    Model,
    ModelConfig,
    build_model,
    he_init,
    init_params,
    loss_and_grad,
    resnet18,
    small_cnn,
    softmax,
    softmax_cross_entropy,
)
from .optim import OptimState, sgd_step

__all__ = [
    "BatchNorm2d", "Conv2d", "GlobalAvgPool", "Layer", "Linear", "MaxPool2d", "ReLU",
    "ResidualBasicBlock", "Sequential", "Model", "ModelConfig", "build_model", "he_init",
    "init_params", "loss_and_grad", "resnet18", "small_cnn", "softmax",
    "softmax_cross_entropy", "OptimState", "sgd_step",
]
