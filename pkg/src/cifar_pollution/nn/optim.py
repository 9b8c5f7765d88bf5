"""SGD with momentum and L2 weight decay at a fixed learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError


@dataclass
class OptimState:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def hyperparams(self) -> dict:
        return {"learning_rate": self.learning_rate, "momentum": self.momentum,
                "weight_decay": self.weight_decay}


def sgd_step(optim: OptimState, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """In-place update: ``v = momentum * v + (g + wd * p)``; ``p -= lr * v``."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        step = g + optim.weight_decay * p if optim.weight_decay else g
        v = optim.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = optim.momentum * v + step if optim.momentum else step
        optim.velocity[name] = np.asarray(v, dtype=p.dtype)
        p -= np.asarray(optim.learning_rate * v, dtype=p.dtype)
    return params
