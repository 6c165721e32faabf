"""Mini-batch SGD with classical momentum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class SgdState:
    """Optimizer state; velocity buffers persist across steps.

    Update rule per parameter: v <- momentum * v - learning_rate * g,
    then w <- w + v.
    """

    learning_rate: float
    momentum: float = 0.0
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_step(state: SgdState, params: dict) -> None:
    """Update every parameter in place from its populated gradient."""
    for name, p in params.items():
        if not isinstance(p, Tensor):
            raise ShapeError(f"parameter {name!r} is not a Tensor")
        if p.grad is None:
            raise ShapeError(f"missing gradient for parameter {name!r}")
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape} for {name!r}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.momentum * v - state.learning_rate * p.grad
        state.velocity[name] = v
        p.data += v
