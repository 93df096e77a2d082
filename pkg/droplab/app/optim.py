from typing import Dict

import numpy as np

from .errors import ConfigError, DropLabError, ShapeError
from .nn import Gradients, Network, ParamKey


class SGD:
    """
    SGD with heavy-ball momentum: v <- momentum*v + grad, w <- w - lr*v.

    Velocity state lives here, keyed by (layer index, parameter name); parameters
    are updated in place.
    """

    def __init__(self, learning_rate: float = 0.01, momentum: float = 0.9):
        if learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {learning_rate}", key="train.lr")
        if not (0.0 <= momentum < 1.0):
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}", key="train.momentum")
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocity: Dict[ParamKey, np.ndarray] = {}

    def step(self, net: Network, grads: Gradients) -> Network:
        for key, param in net.parameters():
            g = grads.get(key)
            if g is None:
                raise DropLabError(f"no gradient for parameter {key}; gradients belong to another network")
            if g.shape != param.shape:
                raise ShapeError(key[0], f"gradient {key[1]} has shape {g.shape}, parameter has {param.shape}")
            v = self.velocity.get(key)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[key] = v
            param -= self.learning_rate * v
        return net
