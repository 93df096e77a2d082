"""
Finite-difference gradient oracle for the engine.
Run before long experiments (`droplab selfcheck`) so a broken backward pass fails fast.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import InvariantError
from .nn import (Conv2d, Dense, Dropout, ExecutionMode, Flatten, MaxPool2d, Network, ParamKey, ReLU,
                 backward, forward, softmax_cross_entropy)
from .utils import derive_seed

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
REL_TOLERANCE = 1e-4
MAX_SELFCHECK_PARAMS = 200
# Below this magnitude the relative error is measured against the floor instead,
# so gradients that are ~0 are not judged on round-off alone.
REL_FLOOR = 1e-6


def numerical_gradients(loss_fn: Callable[[], float], arrays: Dict, h: float = FD_STEP) -> Dict:
    """
    Central differences (L(w+h) - L(w-h)) / 2h for every element of every array.
    Arrays are perturbed in place and restored.
    """
    out = {}
    for key, arr in arrays.items():
        grad = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            original = arr[i]
            arr[i] = original + h
            plus = loss_fn()
            arr[i] = original - h
            minus = loss_fn()
            arr[i] = original
            grad[i] = (plus - minus) / (2 * h)
        out[key] = grad
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), REL_FLOOR)
    return float((diff / scale).max()) if diff.size else 0.0


@dataclass
class GradCheckResult:
    name: str
    num_parameters: int
    max_rel_error: float
    worst: Optional[ParamKey]
    passed: bool


def check_network_gradients(net: Network, x: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
                            h: float = FD_STEP, tol: float = REL_TOLERANCE, name: str = "net") -> GradCheckResult:
    """
    Compare backward() with central differences of the mean cross-entropy.
    Dropout masks are drawn once in Train mode and then held fixed.
    """
    logits, cache = forward(net, x, rng, mode=ExecutionMode.TRAIN)
    masks = cache.masks
    _, grad = softmax_cross_entropy(logits, labels)
    analytic = backward(net, cache, grad)

    def loss() -> float:
        out, _ = forward(net, x, mode=ExecutionMode.TRAIN, masks=masks)
        return softmax_cross_entropy(out, labels)[0]

    params = dict(net.parameters())
    numeric = numerical_gradients(loss, params, h)
    worst_key, worst = None, 0.0
    for key in params:
        err = relative_error(analytic[key], numeric[key])
        if err > worst or worst_key is None:
            worst_key, worst = key, err
    return GradCheckResult(name, net.num_parameters(), worst, worst_key, worst < tol)


def random_small_network(rng: np.random.Generator) -> Tuple[Network, np.ndarray, np.ndarray]:
    """
    A random net of at most 3 parametrised layers and 200 parameters, with dropout,
    plus a small input batch and labels for it.
    """
    c = int(rng.integers(2, 5))
    batch = int(rng.integers(2, 5))
    if rng.random() < 0.5:
        d = int(rng.integers(3, 7))
        layers = [Dense(int(rng.integers(3, 7))), ReLU(), Dropout(0.3),
                  Dense(int(rng.integers(3, 7))), ReLU(), Dense(c)]
        input_shape: Tuple[int, ...] = (d,)
    else:
        layers = [Conv2d(2, 3), ReLU(), Dropout(0.25), MaxPool2d(2), Flatten(), Dense(c)]
        input_shape = (1, 6, 6)
    net = Network(layers=layers, input_shape=input_shape).initialize(rng)
    for _, p in net.parameters():
        p += rng.normal(0.0, 0.1, size=p.shape)  # non-zero biases too
    if net.num_parameters() > MAX_SELFCHECK_PARAMS:
        raise InvariantError(f"self-check network has {net.num_parameters()} parameters")
    x = rng.normal(0.0, 1.0, size=(batch,) + input_shape)
    labels = rng.integers(0, c, size=batch)
    return net, x, labels


def run_self_check(n_nets: int = 10, seed: int = 0, h: float = FD_STEP, tol: float = REL_TOLERANCE) -> List[GradCheckResult]:
    results = []
    for i in range(n_nets):
        rng = np.random.default_rng(derive_seed(seed, "selfcheck", i))
        net, x, labels = random_small_network(rng)
        desc = " -> ".join(layer.describe() for layer in net.layers)
        res = check_network_gradients(net, x, labels, rng, h, tol, name=f"net{i}")
        if res.passed:
            logger.info(f"✅ {res.name} ({res.num_parameters} params): max rel error {res.max_rel_error:.2e}")
        else:
            logger.error(f"❌ {res.name} ({res.num_parameters} params) [{desc}]: "
                         f"max rel error {res.max_rel_error:.2e} at {res.worst}")
        results.append(res)
    return results
