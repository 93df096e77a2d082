"""
K-pass Monte Carlo dropout inference.

Each pass keeps dropout sampling on (MC_SAMPLE mode) and is softmaxed; the
passes are summarized into mean and population std of the class probabilities,
the variation ratio and the predictive entropy.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
from scipy.special import entr

from .datasets import LabeledDataset
from .errors import ConfigError, DataError
from .nn import DTYPE, ExecutionMode, Network, forward, softmax
from .reports import write_csv
from .utils import derive_seed, parallel_map

logger = logging.getLogger(__name__)


@dataclass
class PredictiveDistribution:
    """Batched: row j describes sample j. Shapes (n, c), (n, c), (n,), (n,), (n, K)."""
    mean_probs: np.ndarray
    std_probs: np.ndarray
    variation_ratio: np.ndarray
    entropy: np.ndarray
    k: int
    pass_argmax: np.ndarray

    def __len__(self) -> int:
        return int(self.mean_probs.shape[0])

    @property
    def predictions(self) -> np.ndarray:
        return self.mean_probs.argmax(axis=1)


def _check_k(k: int) -> int:
    if int(k) < 1:
        raise ConfigError(f"number of MC passes must be >= 1, got {k}", key="mc.k")
    return int(k)


def summarize_passes(pass_probs) -> PredictiveDistribution:
    """
    Summarize stored per-pass probabilities of shape (K, n, c) (or (K, c) for one sample).

    The mean is taken as pass0 + mean(pass_k - pass0), so K identical passes give
    back pass0 exactly. Pass order only matters through pass0, whose deviations
    cancel in exact arithmetic.
    """
    probs = np.asarray(pass_probs, dtype=DTYPE)
    if probs.ndim == 2:
        probs = probs[:, None, :]
    if probs.ndim != 3 or probs.shape[0] < 1:
        raise ConfigError(f"expected per-pass probabilities of shape (K, n, c), got {probs.shape}")
    k, n, c = probs.shape
    base = probs[0]
    deviations = probs - base
    mean_probs = base + deviations.mean(axis=0)
    std_probs = deviations.std(axis=0)

    pass_argmax = probs.argmax(axis=2).T  # (n, K)
    counts = np.zeros((n, c), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(n), k), pass_argmax.ravel()), 1)
    variation_ratio = 1.0 - counts.max(axis=1) / k
    entropy = entr(mean_probs).sum(axis=1)
    return PredictiveDistribution(mean_probs, std_probs, variation_ratio, entropy, k, pass_argmax)


def mc_pass_probs(net: Network, x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """(K, n, c) softmax outputs; every pass owns a seed drawn up front, so passes may run in any order."""
    k = _check_k(k)
    if not net.has_dropout():
        out, _ = forward(net, x, mode=ExecutionMode.EVAL)
        return np.repeat(softmax(out)[None], k, axis=0)
    seeds = rng.integers(0, 2 ** 63 - 1, size=k)

    def one_pass(seed) -> np.ndarray:
        out, _ = forward(net, x, np.random.default_rng(int(seed)), mode=ExecutionMode.MC_SAMPLE)
        return softmax(out)

    return np.stack(parallel_map(one_pass, seeds))


def mc_predict(net: Network, x: np.ndarray, k: int, rng: np.random.Generator) -> PredictiveDistribution:
    return summarize_passes(mc_pass_probs(net, x, k, rng))


def mc_predict_dataset(net: Network, dataset: LabeledDataset, k: int, seed: int,
                       batch_size: int = 64) -> PredictiveDistribution:
    """Batched mc_predict; batch b draws from derive_seed(seed, "mc", b)."""
    k = _check_k(k)
    n = len(dataset)
    if n == 0:
        raise DataError("MC prediction needs a non-empty dataset")
    parts: List[PredictiveDistribution] = []
    for b, start in enumerate(range(0, n, batch_size)):
        rng = np.random.default_rng(derive_seed(seed, "mc", b))
        parts.append(mc_predict(net, dataset.images[start:start + batch_size], k, rng))
        logger.debug(f"MC batch {b}: {start}..{min(start + batch_size, n)} of {n}")
    return PredictiveDistribution(
        mean_probs=np.concatenate([p.mean_probs for p in parts]),
        std_probs=np.concatenate([p.std_probs for p in parts]),
        variation_ratio=np.concatenate([p.variation_ratio for p in parts]),
        entropy=np.concatenate([p.entropy for p in parts]),
        k=k,
        pass_argmax=np.concatenate([p.pass_argmax for p in parts]),
    )


def mc_classify(net: Network, dataset: LabeledDataset, k: int, seed: int, batch_size: int = 64) -> float:
    """Clean-label accuracy of argmax(mean_probs)."""
    dist = mc_predict_dataset(net, dataset, k, seed, batch_size)
    return float((dist.predictions == dataset.labels).mean())


def write_uncertainty_csv(path: Union[str, Path], dist: PredictiveDistribution) -> Path:
    predictions = dist.predictions
    max_prob = dist.mean_probs.max(axis=1)
    return write_csv(path, ["sample_index", "argmax", "variation_ratio", "entropy", "max_mean_prob"],
                     ([j, int(predictions[j]), float(dist.variation_ratio[j]), float(dist.entropy[j]),
                       float(max_prob[j])] for j in range(len(dist))))
