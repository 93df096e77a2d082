"""
Label-noise generation and auditing.

Transition matrices follow the row convention: entry [i, j] is the probability
that true label i is observed as j.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError
from .models import CorruptionManifest

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12

# Class-dependent flips commonly used for asymmetric noise benchmarks
MNIST_FLIP_MAP: Dict[int, int] = {7: 1, 2: 7, 5: 6, 6: 5, 3: 8}
CIFAR10_FLIP_MAP: Dict[int, int] = {9: 1, 2: 0, 3: 5, 5: 3, 4: 7}


def _check_rate(rate: float) -> float:
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"noise rate must lie in [0, 1), got {rate}", key="noise.rate")
    return float(rate)


@dataclass(frozen=True)
class TransitionMatrix:
    entries: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.entries, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ConfigError(f"transition matrix must be square, got shape {t.shape}")
        if (t < 0).any() or (t > 1).any():
            raise ConfigError("transition matrix entries must lie in [0, 1]")
        worst = np.abs(t.sum(axis=1) - 1.0).max() if t.size else 0.0
        if worst > ROW_SUM_TOL:
            raise ConfigError(f"transition matrix rows must sum to 1 (worst deviation {worst:.3g})")
        object.__setattr__(self, "entries", t)

    @property
    def c(self) -> int:
        return self.entries.shape[0]


def symmetric_matrix(c: int, rate: float) -> TransitionMatrix:
    if c < 2:
        raise ConfigError(f"symmetric noise needs at least 2 classes, got {c}")
    rate = _check_rate(rate)
    t = np.full((c, c), rate / (c - 1))
    np.fill_diagonal(t, 1.0 - rate)
    return TransitionMatrix(t)


def pair_flip_map(c: int) -> Dict[int, int]:
    return {k: (k + 1) % c for k in range(c)}


def _check_flip_map(c: int, flip_map: Mapping[int, int]) -> Dict[int, int]:
    clean = {}
    for src, dst in flip_map.items():
        src, dst = int(src), int(dst)
        if src == dst:
            raise ConfigError(f"flip map sends class {src} to itself", key="noise.flip_map")
        if not (0 <= src < c and 0 <= dst < c):
            raise ConfigError(f"flip {src}->{dst} outside [0, {c})", key="noise.flip_map")
        clean[src] = dst
    return clean


def resolve_flip_map(value, c: int) -> Dict[int, int]:
    """Config form of noise.flip_map: 'pair', 'mnist', 'cifar10' or an explicit mapping."""
    if isinstance(value, str):
        presets = {"mnist": MNIST_FLIP_MAP, "cifar10": CIFAR10_FLIP_MAP}
        if value == "pair":
            return pair_flip_map(c)
        if value not in presets:
            raise ConfigError(f"unknown flip map preset {value!r}", key="noise.flip_map")
        return _check_flip_map(c, presets[value])
    return _check_flip_map(c, value)


def asymmetric_matrix(c: int, flip_map: Mapping[int, int], rate: float) -> TransitionMatrix:
    rate = _check_rate(rate)
    flips = _check_flip_map(c, flip_map)
    t = np.eye(c)
    for src, dst in flips.items():
        t[src, src] = 1.0 - rate
        t[src, dst] = rate
    return TransitionMatrix(t)


@dataclass
class CorruptionRecord:
    noisy_labels: np.ndarray
    corrupted_mask: np.ndarray
    target_rate: float
    seed: int
    scheme: str = "exact"
    original_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
        self.corrupted_mask = np.asarray(self.corrupted_mask, dtype=bool)
        if self.noisy_labels.shape != self.corrupted_mask.shape:
            raise DataError("noisy labels and corruption mask differ in length")

    def __len__(self) -> int:
        return int(self.noisy_labels.shape[0])


def _record(original: np.ndarray, noisy: np.ndarray, rate: float, seed: int, scheme: str) -> CorruptionRecord:
    return CorruptionRecord(
        noisy_labels=noisy,
        corrupted_mask=noisy != original,
        target_rate=rate,
        seed=seed,
        scheme=scheme,
        original_labels=original.copy(),
    )


def exact_count(rate: float, n: int) -> int:
    # 0.35 * 10000 is not exact in binary; the slack keeps floor() on the intended integer
    return int(math.floor(rate * n + 1e-9))


def corrupt_exact_fraction(labels, c: int, rate: float, seed: int) -> CorruptionRecord:
    """
    Corrupt exactly floor(rate * n) labels, chosen uniformly without replacement;
    each chosen label moves to one of the other c - 1 classes uniformly.
    """
    rate = _check_rate(rate)
    original = np.asarray(labels, dtype=np.int64)
    n = original.shape[0]
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=exact_count(rate, n), replace=False)
    offsets = rng.integers(1, c, size=chosen.shape[0])
    noisy = original.copy()
    noisy[chosen] = (original[chosen] + offsets) % c
    return _record(original, noisy, rate, seed, "exact")


def corrupt_exact_flip(labels, flip_map: Mapping[int, int], c: int, rate: float, seed: int) -> CorruptionRecord:
    """Asymmetric counterpart: floor(rate * m) of the m flippable labels go through flip_map."""
    rate = _check_rate(rate)
    flips = _check_flip_map(c, flip_map)
    original = np.asarray(labels, dtype=np.int64)
    eligible = np.flatnonzero(np.isin(original, list(flips)))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(eligible, size=exact_count(rate, eligible.shape[0]), replace=False)
    noisy = original.copy()
    lookup = np.arange(c)
    for src, dst in flips.items():
        lookup[src] = dst
    noisy[chosen] = lookup[original[chosen]]
    return _record(original, noisy, rate, seed, "exact-flip")


def corrupt_by_matrix(labels, t: TransitionMatrix, seed: int) -> CorruptionRecord:
    """Resample every label independently from its row of t."""
    original = np.asarray(labels, dtype=np.int64)
    if original.size and (original.min() < 0 or original.max() >= t.c):
        raise ConfigError(f"labels must lie in [0, {t.c}) for a {t.c}x{t.c} transition matrix")
    cumulative = np.cumsum(t.entries, axis=1)
    cumulative[:, -1] = 1.0
    u = np.random.default_rng(seed).random(original.shape[0])
    noisy = (u[:, None] < cumulative[original]).argmax(axis=1).astype(np.int64)
    off_diagonal = 1.0 - np.diag(t.entries)
    return _record(original, noisy, float(off_diagonal.mean()), seed, "matrix")


def empirical_noise_rate(record: CorruptionRecord) -> float:
    if record.corrupted_mask.size == 0:
        return 0.0
    return float(record.corrupted_mask.mean())


def flip_uniformity_pvalue(original, record: CorruptionRecord, c: int) -> float:
    """
    Chi-square p-value for "corrupted labels land on the other classes uniformly".

    Counts the offset (noisy - original) mod c over corrupted samples; under
    uniform flipping the offsets 1..c-1 are equally likely.
    """
    original = np.asarray(original, dtype=np.int64)
    mask = record.corrupted_mask
    if not mask.any():
        return 1.0
    offsets = (record.noisy_labels[mask] - original[mask]) % c
    counts = np.bincount(offsets, minlength=c)[1:]
    return float(stats.chisquare(counts).pvalue)


def manifest_from_record(record: CorruptionRecord, num_classes: int) -> CorruptionManifest:
    return CorruptionManifest(
        seed=record.seed,
        rate=record.target_rate,
        scheme=record.scheme,
        num_classes=num_classes,
        n=len(record),
        empirical_rate=empirical_noise_rate(record),
        noisy_labels=record.noisy_labels.tolist(),
        corrupted_mask=record.corrupted_mask.tolist(),
    )


def record_from_manifest(manifest: CorruptionManifest, original_labels=None) -> CorruptionRecord:
    """Rebuild a record; when original labels are given the mask is checked against them."""
    if len(manifest.noisy_labels) != manifest.n or len(manifest.corrupted_mask) != manifest.n:
        raise DataError(f"manifest declares n={manifest.n} but lists {len(manifest.noisy_labels)} labels "
                        f"and {len(manifest.corrupted_mask)} mask entries")
    record = CorruptionRecord(
        noisy_labels=np.asarray(manifest.noisy_labels, dtype=np.int64),
        corrupted_mask=np.asarray(manifest.corrupted_mask, dtype=bool),
        target_rate=manifest.rate,
        seed=manifest.seed,
        scheme=manifest.scheme,
    )
    if original_labels is not None:
        original = np.asarray(original_labels, dtype=np.int64)
        if original.shape != record.noisy_labels.shape:
            raise DataError(f"manifest covers {len(record)} labels, dataset has {original.shape[0]}")
        if not np.array_equal(record.corrupted_mask, record.noisy_labels != original):
            raise DataError("manifest mask disagrees with the dataset's labels")
        record.original_labels = original.copy()
    return record
