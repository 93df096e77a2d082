"""
Seeded experiment runner: load data, corrupt the training labels once, build the
model and train it with SGD while logging noisy-train and clean-test accuracy.

Every random source is a child of train.seed (see utils.derive_seed):
    "corruption"               label noise
    "init"                     weight initialization
    "shuffle-epoch", k         sample order of epoch k
    "dropout", k               dropout masks of epoch k
    "mc-eval", k               MC test evaluation after epoch k
Dataset contents never depend on train.seed.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .architectures import build_model
from .checkpoint import checkpoint_bytes
from .datasets import (LabeledDataset, Split, load_cifar10_binary, load_mnist_idx,
                       make_synthetic, take_subset)
from .errors import DataError
from .mc_infer import mc_classify
from .models import EpochLog, ExperimentConfig
from .nn import ExecutionMode, Network, backward, forward, predict_logits, softmax_cross_entropy
from .noise import (CorruptionRecord, asymmetric_matrix, corrupt_by_matrix, corrupt_exact_flip,
                    corrupt_exact_fraction, empirical_noise_rate, resolve_flip_map, symmetric_matrix)
from .optim import SGD
from .utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

# The training view of the experiment config file
TrainConfig = ExperimentConfig


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    network: Network
    epoch_logs: List[EpochLog]
    corruption: CorruptionRecord
    train_set: LabeledDataset  # carries the noisy labels
    test_set: LabeledDataset
    elapsed_s: float = field(default=0.0, compare=False)

    @property
    def checkpoint(self) -> bytes:
        return checkpoint_bytes(self.network)

    @property
    def final(self) -> EpochLog:
        return self.epoch_logs[-1]


def _require_files(config: ExperimentConfig, keys: List[str]) -> List[Path]:
    paths = []
    for key in keys:
        value = getattr(config.data, key)
        if not value:
            raise DataError(f"data.{key}: required for dataset '{config.dataset}' but not set")
        values = value if isinstance(value, list) else [value]
        for v in values:
            p = Path(v)
            if not p.is_file():
                raise DataError(f"data.{key}: file not found: {p}")
            paths.append(p)
    return paths


def load_datasets(config: ExperimentConfig) -> Tuple[LabeledDataset, LabeledDataset]:
    """(train, test) for config.dataset; missing inputs fail here, before any training."""
    if config.dataset == "mnist":
        _require_files(config, ["mnist_train_images", "mnist_train_labels",
                                "mnist_test_images", "mnist_test_labels"])
        d = config.data
        train = load_mnist_idx(d.mnist_train_images, d.mnist_train_labels, Split.TRAIN)
        test = load_mnist_idx(d.mnist_test_images, d.mnist_test_labels, Split.TEST)
    elif config.dataset == "cifar10":
        _require_files(config, ["cifar10_train", "cifar10_test"])
        train = load_cifar10_binary(config.data.cifar10_train, Split.TRAIN)
        test = load_cifar10_binary(config.data.cifar10_test, Split.TEST)
    else:
        s = config.synthetic
        train = make_synthetic(s.n_train, s.num_classes, s.image_shape, s.seed, Split.TRAIN)
        test = make_synthetic(s.n_test, s.num_classes, s.image_shape, s.seed, Split.TEST)
    if train.sample_shape != test.sample_shape or train.num_classes != test.num_classes:
        raise DataError(f"train images {train.sample_shape}/{train.num_classes} classes do not match "
                        f"test images {test.sample_shape}/{test.num_classes} classes")
    return take_subset(train, config.train.subset_size), test


def corrupt_labels(config: ExperimentConfig, dataset: LabeledDataset) -> CorruptionRecord:
    noise = config.noise
    c = dataset.num_classes
    seed = derive_seed(config.train.seed, "corruption")
    if noise.kind == "symmetric":
        if noise.scheme == "exact":
            return corrupt_exact_fraction(dataset.labels, c, noise.rate, seed)
        return corrupt_by_matrix(dataset.labels, symmetric_matrix(c, noise.rate), seed)
    flip_map = resolve_flip_map(noise.flip_map, c)
    if noise.scheme == "exact":
        return corrupt_exact_flip(dataset.labels, flip_map, c, noise.rate, seed)
    return corrupt_by_matrix(dataset.labels, asymmetric_matrix(c, flip_map, noise.rate), seed)


def evaluate_deterministic(net: Network, dataset: LabeledDataset, batch_size: int = 64) -> float:
    """Eval-mode argmax accuracy against dataset.labels."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    logits = predict_logits(net, dataset.images, batch_size)
    return float((logits.argmax(axis=1) == dataset.labels).mean())


def train_epoch(net: Network, dataset: LabeledDataset, optimizer: SGD, rng: np.random.Generator,
                batch_size: int = 64, *, dropout_rng: Optional[np.random.Generator] = None,
                eval_batch: int = 64) -> Tuple[Network, float, float]:
    """
    One pass over dataset in a seeded random order.

    Returns (net, mean loss, train accuracy); train accuracy is measured in Eval
    mode after the pass against dataset.labels, i.e. the noisy labels.
    """
    n = len(dataset)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    dropout_rng = dropout_rng or rng
    order = rng.permutation(n)
    total_loss = 0.0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        logits, cache = forward(net, dataset.images[idx], dropout_rng, mode=ExecutionMode.TRAIN)
        loss, grad = softmax_cross_entropy(logits, dataset.labels[idx])
        optimizer.step(net, backward(net, cache, grad))
        total_loss += loss * idx.shape[0]
    return net, total_loss / n, evaluate_deterministic(net, dataset, eval_batch)


def run_experiment(config: TrainConfig, corruption: Optional[CorruptionRecord] = None,
                   datasets: Optional[Tuple[LabeledDataset, LabeledDataset]] = None) -> ExperimentResult:
    """
    load data -> corrupt labels -> build model -> train epochs.

    A corruption record can be passed in so several runs share one set of noisy
    labels; datasets, when given, must be what load_datasets(config) returns.
    """
    started = time.monotonic()
    seed = config.train.seed
    train_clean, test = datasets or load_datasets(config)
    if corruption is None:
        corruption = corrupt_labels(config, train_clean)
    elif len(corruption) != len(train_clean):
        raise DataError(f"corruption record covers {len(corruption)} labels, training set has {len(train_clean)}")
    train = train_clean.with_labels(corruption.noisy_labels)
    logger.info(f"Training set: {len(train)} samples, {empirical_noise_rate(corruption):.4f} labels corrupted "
                f"({corruption.scheme}); test set: {len(test)} samples")

    placement = config.placement_spec()
    net = build_model(config.arch_spec(train.num_classes, train.sample_shape), placement, derive_seed(seed, "init"))
    optimizer = SGD(config.train.lr, config.train.momentum)
    cfg = config.train

    logs: List[EpochLog] = []
    for epoch in range(1, cfg.epochs + 1):
        net, loss, train_acc = train_epoch(
            net, train, optimizer, make_rng(seed, "shuffle-epoch", epoch), cfg.batch,
            dropout_rng=make_rng(seed, "dropout", epoch), eval_batch=cfg.eval_batch,
        )
        test_acc = evaluate_deterministic(net, test, cfg.eval_batch)
        test_acc_mc = None
        if net.has_dropout() and (config.mc.epoch_eval or epoch == cfg.epochs):
            test_acc_mc = mc_classify(net, test, config.mc.k, derive_seed(seed, "mc-eval", epoch), cfg.eval_batch)
        logs.append(EpochLog(epoch=epoch, train_acc=train_acc, test_acc=test_acc, loss=loss, test_acc_mc=test_acc_mc))
        mc_note = f", test_acc_mc={test_acc_mc:.4f}" if test_acc_mc is not None else ""
        logger.info(f"[{config.arch}/{placement.label}] epoch {epoch}/{cfg.epochs}: loss={loss:.4f}, "
                    f"train_acc={train_acc:.4f}, test_acc={test_acc:.4f}{mc_note}")

    return ExperimentResult(
        config=config,
        network=net,
        epoch_logs=logs,
        corruption=corruption,
        train_set=train,
        test_set=test,
        elapsed_s=time.monotonic() - started,
    )
