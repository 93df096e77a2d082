import unittest

import numpy as np

from droplab.app.datasets import LabeledDataset, make_synthetic
from droplab.app.errors import DataError
from droplab.app.models import ExperimentConfig
from droplab.app.nn import Dense, Flatten, Network, ReLU
from droplab.app.optim import SGD
from droplab.app.train import corrupt_labels, evaluate_deterministic, load_datasets, run_experiment, train_epoch


def small_config(**overrides) -> ExperimentConfig:
    raw = {
        "dataset": "synthetic",
        "synthetic": {"n_train": 60, "n_test": 30, "num_classes": 3, "image_shape": [1, 16, 16]},
        "noise": {"rate": 0.2},
        "train": {"epochs": 2, "batch": 16, "lr": 0.05, "seed": 1},
        "mc": {"k": 3},
    }
    raw.update(overrides)
    return ExperimentConfig.model_validate(raw)


class TestEvaluate(unittest.TestCase):
    def test_perfect_oracle(self):
        c = 4
        labels = np.arange(12) % c
        images = np.eye(c)[labels].reshape(12, 1, 1, c)
        net = Network(layers=[Flatten(), Dense(c)], input_shape=(1, 1, c)).initialize(np.random.default_rng(0))
        net.layers[1].params["weight"] = np.eye(c)
        net.layers[1].params["bias"] = np.zeros(c)
        self.assertEqual(evaluate_deterministic(net, LabeledDataset(images, labels, c)), 1.0)

    def test_zero_network_is_at_chance_on_balanced_data(self):
        data = make_synthetic(2000, 10, (1, 4, 4), seed=0)
        net = Network(layers=[Flatten(), Dense(10)], input_shape=(1, 4, 4)).initialize(np.random.default_rng(0))
        for _, p in net.parameters():
            p[...] = 0.0
        self.assertAlmostEqual(evaluate_deterministic(net, data), 0.1, delta=0.05)

    def test_empty_test_set(self):
        net = Network(layers=[Flatten(), Dense(3)], input_shape=(1, 2, 2)).initialize(np.random.default_rng(0))
        with self.assertRaises(DataError):
            evaluate_deterministic(net, LabeledDataset(np.zeros((0, 1, 2, 2)), np.zeros(0), 3))


class TestTrainEpoch(unittest.TestCase):
    def _net(self):
        return Network(layers=[Flatten(), Dense(8), ReLU(), Dense(3)], input_shape=(1, 4, 4)).initialize(
            np.random.default_rng(0))

    def test_zero_learning_rate(self):
        data = make_synthetic(20, 3, (1, 4, 4), seed=0)
        net = self._net()
        before = {k: p.copy() for k, p in net.parameters()}
        acc_before = evaluate_deterministic(net, data)
        _, _, acc = train_epoch(net, data, SGD(0.0, 0.9), np.random.default_rng(0), batch_size=8)
        for k, p in net.parameters():
            self.assertTrue(np.array_equal(p, before[k]))
        self.assertEqual(acc, acc_before)

    def test_memorizes_single_sample(self):
        data = make_synthetic(3, 3, (1, 4, 4), seed=0)
        single = LabeledDataset(data.images[:1], data.labels[:1], 3)
        net = self._net()
        opt = SGD(0.1, 0.9)
        rng = np.random.default_rng(0)
        for _ in range(30):
            _, loss, acc = train_epoch(net, single, opt, rng)
        self.assertEqual(acc, 1.0)
        self.assertLess(loss, 0.5)

    def test_empty_dataset(self):
        with self.assertRaises(DataError):
            train_epoch(self._net(), LabeledDataset(np.zeros((0, 1, 4, 4)), np.zeros(0), 3), SGD(),
                        np.random.default_rng(0))


class TestRunExperiment(unittest.TestCase):
    def test_one_log_per_epoch(self):
        result = run_experiment(small_config())
        self.assertEqual([log.epoch for log in result.epoch_logs], [1, 2])
        for log in result.epoch_logs:
            self.assertTrue(0.0 <= log.train_acc <= 1.0)
            self.assertTrue(0.0 <= log.test_acc <= 1.0)
        self.assertTrue(all(log.test_acc_mc is not None for log in result.epoch_logs))

    def test_reruns_are_identical(self):
        a = run_experiment(small_config())
        b = run_experiment(small_config())
        self.assertEqual(a.epoch_logs, b.epoch_logs)
        self.assertEqual(a.checkpoint, b.checkpoint)

    def test_no_dropout_means_no_mc_accuracy(self):
        result = run_experiment(small_config(placement="none", train={"epochs": 1, "seed": 1}))
        self.assertIsNone(result.final.test_acc_mc)

    def test_epoch_eval_off_keeps_mc_for_final_epoch_only(self):
        result = run_experiment(small_config(mc={"k": 2, "epoch_eval": False}))
        self.assertIsNone(result.epoch_logs[0].test_acc_mc)
        self.assertIsNotNone(result.final.test_acc_mc)

    def test_seed_changes_noise_and_weights_but_not_data(self):
        cfg1 = small_config(train={"epochs": 1, "seed": 1})
        cfg2 = small_config(train={"epochs": 1, "seed": 2})
        train1, test1 = load_datasets(cfg1)
        train2, test2 = load_datasets(cfg2)
        self.assertTrue(np.array_equal(train1.images, train2.images))
        self.assertTrue(np.array_equal(test1.labels, test2.labels))
        self.assertFalse(np.array_equal(corrupt_labels(cfg1, train1).corrupted_mask,
                                        corrupt_labels(cfg2, train2).corrupted_mask))
        self.assertNotEqual(run_experiment(cfg1).checkpoint, run_experiment(cfg2).checkpoint)

    def test_shared_corruption_is_used(self):
        cfg = small_config(train={"epochs": 1, "seed": 1})
        datasets = load_datasets(cfg)
        corruption = corrupt_labels(cfg, datasets[0])
        result = run_experiment(cfg, corruption, datasets)
        self.assertTrue(np.array_equal(result.train_set.labels, corruption.noisy_labels))
        self.assertEqual(int(corruption.corrupted_mask.sum()), 12)

    def test_missing_dataset_file(self):
        cfg = small_config(dataset="mnist", data={"mnist_train_images": "/nonexistent/train-images"})
        with self.assertRaises(DataError) as ctx:
            run_experiment(cfg)
        self.assertIn("data.mnist_train_images", str(ctx.exception))


if __name__ == '__main__':
    unittest.main()
