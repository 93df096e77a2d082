import unittest

import numpy as np

from droplab.app.architectures import Arch, ArchSpec, DropoutPlacement, build_model
from droplab.app.datasets import LabeledDataset, make_synthetic
from droplab.app.dissect import (ActivationCapture, LayerCapture, capture_activations, dissection_report,
                                 gamut_histogram, layer_histograms, layer_volatility, mean_map_activation,
                                 report_from_capture, resolve_epsilon, top_neuron_heatmaps, unresponsive_ratio)
from droplab.app.errors import ConfigError, DataError
from droplab.app.nn import Conv2d, Dense, Dropout, Flatten, Network, ReLU, forward


def _small_net(rate=None, seed=0):
    layers = [Conv2d(2, 3), ReLU()]
    if rate is not None:
        layers.append(Dropout(rate))
    layers += [Flatten(), Dense(3)]
    return Network(layers=layers, input_shape=(1, 5, 5)).initialize(np.random.default_rng(seed))


def _data(n=5, seed=0):
    images = np.random.default_rng(seed).random((n, 1, 5, 5))
    return LabeledDataset(images, np.arange(n) % 3, 3)


class TestGamutStatistics(unittest.TestCase):
    def test_mean_map_activation(self):
        self.assertEqual(mean_map_activation([[0, 1], [2, 3]]), 1.5)
        self.assertEqual(mean_map_activation(np.zeros((4, 4))), 0.0)
        self.assertEqual(mean_map_activation([[2.5]]), 2.5)
        u = np.random.default_rng(0).normal(size=(7, 7))
        total = 0.0
        for r in range(7):
            for c in range(7):
                total += u[r, c]
        self.assertAlmostEqual(mean_map_activation(u), total / 49, delta=1e-12)
        with self.assertRaises(DataError):
            mean_map_activation(np.zeros((0, 3)))

    def test_layer_volatility(self):
        self.assertEqual(layer_volatility([[1.0, 1.0], [0.0, 2.0]]), (1.0, 0.5))
        self.assertEqual(layer_volatility([[3.0, 3.0, 3.0]]), (3.0, 0.0))

    def test_volatility_matches_loops(self):
        rows = np.random.default_rng(1).normal(size=(6, 11))
        means, stds = [], []
        for row in rows:
            m = sum(row) / len(row)
            means.append(m)
            stds.append((sum((v - m) ** 2 for v in row) / len(row)) ** 0.5)
        v, s = layer_volatility(rows)
        self.assertAlmostEqual(v, sum(means) / 6, delta=1e-12)
        self.assertAlmostEqual(s, sum(stds) / 6, delta=1e-12)

    def test_unresponsive_ratio(self):
        count, total, ratio = unresponsive_ratio([[0.0], [0.5], [0.001]], 0.01)
        self.assertEqual((count, total), (2, 3))
        self.assertEqual(ratio, 2 / 3)
        self.assertEqual(unresponsive_ratio([[0.5], [-0.7]], 0.01).count, 0)
        with self.assertRaises(ConfigError):
            unresponsive_ratio([[0.0]], 0.0)

    def test_unresponsive_ratio_grows_with_epsilon(self):
        rows = np.random.default_rng(2).normal(size=(20, 4))
        ratios = [unresponsive_ratio(rows, eps).ratio for eps in (0.01, 0.1, 0.5, 1.0, 5.0)]
        self.assertEqual(ratios, sorted(ratios))
        self.assertEqual(ratios[-1], 1.0)

    def test_histograms(self):
        edges, counts = gamut_histogram([0.0, 1.0, 2.0, 3.0], bins=2)
        self.assertEqual(counts.tolist(), [2, 2])
        self.assertEqual(edges.tolist(), [0.0, 1.5, 3.0])
        _, counts = gamut_histogram([4.0] * 9, bins=30)
        self.assertEqual(np.count_nonzero(counts), 1)
        values = np.random.default_rng(0).normal(size=57)
        self.assertEqual(gamut_histogram(values, bins=7)[1].sum(), 57)
        with self.assertRaises(DataError):
            gamut_histogram([], bins=3)


class TestCapture(unittest.TestCase):
    def test_eval_capture_matches_brute_force(self):
        net = _small_net()
        data = _data()
        report = dissection_report(net, data, k=1, epsilon=0.05, epsilon_mode="absolute", capture_mode="eval")
        _, cache = forward(net, data.images)
        conv = cache.outputs[1]
        logits = cache.outputs[3]
        gamuts = {
            "conv0": [[sum(conv[j, i].ravel()) / 9 for j in range(5)] for i in range(2)],
            "fc1": [[logits[j, i] for j in range(5)] for i in range(3)],
        }
        self.assertEqual([s.layer for s in report.layers], ["conv0", "fc1"])
        for stats in report.layers:
            rows = gamuts[stats.layer]
            means = [sum(r) / len(r) for r in rows]
            stds = [(sum((v - m) ** 2 for v in r) / len(r)) ** 0.5 for r, m in zip(rows, means)]
            self.assertEqual(stats.neurons, len(rows))
            self.assertAlmostEqual(stats.activation_mean, sum(means) / len(means), delta=1e-10)
            self.assertAlmostEqual(stats.activation_std, sum(stds) / len(stds), delta=1e-10)
            self.assertEqual(stats.unresponsive_count, sum(abs(m) <= 0.05 for m in means))
            self.assertEqual(stats.unresponsive_ratio * stats.neurons, stats.unresponsive_count)

    def test_relu_layers_are_non_negative(self):
        net = build_model(ArchSpec(Arch.LENET5, 3, (1, 16, 16)), DropoutPlacement.parse("all"), 0)
        data = make_synthetic(12, 3, (1, 16, 16), seed=0)
        capture = capture_activations(net, data, 3, seed=1, full_maps=False, batch_size=5)
        self.assertEqual(list(capture.layers), ["conv0", "conv1", "fc1", "fc2", "fc3"])
        for name in ("conv0", "conv1", "fc1", "fc2"):
            self.assertGreaterEqual(capture.layers[name].means.min(), 0.0)
        report = report_from_capture(capture, 0.01)
        for stats in report.layers[:-1]:
            self.assertGreaterEqual(stats.activation_mean, 0.0)

    def test_zero_weights_make_every_neuron_unresponsive(self):
        net = _small_net()
        for _, p in net.parameters():
            p[...] = 0.0
        report = dissection_report(net, _data(), k=1, epsilon=0.01, capture_mode="eval")
        for stats in report.layers:
            self.assertEqual(stats.activation_mean, 0.0)
            self.assertEqual(stats.activation_std, 0.0)
            self.assertEqual(stats.unresponsive_ratio, 1.0)

    def test_constant_logits_have_zero_spread(self):
        net = _small_net()
        net.layers[3].params["weight"][...] = 0.0
        net.layers[3].params["bias"][...] = 2.0
        report = dissection_report(net, _data(), k=1, epsilon=0.01, capture_mode="eval")
        fc = report.layers[-1]
        self.assertEqual(fc.activation_std, 0.0)
        self.assertEqual(fc.activation_mean, 2.0)

    def test_mc_capture_is_seeded(self):
        net = _small_net(0.5)
        a = capture_activations(net, _data(9), 4, seed=3, batch_size=4)
        b = capture_activations(net, _data(9), 4, seed=3, batch_size=4)
        self.assertEqual(a.k, 4)
        self.assertEqual(a.mode, "mc")
        for name in a.layers:
            self.assertTrue(np.array_equal(a.layers[name].means, b.layers[name].means))

    def test_zero_rate_mc_capture_equals_eval(self):
        net = _small_net(0.0)
        mc = capture_activations(net, _data(), 6, seed=0)
        ev = capture_activations(net, _data(), 6, seed=0, capture_mode="eval")
        self.assertEqual(ev.k, 1)
        for name in mc.layers:
            self.assertTrue(np.array_equal(mc.layers[name].means, ev.layers[name].means))

    def test_capture_errors(self):
        net = _small_net()
        with self.assertRaises(ConfigError):
            capture_activations(net, _data(), 2, capture_mode="bogus")
        with self.assertRaises(ConfigError):
            capture_activations(net, _data(), 2, map_images=[10])
        with self.assertRaises(DataError):
            capture_activations(net, LabeledDataset(np.zeros((0, 1, 5, 5)), np.zeros(0), 3), 2)

    def test_histograms_per_neuron(self):
        capture = capture_activations(_small_net(), _data(), 1, capture_mode="eval")
        hists = layer_histograms(capture, "conv0", bins=4)
        self.assertEqual([h[0] for h in hists], [0, 1])
        for _, edges, counts in hists:
            self.assertEqual(len(edges), 5)
            self.assertEqual(counts.sum(), 5)
        with self.assertRaises(ConfigError):
            layer_histograms(capture, "conv9")


class TestEpsilon(unittest.TestCase):
    def _capture(self, means):
        lc = LayerCapture("fc1", np.asarray(means, dtype=float), spatial=False, full_maps=False)
        return ActivationCapture({"fc1": lc}, k=1, mode="eval", n_images=len(means))

    def test_relative_scales_mean_magnitude(self):
        capture = self._capture([[1.0, -3.0], [1.0, -3.0]])
        self.assertEqual(resolve_epsilon(capture, 0.5, "relative"), 1.0)
        self.assertEqual(resolve_epsilon(capture, 0.5, "absolute"), 0.5)
        with self.assertRaises(ConfigError):
            resolve_epsilon(capture, 0.5, "percent")

    def test_report_records_threshold(self):
        report = report_from_capture(self._capture([[1.0, 0.0], [1.0, 0.0]]), 0.1)
        self.assertEqual(report.epsilon, 0.05)
        self.assertEqual(report.epsilon_setting, 0.1)
        self.assertEqual(report.layers[0].unresponsive_count, 1)


class TestHeatmaps(unittest.TestCase):
    def _capture(self):
        means = np.array([[0.1, 0.5, 0.5, 0.9, 0.0, 0.2],
                          [0.1, 0.5, 0.5, 0.9, 0.0, 0.2]])
        maps = {0: np.arange(24, dtype=float).reshape(6, 2, 2)}
        lc = LayerCapture("conv0", means, spatial=True, full_maps=True, maps=maps)
        fc = LayerCapture("fc1", means[:, :3], spatial=False, full_maps=False)
        return ActivationCapture({"conv0": lc, "fc1": fc}, k=1, mode="eval", n_images=2)

    def test_ranking_with_ties(self):
        export = top_neuron_heatmaps(self._capture(), "conv0", 0, top_n=3)
        self.assertEqual([i for i, _ in export.neurons], [3, 1, 2])
        self.assertEqual(export.gamut_means, [0.9, 0.5, 0.5])
        self.assertEqual(export.scale, (4.0, 15.0))

    def test_top_n_larger_than_layer(self):
        export = top_neuron_heatmaps(self._capture(), "conv0", 0, top_n=10)
        self.assertEqual(len(export.neurons), 6)

    def test_missing_maps(self):
        capture = self._capture()
        with self.assertRaises(ConfigError):
            top_neuron_heatmaps(capture, "fc1", 0)
        with self.assertRaises(ConfigError):
            top_neuron_heatmaps(capture, "conv0", 1)
        means_only = capture_activations(_small_net(), _data(), 1, capture_mode="eval", full_maps=False)
        with self.assertRaises(ConfigError):
            top_neuron_heatmaps(means_only, "conv0", 0)

    def test_ranking_ignores_later_layers(self):
        net = _small_net()
        data = _data()
        before = top_neuron_heatmaps(capture_activations(net, data, 1, capture_mode="eval"), "conv0", 0, 2)
        net.layers[3].params["weight"] *= 3.0
        after = top_neuron_heatmaps(capture_activations(net, data, 1, capture_mode="eval"), "conv0", 0, 2)
        self.assertEqual([i for i, _ in before.neurons], [i for i, _ in after.neurons])


if __name__ == '__main__':
    unittest.main()
