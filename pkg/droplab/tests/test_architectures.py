import unittest

import numpy as np

from droplab.app.architectures import (Arch, ArchSpec, DropoutPlacement, PlacementKind, build_model,
                                       dissection_sites, dropout_site_kinds, layer_inventory)
from droplab.app.errors import ConfigError
from droplab.app.nn import Dense, Dropout, Flatten, Network, ReLU, forward

LENET = ArchSpec(Arch.LENET5)
CONVNET = ArchSpec(Arch.CONVNET, 10, (3, 32, 32))


def _build(spec, placement, seed=0):
    return build_model(spec, DropoutPlacement.parse(placement), seed)


class TestPlacement(unittest.TestCase):
    def test_none_has_no_dropout(self):
        self.assertEqual(_build(LENET, "none").dropout_layers(), [])

    def test_all_puts_dropout_after_every_hidden_relu(self):
        net = _build(LENET, "all")
        drops = net.dropout_layers()
        self.assertEqual(len(drops), 4)
        for idx in drops:
            self.assertIsInstance(net.layers[idx - 1], ReLU)
        self.assertIsInstance(net.layers[-1], Dense)

    def test_rates_follow_layer_kind(self):
        net = build_model(LENET, DropoutPlacement.parse("all", p_conv=0.1, p_fc=0.4), 0)
        rates = [net.layers[i].rate for i in net.dropout_layers()]
        self.assertEqual(rates, [0.1, 0.1, 0.4, 0.4])

    def test_conv_only_and_fc_only(self):
        net = build_model(CONVNET, DropoutPlacement.parse("conv_only"), 0)
        flatten = next(i for i, layer in enumerate(net.layers) if isinstance(layer, Flatten))
        self.assertEqual(len(net.dropout_layers()), 4)
        self.assertTrue(all(i < flatten for i in net.dropout_layers()))
        net = _build(LENET, "fc_only")
        flatten = next(i for i, layer in enumerate(net.layers) if isinstance(layer, Flatten))
        self.assertEqual(len(net.dropout_layers()), 2)
        self.assertTrue(all(i > flatten for i in net.dropout_layers()))

    def test_internal_and_final(self):
        self.assertEqual(DropoutPlacement.parse("internal").site_mask(["conv"] * 4), [False, True, True, False])
        self.assertEqual(DropoutPlacement.parse("final").site_mask(["conv"] * 4), [False, False, False, True])

    def test_custom_mask(self):
        placement = DropoutPlacement.parse("custom:1010")
        self.assertEqual(placement.kind, PlacementKind.CUSTOM)
        self.assertEqual(placement.label, "custom:1010")
        net = build_model(LENET, placement, 0)
        self.assertEqual(len(net.dropout_layers()), 2)
        with self.assertRaises(ConfigError):
            build_model(LENET, DropoutPlacement.parse("custom:10"), 0)

    def test_bad_placement_text(self):
        for text in ("everywhere", "custom", "custom:12"):
            with self.assertRaises(ConfigError):
                DropoutPlacement.parse(text)

    def test_site_kinds(self):
        self.assertEqual(dropout_site_kinds(Arch.LENET5), ["conv", "conv", "fc", "fc"])
        self.assertEqual(dropout_site_kinds(Arch.CONVNET), ["conv"] * 4 + ["fc"] * 2)


class TestModels(unittest.TestCase):
    def test_lenet_inventory_and_output(self):
        net = _build(LENET, "all")
        self.assertEqual(layer_inventory(net), [("conv0", 6), ("conv1", 16), ("fc1", 120), ("fc2", 84), ("fc3", 10)])
        out, _ = forward(net, np.zeros((2, 1, 28, 28)))
        self.assertEqual(out.shape, (2, 10))

    def test_convnet_inventory_and_output(self):
        net = build_model(CONVNET, DropoutPlacement.parse("none"), 0)
        self.assertEqual(layer_inventory(net), [("conv0", 48), ("conv1", 96), ("conv2", 192), ("conv3", 256),
                                                ("fc1", 512), ("fc2", 128), ("fc3", 10)])
        out, _ = forward(net, np.zeros((1, 3, 32, 32)))
        self.assertEqual(out.shape, (1, 10))

    def test_empty_network_inventory(self):
        self.assertEqual(layer_inventory(Network(layers=[], input_shape=(3,))), [])

    def test_same_seed_same_weights_across_placements(self):
        a = _build(LENET, "none", seed=11)
        b = _build(LENET, "all", seed=11)
        c = _build(LENET, "none", seed=11)
        weights_a = [p for _, p in a.parameters()]
        for other in (b, c):
            weights = [p for _, p in other.parameters()]
            self.assertEqual(len(weights), len(weights_a))
            for wa, wo in zip(weights_a, weights):
                self.assertTrue(np.array_equal(wa, wo))

    def test_dissection_sites_capture_relu_outputs(self):
        net = _build(LENET, "all")
        sites = dissection_sites(net)
        self.assertEqual([name for name, _ in sites], ["conv0", "conv1", "fc1", "fc2", "fc3"])
        for name, idx in sites[:-1]:
            self.assertIsInstance(net.layers[idx], ReLU)
        self.assertEqual(sites[-1][1], len(net.layers) - 1)
        self.assertNotIsInstance(net.layers[sites[0][1]], Dropout)


if __name__ == '__main__':
    unittest.main()
