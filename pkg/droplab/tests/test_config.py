import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import orjson

from droplab.app.config import Settings
from droplab.app.config_manager import config_bytes, config_from_text, load_config
from droplab.app.errors import ConfigError


class TestExperimentConfig(unittest.TestCase):
    def test_empty_object_gives_defaults(self):
        config = config_from_text("{}")
        self.assertEqual(config.dataset, "synthetic")
        self.assertEqual(config.arch, "lenet5")
        self.assertEqual(config.placement, "all")
        self.assertEqual(config.noise.rate, 0.35)
        self.assertEqual(config.train.epochs, 30)
        self.assertEqual(config.mc.k, 20)
        self.assertTrue(config.mc.epoch_eval)
        self.assertEqual(config.dissect.epsilon_mode, "relative")

    def test_unknown_nested_key_names_line(self):
        text = '{\n  "dataset": "synthetic",\n  "train": {\n    "epochs": 2,\n    "bogus": 1\n  }\n}'
        with self.assertRaises(ConfigError) as ctx:
            config_from_text(text, source="cfg.json")
        self.assertTrue(str(ctx.exception).startswith("cfg.json:5: train.bogus:"), str(ctx.exception))

    def test_unknown_top_level_key(self):
        with self.assertRaises(ConfigError) as ctx:
            config_from_text('{\n  "epochs": 3\n}', source="cfg.json")
        self.assertIn("cfg.json:2: epochs:", str(ctx.exception))

    def test_out_of_range_value(self):
        with self.assertRaises(ConfigError) as ctx:
            config_from_text('{"noise": {"rate": 1.5}}', source="cfg.json")
        self.assertIn("noise.rate", str(ctx.exception))

    def test_bad_placement(self):
        with self.assertRaises(ConfigError) as ctx:
            config_from_text('{"placement": "everywhere"}', source="cfg.json")
        self.assertIn("unknown placement", str(ctx.exception))
        self.assertEqual(config_from_text('{"placement": " Custom:1010 "}').placement, "custom:1010")

    def test_invalid_json(self):
        with self.assertRaises(ConfigError) as ctx:
            config_from_text('{\n  "dataset": "synthetic",\n  "train": \n}', source="cfg.json")
        self.assertTrue(str(ctx.exception).startswith("cfg.json:"))
        self.assertIn("invalid JSON", str(ctx.exception))

    def test_file_round_trip(self):
        config = config_from_text('{"arch": "convnet", "noise": {"kind": "asymmetric", "flip_map": {"1": 2}}}')
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "cfg.json"
            path.write_bytes(config_bytes(config))
            self.assertEqual(load_config(path), config)
            self.assertEqual(orjson.loads(path.read_bytes())["arch"], "convnet")
            with self.assertRaises(ConfigError):
                load_config(Path(tmp) / "missing.json")

    def test_shipped_configs_parse(self):
        configs = sorted((Path(__file__).resolve().parents[2] / "configs").glob("*.json"))
        self.assertTrue(configs)
        for path in configs:
            config = load_config(path)
            self.assertTrue(config.output.dir.startswith("runs/"), path)


class TestSettings(unittest.TestCase):
    def test_environment_overrides(self):
        with patch.dict(os.environ, {"DROPLAB_THREADS": "3", "DROPLAB_LOG_LEVEL": "DEBUG"}):
            settings = Settings()
        self.assertEqual(settings.THREADS, 3)
        self.assertEqual(settings.LOG_LEVEL, "DEBUG")

    def test_default_threads_positive(self):
        self.assertGreaterEqual(Settings().THREADS, 1)


if __name__ == '__main__':
    unittest.main()
