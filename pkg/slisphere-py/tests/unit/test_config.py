import os
import tempfile
import unittest
import numpy as np
from parameterized import parameterized

import slisphere as sls
from slisphere.config import (
    Config,
    format_config,
    load_config,
    parse_config,
    write_config,
)


class TestConfig(unittest.TestCase):
    def test_empty(self):
        self.assertEqual(parse_config(""), Config())
        self.assertEqual(parse_config("# nothing\n\n"), Config())

    def test_values(self):
        lines = [
            "geometry.H_cm = 10.5",
            "grid.input_n_side = 8",
            "grid.theta_max_deg = 45",
            "net.widths = 4, 8, 16",
            "projection.normalize = yes",
            "projection.centroid = center",
            "kernel.x_c = 0.0, 0.1, 0.0",
            "runtime.workers = 2",
        ]
        config = parse_config("\n".join(lines))
        self.assertEqual(config.geometry.H_cm, 10.5)
        self.assertEqual(config.geometry.d_mm, Config().geometry.d_mm)
        self.assertEqual(config.grid.input_n_side, 8)
        self.assertTrue(abs(config.grid.theta_max - np.pi / 4) < 1e-15)
        self.assertEqual(config.net.widths, (4, 8, 16))
        self.assertTrue(config.projection.normalize)
        self.assertEqual(config.projection.centroid, "center")
        self.assertEqual(config.kernel.x_c, (0.0, 0.1, 0.0))
        self.assertEqual(config.runtime.workers, 2)

    def test_shared_grid_keys(self):
        config = parse_config("grid.fodf_n_side = 2\ngrid.l_max = 4\n")
        self.assertEqual(config.net_params.fodf_n_side, 2)
        self.assertEqual(config.net_params.l_max, 4)
        self.assertEqual(config.solve_options.l_max, 4)
        self.assertEqual(config.net_params.theta_max, config.grid.theta_max)
        with self.assertRaises(sls.ConfigError):
            parse_config("net.l_max = 4")

    def test_base(self):
        base = parse_config("loss.lambda_s = 0.5")
        config = parse_config("loss.sigma_s = 0.2", base)
        self.assertEqual((config.loss.lambda_s, config.loss.sigma_s), (0.5, 0.2))

    @parameterized.expand(
        [
            ("unknown.key = 1",),
            ("grid.n_side = 4",),
            ("grid.input_n_side = four",),
            ("projection.normalize = maybe",),
            ("projection.centroid = brightest",),
            ("loss.sigma_s = 0",),
            ("runtime.workers = 0",),
            ("net.levels = 2",),
            ("no delimiter",),
        ]
    )
    def test_invalid(self, text):
        with self.assertRaises(sls.ConfigError):
            parse_config(text)

    def test_format_round_trip(self):
        config = parse_config("net.widths = 2, 2\nnet.levels = 2\nsynth.seed = 9")
        text = format_config(config)
        self.assertEqual(parse_config(text), config)
        self.assertIn("net.widths = 2, 2", text.splitlines())
        self.assertIn("geometry.H_cm = 13.0", text.splitlines())
        self.assertNotIn("net.l_max", text)

    def test_every_default_listed(self):
        keys = [
            line.partition("=")[0].strip()
            for line in format_config(Config()).splitlines()
            if line and not line.startswith("#")
        ]
        self.assertEqual(len(keys), len(set(keys)))
        for key in (
            "geometry.d_mm",
            "projection.sigma_g",
            "grid.input_n_side",
            "kernel.alpha",
            "kernel.sigma_k",
            "loss.lambda_r",
            "solve.max_iters",
            "net.cheb_order",
            "train.epochs",
            "synth.count",
            "runtime.seed",
        ):
            self.assertIn(key, keys)

    def test_files(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "slisphere.conf")
            write_config(path)
            self.assertEqual(load_config(path), Config())
            with self.assertRaises(sls.ConfigError):
                load_config(os.path.join(directory, "missing.conf"))


if __name__ == "__main__":
    unittest.main()
