import os
import struct
import tempfile
import unittest
import numpy as np
import torch

import slisphere as sls
from slisphere.io import (
    PatternStack,
    format_table,
    load_or_build_kernel_bank,
    read_checkpoint,
    read_fodfs,
    read_kernel_bank,
    read_signals,
    read_stack,
    sidecar_path,
    spec_from_json,
    spec_to_json,
    write_checkpoint,
    write_fodfs,
    write_kernel_bank,
    write_signals,
    write_stack,
    write_table,
)
from utils import (
    assert_arrays_equals,
    assert_fodfs_equals,
    assert_signals_equals,
    small_bank,
    tiny_net_params,
)


def random_patterns(count, shape=(9, 13)):
    return tuple(
        sls.ScatteringPattern(np.random.uniform(size=shape).astype(np.float32))
        for _ in range(count)
    )


def sample_spec(seed=0):
    fibres = (
        (sls.FibreOrientation(0.3, 0.2), 0.6),
        (sls.FibreOrientation(2.0, 1.1), 0.4),
    )
    return sls.SyntheticSpec(
        fibres,
        noise=0.05,
        kernel=sls.EllipsoidKernelParams(alpha=12.0, x_c=(0.0, 0.1, 0.0)),
        geometry=sls.MicroscopeGeometry(d_mm=5.0),
        seed=seed,
    )


class FileTestCase(unittest.TestCase):
    def setUp(self):
        np.random.seed(0)
        torch.manual_seed(0)
        self.directory = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.directory.cleanup()

    def path(self, name):
        return os.path.join(self.directory.name, name)

    def assert_rewrite_identical(self, path, read, write):
        copy = path + ".copy"
        write(copy, read(path))
        with open(path, "rb") as a, open(copy, "rb") as b:
            self.assertEqual(a.read(), b.read())


class TestStack(FileTestCase):
    def test_round_trip(self):
        patterns = random_patterns(3)
        specs = (sample_spec(1), None, sample_spec(2))
        centroids = (None, sls.PatternCentroid(4.0, 6.5), patterns[2].center)
        path = self.path("stack.slip")
        write_stack(path, PatternStack(patterns, specs, centroids))
        stack = read_stack(path)
        self.assertEqual((stack.count, stack.height, stack.width), (3, 9, 13))
        for a, b in zip(stack.patterns, patterns):
            self.assertTrue(np.array_equal(a.intensities, b.intensities))
        self.assertEqual(stack.groundtruth, specs)
        self.assertEqual(stack.centroids, centroids)
        self.assert_rewrite_identical(path, read_stack, write_stack)

    def test_without_sidecar(self):
        path = self.path("stack.slip")
        write_stack(path, PatternStack(random_patterns(2), (sample_spec(),) * 2))
        self.assertTrue(sidecar_path(path).exists())
        write_stack(path, PatternStack(random_patterns(2)))
        self.assertFalse(sidecar_path(path).exists())
        stack = read_stack(path)
        self.assertEqual(stack.groundtruth, (None, None))
        self.assertEqual(stack.centroids, (None, None))

    def test_empty(self):
        path = self.path("empty.slip")
        write_stack(path, PatternStack(()))
        self.assertEqual(read_stack(path).count, 0)

    def test_header(self):
        path = self.path("stack.slip")
        write_stack(path, PatternStack(random_patterns(1, (2, 3))))
        with open(path, "rb") as stream:
            data = stream.read()
        self.assertEqual(data[:4], b"SLIP")
        self.assertEqual(struct.unpack("<HIHHB", data[4:15]), (1, 1, 3, 2, 1))
        self.assertEqual(len(data), 15 + 4 * 6)

    def test_corrupt(self):
        path = self.path("stack.slip")
        write_stack(path, PatternStack(random_patterns(2)))
        with open(path, "rb") as stream:
            data = stream.read()
        cases = {
            "truncated": data[:-1],
            "trailing": data + b"\0",
            "magic": b"XXXX" + data[4:],
            "version": data[:4] + struct.pack("<H", 9) + data[6:],
            "short": data[:3],
        }
        for name, content in cases.items():
            with open(path, "wb") as stream:
                stream.write(content)
            with self.assertRaises(sls.FormatError, msg=name):
                read_stack(path)
        with self.assertRaises(sls.FormatError):
            read_stack(self.path("missing.slip"))

    def test_sidecar_index(self):
        path = self.path("stack.slip")
        write_stack(path, PatternStack(random_patterns(1)))
        sidecar_path(path).write_text('{"5": {"centroid": [1.0, 2.0]}}')
        with self.assertRaises(sls.FormatError):
            read_stack(path)
        sidecar_path(path).write_text('{"first": {"centroid": [1.0, 2.0]}}')
        with self.assertRaises(sls.FormatError):
            read_stack(path)

    def test_invalid(self):
        with self.assertRaises(sls.InputError):
            PatternStack(random_patterns(1, (4, 4)) + random_patterns(1, (4, 5)))
        with self.assertRaises(sls.InputError):
            PatternStack(random_patterns(2), (sample_spec(),))

    def test_spec_json(self):
        spec = sample_spec(7)
        self.assertEqual(spec_from_json(spec_to_json(spec)), spec)
        with self.assertRaises(sls.FormatError):
            spec_from_json({"fibres": []})


class TestSignals(FileTestCase):
    def test_round_trip(self):
        grid = sls.build_grid(4)
        mask = sls.cap_mask(grid, np.pi / 3)
        signals = [
            sls.SphericalSignal.from_mask(mask, np.random.uniform(size=mask.n_included))
            for _ in range(3)
        ]
        path = self.path("signals.slis")
        write_signals(path, signals)
        for a, b in zip(read_signals(path), signals):
            assert_signals_equals(self, a, b)
        self.assert_rewrite_identical(path, read_signals, write_signals)

    def test_mixed_grids(self):
        masks = [sls.cap_mask(sls.build_grid(n_side), 1.0) for n_side in (2, 4)]
        signals = [
            sls.SphericalSignal.from_mask(mask, np.ones(mask.n_included))
            for mask in masks
        ]
        with self.assertRaises(sls.InputError):
            write_signals(self.path("signals.slis"), signals)


class TestFodfs(FileTestCase):
    def setUp(self):
        super().setUp()
        self.fodfs = [sls.slix_fodf(np.random.uniform(0, np.pi, 2)) for _ in range(4)]

    def test_round_trip(self):
        path = self.path("fodfs.slif")
        write_fodfs(path, self.fodfs)
        fodfs = read_fodfs(path)
        self.assertEqual(len(fodfs), 4)
        for a, b in zip(fodfs, self.fodfs):
            assert_fodfs_equals(self, a, b)
            self.assertIsNone(a.raw)
        self.assert_rewrite_identical(path, read_fodfs, write_fodfs)

    def test_invalid(self):
        with self.assertRaises(sls.InputError):
            write_fodfs(self.path("fodfs.slif"), [])
        with self.assertRaises(sls.InputError):
            write_fodfs(
                self.path("fodfs.slif"),
                [self.fodfs[0], sls.slix_fodf([0.1], n_side=2, l_max=4)],
            )

    def test_odd_l_max(self):
        path = self.path("fodfs.slif")
        with open(path, "wb") as stream:
            stream.write(struct.pack("<4sHIIH", b"SLIF", 1, 0, 0, 3))
        with self.assertRaises(sls.FormatError):
            read_fodfs(path)


class TestCheckpoint(FileTestCase):
    def setUp(self):
        super().setUp()
        self.net = sls.SphericalUNet(tiny_net_params())
        self.path_ = self.path("net.slic")
        write_checkpoint(self.path_, self.net)

    def test_round_trip(self):
        net = read_checkpoint(self.path_, tiny_net_params())
        self.assertEqual(net.params, self.net.params)
        state = self.net.state_dict()
        for name, tensor in net.state_dict().items():
            self.assertTrue(torch.equal(tensor, state[name]))
        self.assert_rewrite_identical(self.path_, read_checkpoint, write_checkpoint)

    def test_default_network_round_trip(self):
        torch.manual_seed(0)
        net = sls.SphericalUNet()
        path = self.path("default.slic")
        write_checkpoint(path, net)
        loaded = read_checkpoint(path, sls.NetParams())
        state = net.state_dict()
        self.assertEqual(list(loaded.state_dict()), list(state))
        for name, tensor in loaded.state_dict().items():
            self.assertTrue(torch.equal(tensor, state[name]), name)
        np.random.seed(0)
        values = np.random.uniform(size=net.input_pixels.size)
        signal = sls.SphericalSignal.from_mask(net.input_mask, values)
        output = sls.forward(loaded, signal)
        self.assertTrue(np.array_equal(output, sls.forward(net, signal)))

    def test_architecture_mismatch(self):
        with self.assertRaises(sls.FormatError):
            read_checkpoint(self.path_, tiny_net_params(cheb_order=3))

    def test_hash_mismatch(self):
        with open(self.path_, "rb") as stream:
            data = bytearray(stream.read())
        start = data.index(b'"hash": "') + len(b'"hash": "')
        data[start] = ord("0") if data[start] != ord("0") else ord("1")
        with open(self.path_, "wb") as stream:
            stream.write(data)
        with self.assertRaises(sls.FormatError):
            read_checkpoint(self.path_)

    def test_truncated(self):
        with open(self.path_, "rb") as stream:
            data = stream.read()
        with open(self.path_, "wb") as stream:
            stream.write(data[:-8])
        with self.assertRaises(sls.FormatError):
            read_checkpoint(self.path_)


class TestKernelCache(FileTestCase):
    def setUp(self):
        super().setUp()
        self.bank = small_bank()

    def test_round_trip(self):
        path = self.path("bank.slik")
        write_kernel_bank(path, self.bank)
        bank = read_kernel_bank(path)
        self.assertEqual(bank.cache_key, self.bank.cache_key)
        self.assertTrue(np.array_equal(bank.matrix, self.bank.matrix))
        self.assert_rewrite_identical(path, read_kernel_bank, write_kernel_bank)

    def test_load_or_build(self):
        path = self.path("bank.slik")
        grid, mask = self.bank.grid, self.bank.mask
        bank = load_or_build_kernel_bank(
            path, self.bank.directions, self.bank.params, grid, mask
        )
        self.assertTrue(os.path.exists(path))
        assert_arrays_equals(self, bank.matrix, self.bank.matrix)

        params = sls.EllipsoidKernelParams(alpha=5.0)
        rebuilt = load_or_build_kernel_bank(
            path, self.bank.directions, params, grid, mask
        )
        self.assertEqual(rebuilt.params, params)
        self.assertEqual(read_kernel_bank(path).params, params)

    def test_corrupt_cache_rebuilt(self):
        path = self.path("bank.slik")
        with open(path, "wb") as stream:
            stream.write(b"garbage")
        bank = load_or_build_kernel_bank(
            path, self.bank.directions, self.bank.params, self.bank.grid, self.bank.mask
        )
        self.assertEqual(bank.cache_key, self.bank.cache_key)
        self.assertEqual(read_kernel_bank(path).cache_key, self.bank.cache_key)


class TestTables(FileTestCase):
    def test_csv(self):
        rows = [{"index": 0, "acc": 0.5}, {"index": 1, "acc": float("nan")}]
        path = self.path("table.csv")
        write_table(path, rows)
        with open(path) as stream:
            lines = stream.read().splitlines()
        self.assertEqual(lines, ["index,acc", "0,0.5", "1,nan"])

    def test_format(self):
        text = format_table([{"index": 3, "jsd": 0.123456}, {"index": 10, "jsd": 1.0}])
        self.assertEqual(
            text.splitlines(),
            ["index     jsd", "    3  0.1235", "   10  1.0000"],
        )
        self.assertEqual(format_table([]), "")


if __name__ == "__main__":
    unittest.main()
