import inspect
import unittest
from importlib import metadata

import slisphere
from slisphere import cli, errors


class TestPackage(unittest.TestCase):
    def test_version(self):
        parts = slisphere.__version__.split(".")
        self.assertEqual(len(parts), 3)
        self.assertTrue(all(part.isdigit() for part in parts))

    def test_installed_version(self):
        try:
            installed = metadata.version("slisphere")
        except metadata.PackageNotFoundError:
            self.skipTest("slisphere is not installed")
        self.assertEqual(installed, slisphere.__version__)

    def test_console_script(self):
        try:
            scripts = metadata.distribution("slisphere").entry_points
        except metadata.PackageNotFoundError:
            self.skipTest("slisphere is not installed")
        (script,) = [e for e in scripts if e.name == "slisphere"]
        self.assertEqual(script.group, "console_scripts")
        self.assertIs(script.load(), cli.main)

    def test_errors_exported(self):
        for name, value in vars(errors).items():
            if inspect.isclass(value) and issubclass(value, Exception):
                self.assertIs(getattr(slisphere, name), value, name)


if __name__ == "__main__":
    unittest.main()
