import unittest
import healpy as hp
import numpy as np
from parameterized import parameterized

import slisphere as sls
from slisphere.healpix import azimuthal_permutation, full_mask, neighbor_edges
from utils import assert_arrays_equals


class TestHealpix(unittest.TestCase):
    @parameterized.expand([(1,), (2,), (4,), (8,), (16,)])
    def test_n_pix(self, n_side):
        grid = sls.build_grid(n_side)
        self.assertEqual(grid.n_pix, 12 * n_side**2)
        self.assertEqual(grid.theta.shape, (grid.n_pix,))
        self.assertTrue(
            abs(grid.resolution.pixel_area - hp.nside2pixarea(n_side)) < 1e-12
        )

    @parameterized.expand([(0,), (-4,), (3,), (12,), (2.0,), (True,)])
    def test_invalid_resolution(self, n_side):
        with self.assertRaises(sls.InvalidResolutionError):
            sls.GridResolution(n_side)

    def test_grid_is_immutable(self):
        grid = sls.build_grid(4)
        with self.assertRaises(ValueError):
            grid.theta[0] = 1.0
        self.assertIs(grid, sls.build_grid(4))

    @parameterized.expand([(1,), (2,), (4,), (8,), (16,)])
    def test_pix2ang_ang2pix(self, n_side):
        grid = sls.build_grid(n_side)
        theta, phi = sls.pix2ang(grid, np.arange(grid.n_pix))
        self.assertTrue(
            (sls.ang2pix(grid, theta, phi) == np.arange(grid.n_pix)).all()
        )

        theta_hp, phi_hp = hp.pix2ang(n_side, np.arange(grid.n_pix), nest=True)
        assert_arrays_equals(self, theta, theta_hp)
        assert_arrays_equals(self, phi, np.mod(phi_hp, 2 * np.pi))

    def test_scalar_pix2ang(self):
        grid = sls.build_grid(2)
        theta, phi = sls.pix2ang(grid, 5)
        self.assertIsInstance(theta, float)
        self.assertEqual(sls.ang2pix(grid, theta, phi), 5)

    def test_ang2pix_random(self):
        np.random.seed(0)
        grid = sls.build_grid(16)
        theta = np.arccos(np.random.uniform(-1.0, 1.0, 1000))
        phi = np.random.uniform(0.0, 2 * np.pi, 1000)
        expected = hp.ang2pix(16, theta, phi, nest=True)
        self.assertTrue((sls.ang2pix(grid, theta, phi) == expected).all())

    def test_ang2pix_boundary(self):
        # the base pixel boundary at phi = pi / 2 in the northern polar cap
        grid = sls.build_grid(1)
        pixel = sls.ang2pix(grid, 0.5, np.pi / 2)
        self.assertEqual(pixel, 0)

    @parameterized.expand([(-0.1,), (np.pi + 0.1,), (np.nan,), (np.inf,)])
    def test_invalid_angle(self, theta):
        with self.assertRaises(sls.InvalidAngleError):
            sls.ang2pix(sls.build_grid(4), theta, 0.0)

    @parameterized.expand([(-1,), (192,), (1000,)])
    def test_invalid_index(self, idx):
        grid = sls.build_grid(4)
        with self.assertRaises(sls.PixelIndexError):
            sls.pix2ang(grid, idx)
        with self.assertRaises(sls.PixelIndexError):
            sls.neighbors(grid, idx)

    def test_non_integer_index(self):
        with self.assertRaises(sls.PixelIndexError):
            sls.pix2ang(sls.build_grid(4), 1.5)

    @parameterized.expand([(2,), (4,), (8,)])
    def test_neighbors(self, n_side):
        grid = sls.build_grid(n_side)
        for i in range(grid.n_pix):
            adjacent = sls.neighbors(grid, i)
            self.assertIn(len(adjacent), (7, 8))
            self.assertEqual(adjacent, sorted(adjacent))
            self.assertNotIn(i, adjacent)
            for j in adjacent:
                self.assertIn(i, sls.neighbors(grid, j))

    def test_north_pole(self):
        # the pole is a corner of the 4 polar pixels; the lowest index wins
        for n_side in (1, 2, 4, 16):
            grid = sls.build_grid(n_side)
            polar = np.argsort(grid.theta, kind="stable")[:4]
            for phi in (0.0, 0.3, np.pi, 5.0):
                self.assertEqual(sls.ang2pix(grid, 0.0, phi), polar.min())

    @parameterized.expand([(4,), (16,)])
    def test_equal_area(self, n_side):
        # area of the pixel outline as the loop integral of z dphi
        np.random.seed(0)
        grid = sls.build_grid(n_side)
        expected = 4 * np.pi / grid.n_pix
        checked = 0
        for pixel in np.random.permutation(grid.n_pix):
            x, y, z = hp.boundaries(n_side, int(pixel), step=4000, nest=True)
            if np.abs(z).max() > 1.0 - 1e-12:
                continue
            phi = np.unwrap(np.append(np.arctan2(y, x), np.arctan2(y[0], x[0])))
            z = np.append(z, z[0])
            area = abs(np.sum(0.5 * (z[1:] + z[:-1]) * np.diff(phi)))
            self.assertTrue(abs(area / expected - 1.0) < 1e-5, f"pixel {pixel}")
            checked += 1
            if checked == 100:
                break
        self.assertEqual(checked, 100)

    def test_grid_integration(self):
        # pixel sums times the common area integrate smooth functions
        grid = sls.build_grid(16)
        area = grid.resolution.pixel_area
        z = grid.vectors[:, 2]
        self.assertTrue(abs(grid.n_pix * area - 4 * np.pi) < 1e-12)
        self.assertTrue(abs((z**2).sum() * area - 4 * np.pi / 3) < 1e-2)
        self.assertTrue(abs(z.sum() * area) < 1e-12)

    def test_base_pixel_neighbors(self):
        # base pixels meet in threes at the cap corners, leaving six neighbours
        grid = sls.build_grid(1)
        self.assertEqual(sls.neighbors(grid, 0), [1, 2, 3, 4, 5, 8])
        self.assertEqual(sls.neighbors(grid, 4), [0, 3, 5, 7, 8, 11])
        for i in range(grid.n_pix):
            self.assertEqual(len(sls.neighbors(grid, i)), 6)

    def test_neighbor_edges(self):
        grid = sls.build_grid(4)
        edges = neighbor_edges(grid)
        self.assertTrue((edges[:, 0] < edges[:, 1]).all())
        degree = sum(len(sls.neighbors(grid, i)) for i in range(grid.n_pix))
        self.assertEqual(2 * edges.shape[0], degree)

    @parameterized.expand([(2,), (4,), (16,)])
    def test_parent_children(self, n_side):
        grid = sls.build_grid(n_side)
        coarse = sls.build_grid(n_side // 2)
        fine = sls.build_grid(2 * n_side)
        for i in range(grid.n_pix):
            self.assertTrue(
                all(sls.parent(fine, c) == i for c in sls.children(grid, i))
            )
            self.assertIn(i, sls.children(coarse, sls.parent(grid, i)))

        # every pixel center lies inside its parent
        pixels = np.arange(grid.n_pix)
        expected = sls.ang2pix(coarse, grid.theta, grid.phi)
        self.assertTrue((sls.parent(grid, pixels) == expected).all())

    def test_no_parent(self):
        with self.assertRaises(sls.NoParentError):
            sls.parent(sls.build_grid(1), 0)

    @parameterized.expand([(4, np.pi / 3), (16, np.pi / 3), (16, np.pi / 6)])
    def test_cap_mask(self, n_side, theta_max):
        grid = sls.build_grid(n_side)
        mask = sls.cap_mask(grid, theta_max)
        self.assertTrue((mask.included == (grid.theta <= theta_max)).all())
        self.assertTrue((grid.theta[mask.indices] <= theta_max).all())
        self.assertEqual(mask.n_included, mask.indices.size)

    @parameterized.expand([(0.0,), (-0.5,), (4.0,), (np.nan,)])
    def test_invalid_cap(self, theta_max):
        with self.assertRaises(sls.InvalidAngleError):
            sls.cap_mask(sls.build_grid(4), theta_max)

    def test_full_mask(self):
        mask = full_mask(sls.build_grid(2))
        self.assertEqual(mask.n_included, 48)

    @parameterized.expand([(4,), (16,)])
    def test_azimuthal_permutation(self, n_side):
        grid = sls.build_grid(n_side)
        perm = azimuthal_permutation(grid, np.pi / 2)
        self.assertTrue((np.sort(perm) == np.arange(grid.n_pix)).all())
        assert_arrays_equals(self, grid.theta[perm], grid.theta, 1e-9)

        full_turn = np.arange(grid.n_pix)
        for _ in range(4):
            full_turn = full_turn[perm]
        self.assertTrue((full_turn == np.arange(grid.n_pix)).all())

        # the caps are rotation invariant
        mask = sls.cap_mask(grid, np.pi / 3)
        self.assertTrue((mask.included[perm] == mask.included).all())


if __name__ == "__main__":
    unittest.main()
