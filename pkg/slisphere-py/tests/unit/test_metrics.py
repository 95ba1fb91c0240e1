import unittest
import numpy as np
from parameterized import parameterized

import slisphere as sls
from slisphere.harmonics import real_sh
from slisphere.metrics import (
    PEAK_N_SIDE,
    atom_spacing,
    axial_angle,
    dominant_direction_error,
    match_peaks,
)
from utils import axial_degrees


AXES = np.array([d.axis for d in sls.mixture_directions(4)])


def make_fodf(weights, sh=None):
    if sh is None:
        sh = np.zeros(45)
    return sls.FODF(np.asarray(weights, dtype=float), sls.SHCoeffs(8, sh), AXES)


def slix_predictor(pattern):
    peaks = sls.pick_peaks(sls.polar_line_profile(pattern, pattern.center))
    return sls.slix_fodf(sls.slix_directions(peaks))


class TestAcc(unittest.TestCase):
    def setUp(self):
        np.random.seed(0)
        self.coeffs = sls.SHCoeffs(8, np.random.normal(size=45))

    def test_identity(self):
        self.assertTrue(abs(sls.acc(self.coeffs, self.coeffs) - 1.0) < 1e-12)
        negated = sls.SHCoeffs(8, -self.coeffs.values)
        self.assertTrue(abs(sls.acc(self.coeffs, negated) + 1.0) < 1e-12)

    def test_ignores_mean(self):
        shifted = self.coeffs.values.copy()
        shifted[0] += 10.0
        value = sls.acc(self.coeffs, sls.SHCoeffs(8, shifted))
        self.assertTrue(abs(value - 1.0) < 1e-12)

    def test_orthogonal_degrees(self):
        a, b = np.zeros(45), np.zeros(45)
        a[3] = 1.0  # l = 2
        b[10] = 1.0  # l = 4
        self.assertEqual(sls.acc(sls.SHCoeffs(8, a), sls.SHCoeffs(8, b)), 0.0)

    def test_undefined(self):
        isotropic = np.zeros(45)
        isotropic[0] = 1.0
        with self.assertRaises(sls.UndefinedMetricError):
            sls.acc(sls.SHCoeffs(8, isotropic), self.coeffs)

    def test_l_max_mismatch(self):
        with self.assertRaises(sls.ContractError):
            sls.acc(self.coeffs, sls.SHCoeffs(4, np.ones(15)))


class TestJsd(unittest.TestCase):
    def setUp(self):
        np.random.seed(0)

    def test_identical(self):
        fodf = make_fodf(np.random.uniform(size=96))
        self.assertTrue(abs(sls.jsd(fodf, fodf)) < 1e-12)

    def test_disjoint(self):
        a, b = np.zeros(96), np.zeros(96)
        a[0], b[1] = 1.0, 1.0
        self.assertTrue(abs(sls.jsd(make_fodf(a), make_fodf(b)) - np.log(2)) < 1e-12)

    def test_against_formula(self):
        for _ in range(10):
            a, b = np.random.uniform(size=(2, 96))
            p, q = a / a.sum(), b / b.sum()
            m = (p + q) / 2
            expected = 0.5 * (p * np.log(p / m)).sum() + 0.5 * (
                q * np.log(q / m)
            ).sum()
            value = sls.jsd(make_fodf(a), make_fodf(b))
            self.assertTrue(abs(value - expected) < 1e-12)
            self.assertEqual(value, sls.jsd(make_fodf(b), make_fodf(a)))

    def test_clamps_negative(self):
        a = np.random.uniform(size=96)
        b = a.copy()
        b[:10] = -1.0
        c = a.copy()
        c[:10] = 0.0
        clamped = sls.jsd(make_fodf(a), make_fodf(b))
        self.assertEqual(clamped, sls.jsd(make_fodf(a), make_fodf(c)))

    def test_undefined(self):
        with self.assertRaises(sls.UndefinedMetricError):
            sls.jsd(make_fodf(-np.ones(96)), make_fodf(np.ones(96)))


class TestPeaks(unittest.TestCase):
    def test_one_hot(self):
        weights = np.zeros(96)
        weights[17] = 1.0
        peaks = sls.extract_fodf_peaks(make_fodf(weights))
        self.assertEqual(len(peaks), 1)
        self.assertTrue(axial_degrees(peaks[0].axis, AXES[17]) < 1e-5)

    def test_separation(self):
        weights = np.zeros(96)
        distances = np.degrees(axial_angle(AXES, AXES[17]))
        near = int(np.argsort(distances)[1])
        far = int(np.argmax(distances))
        weights[[17, near, far]] = [1.0, 0.9, 0.5]
        peaks = sls.extract_fodf_peaks(make_fodf(weights))
        self.assertEqual(len(peaks), 2)
        self.assertTrue(axial_degrees(peaks[1].axis, AXES[far]) < 1e-5)

    def test_top_k(self):
        weights = np.random.uniform(size=96)
        self.assertEqual(len(sls.extract_fodf_peaks(make_fodf(weights), top_k=2)), 2)
        self.assertEqual(sls.extract_fodf_peaks(make_fodf(-weights)), [])

    def test_match_peaks(self):
        a = sls.FibreOrientation(0.0, 0.0)
        b = sls.FibreOrientation(np.pi / 2, 0.0)
        errors = match_peaks([b, a], np.array([a.axis, b.axis]))
        self.assertTrue((errors < 1e-6).all())
        errors = match_peaks([b], np.array([a.axis, b.axis]))
        self.assertEqual(errors[0], np.pi / 2)
        self.assertTrue(errors[1] < 1e-6)
        self.assertTrue((match_peaks([], np.array([a.axis])) == np.pi / 2).all())

    def test_dominant_direction(self):
        weights = np.zeros(96)
        weights[40] = 2.0
        weights[3] = 1.0
        error = dominant_direction_error(make_fodf(weights), AXES[40])
        self.assertTrue(error < 1e-6)

    def test_sampled_peaks(self):
        # a lobe halfway between an atom and its nearest neighbour
        distances = axial_angle(AXES, AXES[40])
        near = int(np.argsort(distances)[1])
        middle = AXES[40] + np.sign(AXES[40] @ AXES[near]) * AXES[near]
        middle /= np.linalg.norm(middle)
        grid = sls.build_grid(PEAK_N_SIDE)
        lobe = np.exp(20.0 * ((grid.vectors @ middle) ** 2 - 1.0))
        basis = real_sh(8, grid.theta, grid.phi)
        coeffs = np.linalg.lstsq(basis, lobe, rcond=None)[0]
        fodf = make_fodf(np.exp(20.0 * ((AXES @ middle) ** 2 - 1.0)), coeffs)

        (on_atoms,) = sls.extract_fodf_peaks(fodf, 1)
        (sampled,) = sls.extract_fodf_peaks(fodf, 1, n_side=PEAK_N_SIDE)
        self.assertTrue(axial_degrees(on_atoms.axis, middle) > 5.0)
        self.assertTrue(axial_degrees(sampled.axis, middle) < 2.0)
        error = dominant_direction_error(fodf, middle, n_side=PEAK_N_SIDE)
        self.assertTrue(np.degrees(error) < 2.0)

    def test_sampled_peaks_pair(self):
        first = sls.FibreOrientation(0.3, 0.4).axis
        second = sls.FibreOrientation(1.9, 0.1).axis
        grid = sls.build_grid(PEAK_N_SIDE)
        lobes = sum(
            np.exp(20.0 * ((grid.vectors @ axis) ** 2 - 1.0))
            for axis in (first, second)
        )
        basis = real_sh(8, grid.theta, grid.phi)
        coeffs = np.linalg.lstsq(basis, lobes, rcond=None)[0]
        fodf = make_fodf(np.zeros(96), coeffs)
        self.assertEqual(sls.extract_fodf_peaks(fodf), [])
        peaks = sls.extract_fodf_peaks(fodf, 2, n_side=PEAK_N_SIDE)
        errors = match_peaks(peaks, np.array([first, second]))
        self.assertTrue((np.degrees(errors) < 3.0).all(), errors)

    @parameterized.expand([(2,), (4,), (8,)])
    def test_atom_spacing(self, n_side):
        spacing = atom_spacing(n_side)
        self.assertTrue(abs(spacing**2 * 12 * n_side**2 - 4 * np.pi) < 1e-12)


class TestEquivariance(unittest.TestCase):
    def setUp(self):
        grid = sls.build_grid(16)
        mask = sls.cap_mask(grid, np.pi / 3)
        fibre = (sls.FibreOrientation(np.radians(10.0), 0.0), 1.0)
        spec = sls.SyntheticSpec((fibre,))
        self.pattern, _ = sls.generate_synthetic(spec, grid, mask)

    @parameterized.expand([(1,), (2,), (3,)])
    def test_equivariant_predictor(self, quarter_turns):
        defect = sls.equivariance_defect(slix_predictor, self.pattern, quarter_turns)
        self.assertTrue(defect < 1e-6)

    def test_fixed_predictor(self):
        fixed = sls.slix_fodf([0.3])
        defect = sls.equivariance_defect(lambda pattern: fixed, self.pattern)
        self.assertTrue(defect > 0.1)


if __name__ == "__main__":
    unittest.main()
