import os
import unittest
import numpy as np

import slisphere as sls
from slisphere.forward_model import mixture_directions

slow = unittest.skipUnless(
    os.environ.get("SLISPHERE_SLOW_TESTS") == "1",
    "acceptance-scale run, set SLISPHERE_SLOW_TESTS=1",
)


def assert_arrays_equals(test_case: unittest.TestCase, a, b, tol: float = 1e-12):
    a, b = np.asarray(a), np.asarray(b)
    test_case.assertEqual(a.shape, b.shape)
    test_case.assertTrue(
        np.linalg.norm(a - b) < tol, f"difference {np.linalg.norm(a - b)} >= {tol}"
    )


def assert_signals_equals(
    test_case: unittest.TestCase,
    a: sls.SphericalSignal,
    b: sls.SphericalSignal,
    tol: float = 1e-12,
):
    test_case.assertEqual(a.grid, b.grid)
    test_case.assertTrue((a.valid == b.valid).all())
    assert_arrays_equals(test_case, a.values[a.valid], b.values[b.valid], tol)


def assert_fodfs_equals(
    test_case: unittest.TestCase, a: sls.FODF, b: sls.FODF, tol: float = 1e-12
):
    test_case.assertEqual(a.sh.l_max, b.sh.l_max)
    assert_arrays_equals(test_case, a.axes, b.axes, tol)
    assert_arrays_equals(test_case, a.weights, b.weights, tol)
    assert_arrays_equals(test_case, a.sh.values, b.sh.values, tol)


def axial_degrees(u, v) -> float:
    u = np.asarray(u) / np.linalg.norm(u)
    v = np.asarray(v) / np.linalg.norm(v)
    return float(np.degrees(np.arccos(min(abs(u @ v), 1.0))))


def random_unit_vectors(n: int) -> np.ndarray:
    v = np.random.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def small_bank(
    input_n_side: int = 4,
    fodf_n_side: int = 2,
    theta_max: float = np.pi / 3,
    params: sls.EllipsoidKernelParams = sls.EllipsoidKernelParams(),
) -> sls.KernelBank:
    grid = sls.build_grid(input_n_side)
    mask = sls.cap_mask(grid, theta_max)
    return sls.build_kernel_bank(mixture_directions(fodf_n_side), params, grid, mask)


def tiny_net_params(**changes) -> sls.NetParams:
    values = dict(
        input_n_side=4,
        levels=2,
        widths=(2, 2),
        cheb_order=2,
        fodf_n_side=2,
        l_max=4,
    )
    values.update(changes)
    return sls.NetParams(**values)
