import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snpdensity import _pykernels
from snpdensity.hermite import hermite_eval
from snpdensity.indexset import build_index_set

ckernels = pytest.importorskip("snpdensity._ckernels")

finite = st.floats(-6.0, 6.0, allow_nan=False)


class TestBackendsAgree:
    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 30), elements=finite), st.integers(0, 12))
    def test_hermite_table(self, z, order):
        np.testing.assert_allclose(
            ckernels.hermite_table(z, order), _pykernels.hermite_table(z, order), rtol=1e-13, atol=1e-13
        )

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3), st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_basis_matrix(self, d, K, seed):
        pts = np.random.default_rng(seed).standard_normal((15, d))
        idx = build_index_set(d, K).indices
        a = ckernels.basis_matrix(pts, idx)
        np.testing.assert_allclose(a, _pykernels.basis_matrix(pts, idx), rtol=1e-12, atol=1e-12)

    def test_basis_matrix_definition(self, rng):
        pts = rng.standard_normal((6, 3))
        idx = build_index_set(3, 4)
        expected = [[np.prod([hermite_eval(a, p[j]) for j, a in enumerate(alpha)]) for alpha in idx]
                    for p in pts]
        np.testing.assert_allclose(ckernels.basis_matrix(pts, idx.indices), expected, rtol=1e-12)

    def test_lorenz_bitwise(self, rng):
        pts = rng.standard_normal((50, 3)) * 5
        a, bad_a = ckernels.lorenz_rk4(pts, 10.0, 28.0, 8.0 / 3.0, 0.01, 63, 0.01)
        b, bad_b = _pykernels.lorenz_rk4(pts, 10.0, 28.0, 8.0 / 3.0, 0.01, 63, 0.01)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)
        assert np.all(bad_a == -1) and np.all(bad_b == -1)

    def test_lorenz_flags_divergence(self):
        pts = np.array([[1.0, 1.0, 1.0], [1e200, 1e200, 1e200]])
        for kernel in (ckernels, _pykernels):
            with np.errstate(all="ignore"):
                out, bad = kernel.lorenz_rk4(pts, 10.0, 28.0, 8.0 / 3.0, 0.01, 5, 0.01)
            assert bad[0] == -1 and bad[1] == 0
