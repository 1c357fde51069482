"""The compiled kernel and the pure-Python fallback give the same transports."""

import numpy as np
import pytest

from horoforge import _kernel_py
from horoforge.kernels import FIELD_NECK, FIELD_PLANE, SEG_ARC, SEG_LINE, SEG_LOG

compiled = pytest.importorskip("horoforge._kernel")

rng = np.random.default_rng(11)
PLANE = np.array([0.3 + 0.1j, -0.7 + 0.2j, 3 + 0j, -2 + 2j, 1e-3 + 0j, 2e-3j, 1e-3 + 0j, -1e-3 + 0j])
NECK = np.array([1e-4 + 2e-5j, 0.4 + 0j, -0.5 + 0.3j])
SEGS = [(SEG_LINE, 0j, 1.5 + 0.5j, 0.0), (SEG_ARC, 3 + 0j, complex(0, 2 * np.pi), 1.0),
        (SEG_LOG, complex(np.log(1e-3), 0.3), complex(-np.log(1e-3), 0.3), 0.0)]


@pytest.mark.parametrize("dev", [False, True])
@pytest.mark.parametrize("k", range(3))
def test_segment_parity(dev, k):
    kind, a, b, r = SEGS[k]
    fk, par, nn = (FIELD_NECK, NECK, 0) if kind == SEG_LOG else (FIELD_PLANE, PLANE, 2)
    if dev and fk == FIELD_NECK:
        pytest.skip("deviation mode is for plane fields")
    Y1 = compiled.rk4_segment(fk, par, nn, kind, a, b, r, 200, dev)
    Y2 = _kernel_py.rk4_segment(fk, par, nn, kind, a, b, r, 200, dev)
    assert np.abs(Y1 - Y2).max() < 1e-13 * max(1, np.abs(Y1).max())


def test_deviation_mode_matches_full():
    kind, a, b, r = SEGS[0]
    A0 = PLANE[1] * np.array([[PLANE[0], -PLANE[0] ** 2], [1, -PLANE[0]]])
    for mod in (compiled, _kernel_py):
        Y = mod.rk4_segment(FIELD_PLANE, PLANE, 2, kind, a, b, r, 400, False)
        D = mod.rk4_segment(FIELD_PLANE, PLANE, 2, kind, a, b, r, 400, True)
        assert np.abs(Y - (np.eye(2) + (b - a) * A0) - D).max() < 1e-12


def test_batch_parity():
    kinds = np.array([SEG_LINE, SEG_LINE, SEG_ARC])
    sa = np.array([0j, 1 + 1j, 3 + 0j])
    sb = np.array([1 + 1j, 2 - 1j, complex(0, np.pi)])
    sr = np.array([0.0, 0.0, 1.5])
    ns = np.array([64, 32, 64])
    for dev in (False, True):
        B1 = compiled.rk4_batch(FIELD_PLANE, PLANE, 2, kinds, sa, sb, sr, ns, dev)
        B2 = _kernel_py.rk4_batch(FIELD_PLANE, PLANE, 2, kinds, sa, sb, sr, ns, dev)
        assert np.abs(B1 - B2).max() < 1e-12
        for m in range(3):
            Y = _kernel_py.rk4_segment(FIELD_PLANE, PLANE, 2, kinds[m], sa[m], sb[m], sr[m], ns[m], dev)
            assert np.abs(B2[m] - Y).max() < 1e-12
