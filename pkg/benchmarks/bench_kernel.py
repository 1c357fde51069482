"""Compiled vs pure-Python RK4 transport kernel.

    python benchmarks/bench_kernel.py [--repeat 3]

Times each backend on raw segments and inside a full Newton solve of the
triangle packing at tau = 1e-4, and checks that both give the same matrices.
"""

import argparse
import time

import numpy as np

from horoforge import _kernel_py, monodromy as mo, packing as pk, surface_model as sm
from horoforge.kernels import FIELD_NECK, FIELD_PLANE, SEG_LINE, SEG_LOG, get_backend


def best(fn, repeat):
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return min(ts), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        compiled = get_backend("compiled")
    except ImportError:
        raise SystemExit("compiled kernel not built; run pip install -e . --no-build-isolation")

    rng = np.random.default_rng(0)
    par = np.array([0.3 + 0.1j, -0.7 + 0.2j, 3, -2 + 2j, 1e-3, 2e-3j, 1e-3, -1e-3], dtype=complex)
    k = 64
    kinds = np.full(k, SEG_LINE)
    sa = rng.normal(size=k) + 1j * rng.normal(size=k)
    sb = sa + 0.5 * (rng.normal(size=k) + 1j * rng.normal(size=k))
    sr = np.zeros(k)
    ns = np.full(k, 400)
    neck = np.array([1e-4 + 2e-5j, 0.4, -0.5 + 0.3j])
    H = pk.Horosphere
    tri = pk.with_tangencies([H.plane(1.0), H.sphere(0j, 0.5), H.sphere(1 + 0j, 0.5)])
    model = sm.from_packing(tri, np.ones(3), tau=1e-4)

    cases = {
        "batch 64 x 400 plane steps": lambda m: m.rk4_batch(FIELD_PLANE, par, 2, kinds, sa, sb, sr, ns, False),
        "neck segment 20000 steps": lambda m: m.rk4_segment(FIELD_NECK, neck, 0, SEG_LOG, complex(-7, 0.3),
                                                            complex(7, 0.3), 0.0, 20000, False),
        "triangle solve tau=1e-4": lambda m: mo.newton_solve(
            model, backend=m).params.b,
    }
    print(f"{'case':30s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s} {'max diff':>9s}")
    for name, fn in cases.items():
        rep = 1 if "solve" in name else args.repeat
        tp, yp = best(lambda: fn(_kernel_py), rep)
        tc, yc = best(lambda: fn(compiled), rep)
        diff = float(np.abs(np.asarray(yp) - np.asarray(yc)).max())
        print(f"{name:30s} {tp:10.3f} {tc:11.4f} {tp / tc:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
