"""Timing comparison of the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times the Bernoulli function, the P1 local stiffness kernel, and the EAFE
local convection matrices on 2D and 3D meshes, and cross-checks that both
backends produce the same numbers.
"""

import argparse
import time

import numpy as np

from brflow.kernels import _impl_py
from brflow.mesh import uniform_box_mesh, uniform_rectangle_mesh

try:
    from brflow.kernels import _impl_cy
except ImportError:
    _impl_cy = None


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if _impl_cy is None:
        print("compiled backend not available; timing pure Python only")
    backends = [("python", _impl_py)]
    if _impl_cy is not None:
        backends.append(("cython", _impl_cy))

    rng = np.random.default_rng(0)
    meshes = [("2D 128x128", uniform_rectangle_mesh((0, 1), (0, 1), 128, 128)),
              ("3D 16^3", uniform_box_mesh((0, 1), (0, 1), (0, 1), 16))]

    print(f"{'kernel':<28}{'backend':<10}{'best [ms]':>12}{'speedup':>10}")
    s_vals = rng.normal(scale=30.0, size=200_000)
    base = None
    for name, impl in backends:
        t, _ = timeit(lambda: [impl.bernoulli(s) for s in s_vals[:20_000]],
                      args.repeat)
        base = base or t
        print(f"{'bernoulli x20k (scalar)':<28}{name:<10}{t * 1e3:>12.2f}"
              f"{base / t:>10.2f}")

    for label, mesh in meshes:
        conv = rng.normal(size=(mesh.n_cells, mesh.dim))
        results = {}
        base = None
        for name, impl in backends:
            t, out = timeit(lambda: impl.p1_local_stiffness(
                mesh.grads, mesh.volumes), args.repeat)
            results[name] = out
            base = base or t
            print(f"{'stiffness ' + label:<28}{name:<10}{t * 1e3:>12.2f}"
                  f"{base / t:>10.2f}")
        if len(results) == 2:
            assert np.allclose(results["python"], results["cython"], rtol=1e-13)

        results = {}
        base = None
        for name, impl in backends:
            t, out = timeit(lambda: impl.eafe_local_matrices(
                mesh.cells, mesh.vertices, mesh.grads, mesh.volumes,
                conv, 1e-3), args.repeat)
            results[name] = out
            base = base or t
            print(f"{'eafe ' + label:<28}{name:<10}{t * 1e3:>12.2f}"
                  f"{base / t:>10.2f}")
        if len(results) == 2:
            assert np.allclose(results["python"], results["cython"],
                               rtol=1e-12, atol=1e-300)
    print("backend outputs agree")


if __name__ == "__main__":
    main()
