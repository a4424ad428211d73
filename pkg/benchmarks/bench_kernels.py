"""Time the compiled and numpy quadrature backends on the same boxes.

    python3 benchmarks/bench_kernels.py [--k 40] [--nodes 80] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from toric_clt._kernels import NUMBA_AVAILABLE, log_tensor_quadrature
from toric_clt.potential import fubini_study, perturbed_potential
from toric_clt.quadrature import QuadratureSpec, _prepare_alphas, _rho_boxes


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=40)
    ap.add_argument("--nodes", type=int, default=80)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    cases = [
        ("FS(1)", fubini_study(1)),
        ("FS(2)", fubini_study(2)),
        ("FS(1)+gaussian bump", perturbed_potential(fubini_study(1), 0.05)),
        ("FS(2)+gaussian bump", perturbed_potential(fubini_study(2), 0.05)),
    ]
    print(f"k={args.k} nodes/axis={args.nodes} best of {args.repeat}")
    print(f"{'potential':<22}{'points':>8}{'numba s':>10}{'numpy s':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, phi in cases:
        alphas, boundary = _prepare_alphas(phi, phi.polytope.lattice_points(args.k), args.k)
        c, h = _rho_boxes(phi, alphas, args.k, boundary, QuadratureSpec())
        run = lambda b: log_tensor_quadrature(phi, alphas, c, h, args.k, args.nodes, backend=b)
        run("numba")  # compile outside the timing
        tn, a = _best(lambda: run("numba"), args.repeat)
        tp, b = _best(lambda: run("numpy"), args.repeat)
        print(f"{name:<22}{len(alphas):>8}{tn:>10.3f}{tp:>10.3f}{tp / tn:>9.1f}{np.max(np.abs(a - b)):>12.2e}")


if __name__ == "__main__":
    main()
