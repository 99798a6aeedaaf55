"""Time the compiled kernels against the numpy fallback on a sphere cloud.

Usage::

    python3 benchmarks/bench_kernels.py [--dx 0.05] [--repeat 3]

Both backends get identical inputs built from one tube; the script also
reports the largest disagreement between them.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from surfgbpm import _fallback
from surfgbpm.cls_fit import StencilConfig, local_patches
from surfgbpm.surfaces import Sphere
from surfgbpm.tube_grid import GridSpec, initialize_tube

try:
    from surfgbpm import _core
except ImportError:  # pragma: no cover
    _core = None


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _diff(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    worst = 0.0
    for x, y in zip(a, b):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        fin = np.isfinite(x) & np.isfinite(y)
        if np.any(np.isfinite(x) != np.isfinite(y)):
            return np.inf
        if fin.any():
            worst = max(worst, float(np.max(np.abs(x[fin] - y[fin]))))
    return worst


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--dx", type=float, default=0.05)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    grid = GridSpec.from_bounds((-1.5,) * 3, (1.5,) * 3, args.dx)
    tube = initialize_tube(Sphere((0, 0, 0), 1.0), grid, 1.5)
    cfg = StencilConfig()
    P = local_patches(tube, tube.pos, tube.nrm, tube.nrm, cfg)
    rng = np.random.default_rng(0)
    local = np.ascontiguousarray(rng.normal(scale=0.5 * args.dx, size=(tube.n, 3)))
    g = tube.grid
    knn_args = (tube.pos, tube.pos, 16, np.asarray(g.origin, dtype=float), float(g.dx),
                np.asarray(g.shape, dtype=np.int64), tube.max_shells,
                np.arange(tube.n, dtype=np.int64))
    cases = {
        "knn": lambda m: m.knn(*knn_args),
        "poly_stencils": lambda m: m.poly_stencils(P.proj, P.c, cfg.rcond),
        "quad_fits": lambda m: m.quad_fits(P.proj, P.c, cfg.rcond),
        "rbf_stencils": lambda m: m.rbf_stencils(P.proj, P.c, 8, 3.0, cfg.rcond),
        "closest_on_quadratic": lambda m: m.closest_on_quadratic(P.coef, local, 1e-12 * args.dx, 30),
    }
    print(f"footpoints: {tube.n}  dx: {args.dx}")
    print(f"{'kernel':<22}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases.items():
        tp, outp = _time(lambda: fn(_fallback), args.repeat)
        if _core is None:
            print(f"{name:<22}{'n/a':>12}{tp:12.4f}{'':>10}{'':>12}")
            continue
        tc, outc = _time(lambda: fn(_core), args.repeat)
        print(f"{name:<22}{tc:12.4f}{tp:12.4f}{tp / tc:10.1f}{_diff(outc, outp):12.2e}")


if __name__ == "__main__":
    main()
