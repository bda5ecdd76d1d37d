"""Compiled vs numpy random-walk oracle kernel.

Runs the same batch through both backends, checks that the compiled
kernel's functionals agree in law with the numpy ones (two-sample KS),
and prints paths per second for each.

    python3 benchmarks/bench_walk.py [--paths N] [--dt DT]
"""

import argparse
import time

import numpy as np
from scipy import stats

from gffloops import walk
from gffloops.closed_form_laws import GAP


def timed(backend, n, dt, mode, seed):
    bg = np.random.PCG64(seed)
    t0 = time.perf_counter()
    out = walk.walk_batch(bg, n, dt, mode, 1.0, 1.0, GAP, 64.0, backend=backend)
    return time.perf_counter() - t0, out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=4000)
    p.add_argument("--dt", type=float, default=1e-3)
    args = p.parse_args()
    if walk.BACKEND != "compiled":
        print("compiled kernel not built; only the numpy backend is available")
    modes = {"fps": walk.MODE_FPS, "tvs": walk.MODE_TVS, "cluster": walk.MODE_CLUSTER}
    print(f"{'mode':8s} {'backend':9s} {'seconds':>9s} {'paths/s':>11s}")
    for name, mode in modes.items():
        res = {}
        for backend in ("numpy", "compiled"):
            if backend == "compiled" and walk.BACKEND != "compiled":
                continue
            secs, out = timed(backend, args.paths, args.dt, mode, 1)
            res[backend] = (secs, out)
            print(f"{name:8s} {backend:9s} {secs:9.3f} {args.paths / secs:11.0f}")
        if len(res) == 2:
            a, b = res["numpy"][1]["T"], res["compiled"][1]["T"]
            ks = stats.ks_2samp(a[np.isfinite(a)], b[np.isfinite(b)])
            print(f"{name:8s} speedup {res['numpy'][0] / res['compiled'][0]:.1f}x, KS(T) = {ks.statistic:.4f} "
                  f"(p = {ks.pvalue:.3f})")


if __name__ == "__main__":
    main()
