"""Time the TV kernels (L, L*, FGP) on the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--sizes 16,32,64,128] [--repeat 5]

Prints one CSV row per (kernel, grid, backend) with the best wall time and
the max abs difference from the numpy result.
"""

import argparse
import sys
import timeit

import numpy as np

from wgeit._accel import NUMBA_AVAILABLE
from wgeit.kernels import KERNELS


def cases(n, rng):
    x = rng.uniform(0.5, 2.0, (n, 2 * n))
    p = rng.uniform(-1, 1, (n - 1, 2 * n))
    q = rng.uniform(-1, 1, (n, 2 * n - 1))
    return {
        "Lstar": (x,),
        "L": (p, q),
        # tol=0 forces the full iteration count so both backends do equal work
        "fgp": (x, 0.05, 0.25, 4.0, 50, 0.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="16,32,64,128")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy backend is timed", file=sys.stderr)
    backends = ["numpy"] + (["numba"] if NUMBA_AVAILABLE else [])
    rng = np.random.default_rng(0)
    print("kernel,grid,backend,seconds,speedup,max_abs_diff")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, call_args in cases(n, rng).items():
            ref = None
            t_ref = None
            for b in backends:
                fn = KERNELS[b][name]
                out = fn(*call_args)  # warm-up, triggers compilation
                t = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
                first = out[0] if isinstance(out, tuple) else out
                if ref is None:
                    ref, t_ref = first, t
                diff = float(np.max(np.abs(first - ref)))
                print(f"{name},{n}x{2 * n},{b},{t:.6f},{t_ref / t:.2f},{diff:.2e}")


if __name__ == "__main__":
    main()
