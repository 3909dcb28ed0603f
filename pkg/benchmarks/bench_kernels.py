"""Compiled vs pure-numpy kernels.

    python3 benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 5]

Times each kernel on Neumann Laplacian stencils of several sizes and one
full time step of ``bounded_m15`` under each backend (the step is run in a
subprocess so the backend can be switched through ``KSNS_PURE_PYTHON``).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ksns import _kernels_py as pure

try:
    from ksns import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

STEP_SNIPPET = """
import time
from ksns import scenarios
from ksns.stepper import StepControl, advance, initial_state
sc = scenarios.build("bounded_m15", nx={nx})
s = initial_state(sc.n0, sc.c0, sc.u0, sc.params)
ctl = StepControl(dt=1e-4, adaptive=False)
s = advance(s, sc.params, ctl)
t = time.perf_counter()
for _ in range({steps}):
    s = advance(s, sc.params, ctl)
print((time.perf_counter() - t) / {steps})
"""


def laplacian_arrays(n):
    h = 1.0 / n
    wx = np.full((n, n + 1), 1.0 / h**2)
    wy = np.full((n + 1, n), 1.0 / h**2)
    wx[:, [0, -1]] = 0.0
    wy[[0, -1], :] = 0.0
    diag = 1.0 + (wx[:, :-1] + wx[:, 1:] + wy[:-1, :] + wy[1:, :])
    return diag, wx, wy


def best(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_kernels(sizes, repeat):
    rows = []
    rng = np.random.default_rng(0)
    for n in sizes:
        diag, wx, wy = laplacian_arrays(n)
        x = rng.standard_normal((n, n))
        b = rng.standard_normal((n, n))
        inv_m = 1.0 / diag
        vel = rng.standard_normal((n, n + 1))
        vel[:, [0, -1]] = 0.0
        cases = {
            "stencil_apply": lambda k: k.stencil_apply(diag, wx, wy, x),
            "pcg_smoothed(50 it)": lambda k: k.pcg_smoothed(diag, wx, wy, b, np.zeros_like(b), inv_m, 0.0, 50),
            "upwind_flux": lambda k: k.upwind_flux(vel, x, 1),
        }
        for name, call in cases.items():
            tp = best(lambda: call(pure), repeat)
            tc = best(lambda: call(compiled), repeat) if compiled is not None else float("nan")
            rows.append((name, n, tp, tc))
    return rows


def bench_step(nx, steps):
    out = {}
    for label, flag in (("python", "1"), ("cython", "0")):
        env = dict(os.environ, KSNS_PURE_PYTHON=flag)
        res = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(nx=nx, steps=steps)],
                             capture_output=True, text=True, env=env, check=True)
        out[label] = float(res.stdout.strip())
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--step-nx", type=int, default=64)
    ap.add_argument("--steps", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the numpy backend is timed")
    print(f"{'kernel':<22}{'n':>6}{'numpy [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    for name, n, tp, tc in bench_kernels(args.sizes, args.repeat):
        print(f"{name:<22}{n:>6}{1e3 * tp:>14.4f}{1e3 * tc:>14.4f}{tp / tc:>10.2f}")
    if compiled is not None:
        st = bench_step(args.step_nx, args.steps)
        print(f"\nfull step, bounded_m15 {args.step_nx}^2: numpy {1e3 * st['python']:.1f} ms, "
              f"cython {1e3 * st['cython']:.1f} ms, speedup {st['python'] / st['cython']:.2f}")


if __name__ == "__main__":
    main()
