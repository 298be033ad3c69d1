"""Time the separable blur-and-decimate kernel on both backends.

Runs the numba kernel and the pure-numpy fallback on the same cube, checks
they agree, and prints per-call wall time. The first numba call (JIT compile)
is excluded from the timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hsfuse import _accel


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description="numba vs numpy blur/decimate benchmark")
    parser.add_argument("--size", type=int, default=256, help="HR height and width")
    parser.add_argument("--bands", type=int, default=172)
    parser.add_argument("--sigma", type=float, default=3.0)
    parser.add_argument("--step", type=int, default=4)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cube = rng.random((args.size, args.size, args.bands))
    k = _accel.gaussian_kernel1d(args.sigma)
    offset = args.step // 2

    def run_numpy():
        return _accel._filter_decimate_numpy(cube, k, args.step, offset)

    ref = run_numpy()
    print(f"cube={cube.shape} kernel={k.size} taps step={args.step}")
    t_np = _time(run_numpy, args.repeats)
    print(f"numpy   {t_np * 1e3:9.2f} ms/call")
    if not _accel.HAVE_NUMBA:
        print("numba   unavailable")
        return

    def run_numba():
        return _accel._filter_decimate_numba(cube, k, args.step, offset)

    t0 = time.perf_counter()
    out = run_numba()
    compile_s = time.perf_counter() - t0
    err = float(np.max(np.abs(out - ref)))
    t_nb = _time(run_numba, args.repeats)
    print(f"numba   {t_nb * 1e3:9.2f} ms/call  (first call {compile_s:.2f} s)")
    print(f"max |numba - numpy| = {err:.2e}")
    print(f"speedup {t_np / t_nb:.2f}x")


if __name__ == "__main__":
    main()
