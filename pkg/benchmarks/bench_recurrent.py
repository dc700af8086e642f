"""Benchmark the recurrent-scan kernels: compiled extension vs numpy fallback.

Usage: python benchmarks/bench_recurrent.py [--frames 1500] [--repeats 5]
"""
import argparse
import time

import numpy as np

from difftrain.kernels import available_backends

WIDTHS = (40, 80, 120)


def _case(rng, frames, width):
    # fan-scaled recurrent weights keep the dynamics contractive; with larger
    # gains the recurrence turns chaotic and the two backends' last-ulp
    # rounding differences amplify over long sequences
    gx = rng.normal(size=(frames, 3 * width))
    limit = np.sqrt(6.0 / (2 * width))
    uz, ur, uc = (rng.uniform(-limit, limit, size=(width, width))
                  for _ in range(3))
    h0 = np.zeros(width)
    dh = rng.normal(size=(frames, width))
    return gx, uz, ur, uc, h0, dh


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=1500)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = available_backends()
    if "compiled" not in backends:
        print("note: compiled extension unavailable, benchmarking numpy only")
    rng = np.random.default_rng(0)
    print(f"{'units':>6} {'pass':>9}", *(f"{name:>12}" for name in backends),
          f"{'speedup':>9}" if len(backends) > 1 else "")
    for width in WIDTHS:
        gx, uz, ur, uc, h0, dh = _case(rng, args.frames, width)
        caches = {}
        times = {"forward": {}, "backward": {}}
        for name, mod in backends.items():
            mod.gru_forward_scan(gx, uz, ur, uc, h0)  # warm up
            times["forward"][name] = _best_of(
                lambda m=mod: m.gru_forward_scan(gx, uz, ur, uc, h0),
                args.repeats)
            caches[name] = mod.gru_forward_scan(gx, uz, ur, uc, h0)
            h, z, r, c = caches[name]
            times["backward"][name] = _best_of(
                lambda m=mod: m.gru_backward_scan(dh, z, r, c, h, h0,
                                                  uz, ur, uc), args.repeats)
        if len(backends) > 1:
            ref = caches["numpy"][0]
            drift = np.abs(caches["compiled"][0] - ref).max()
            if drift > 1e-9:
                raise AssertionError(f"backends disagree by {drift}")
        for direction in ("forward", "backward"):
            row = times[direction]
            cells = "".join(f"{row[name] * 1e3:>10.2f}ms" for name in backends)
            speed = ""
            if len(backends) > 1:
                speed = f"{row['numpy'] / row['compiled']:>8.1f}x"
            print(f"{width:>6} {direction:>9}{cells}{speed}")


if __name__ == "__main__":
    main()
