#!/usr/bin/env python3
"""Benchmark the event-generation kernels: compiled extension versus the
pure-numpy reference.

Usage: python benchmarks/bench_eventsim.py [--grid 64] [--frames 256]

The workload is a moving-PSF intensity video (the tracking renderer's
inner loop). Both backends produce bitwise-identical outputs; only the
wall time differs.
"""

import argparse
import time

import numpy as np

from ceoptics._kernels import get_backends
from ceoptics.config import OpticalConfig
from ceoptics.optics import Mask, compute_psf, make_pupil_grid


def make_video(grid, n_frames):
    cfg = OpticalConfig.default(grid=grid)
    g = make_pupil_grid(cfg)
    mask = Mask.open_aperture(g)
    rng = np.random.default_rng(0)
    pos = np.zeros(3)
    frames = []
    for _ in range(n_frames):
        pos = pos + rng.normal(0, 30e-9, 3)
        frames.append(compute_psf(cfg, g, mask, tuple(pos)).h + cfg.beta_pixel)
    stack = np.log(np.stack(frames))
    noisy = stack + rng.normal(0, 0.02, stack.shape)
    return np.ascontiguousarray(noisy), np.arange(n_frames, dtype=float)


def bench(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=int, default=64)
    ap.add_argument("--frames", type=int, default=256)
    args = ap.parse_args()

    logl, times = make_video(args.grid, args.frames)
    backends = dict(get_backends())
    print(f"video: {args.frames} frames of {args.grid}x{args.grid}, "
          f"threshold 0.1, log-noise 0.02")
    print(f"{'mode':10s} {'backend':10s} {'time':>10s} {'events':>10s} {'speedup':>8s}")
    results = {}
    for mode in ("stream", "binned"):
        base_time = None
        for name in ("python", "compiled"):
            if name not in backends:
                continue
            mod = backends[name]

            def run():
                l_ref = logl[0].copy()
                t_last = np.full(logl.shape[1:], -1e300)
                if mode == "stream":
                    return mod.stream_kernel(logl, times, 0.1, 0.0, l_ref, t_last)
                return mod.bin_kernel(logl, times, 0.1, 0.0, l_ref, t_last, 16)

            dt, out = bench(run)
            n_events = (len(out[0]) if mode == "stream"
                        else int(np.abs(out).sum()))
            results[(mode, name)] = out
            if base_time is None:
                base_time = dt
                speedup = ""
            else:
                speedup = f"{base_time / dt:6.1f}x"
            print(f"{mode:10s} {name:10s} {dt * 1e3:8.1f}ms {n_events:10d} {speedup:>8s}")
    for mode in ("stream", "binned"):
        a = results.get((mode, "python"))
        b = results.get((mode, "compiled"))
        if a is not None and b is not None:
            if mode == "stream":
                same = all(np.array_equal(x, y) for x, y in zip(a, b))
            else:
                same = np.array_equal(a, b)
            print(f"{mode}: outputs bitwise identical: {same}")


if __name__ == "__main__":
    main()
