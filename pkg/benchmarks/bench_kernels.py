"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints the median time per call for each kernel and backend. The host
matters a lot here; treat single runs as rough.
"""
import argparse
import statistics
import time

import numpy as np

from anytimecv import _npkernels

try:
    from anytimecv import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _median_time(fn, repeat):
    fn()  # warm up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def cases():
    rng = np.random.default_rng(0)
    img = rng.random((128, 128, 3))
    small = rng.random((64, 64, 3))
    a = np.deg2rad(20)
    m = np.array([np.cos(a), -np.sin(a), 10.0, np.sin(a), np.cos(a), -8.0])
    feat = rng.random((32, 32, 32, 8))
    out, arg = _npkernels.maxpool2x2_forward(feat)
    dout = rng.random(out.shape)
    return {
        "resize 128->64": lambda k: k.resize_bilinear(img, 64, 64),
        "warp 64x64": lambda k: k.warp_affine(small, m, 0.5),
        "maxpool fwd 32x32x32x8": lambda k: k.maxpool2x2_forward(feat),
        "maxpool bwd 32x32x32x8": lambda k: k.maxpool2x2_backward(dout, arg, 32, 32),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = [("numpy", _npkernels)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))
    else:
        print("compiled extension not available; numpy only")
    print(f"{'kernel':<26}" + "".join(f"{b:>12}" for b, _ in backends) + "   speedup")
    for name, fn in cases().items():
        ts = [_median_time(lambda: fn(k), args.repeat) for _, k in backends]
        row = f"{name:<26}" + "".join(f"{t * 1e3:>10.3f}ms" for t in ts)
        if len(ts) == 2:
            row += f"   {ts[0] / ts[1]:6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
