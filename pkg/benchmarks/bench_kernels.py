"""Compare the compiled kernels with the pure-Python (numpy) fallback.

    python3 benchmarks/bench_kernels.py [--repeat 200]

Shapes follow the search network: per-series temporal convolution over
batch * nodes series of 12 steps, and top-k over an N x N adjacency.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from mtsnas.kernels import _reference

try:
    from mtsnas.kernels import _ckernels
except ImportError:
    _ckernels = None


def best_ms(fn, repeat: int) -> float:
    timer = timeit.Timer(fn)
    loops, _ = timer.autorange()
    runs = max(3, repeat // max(loops, 1))
    return min(timer.repeat(repeat=runs, number=loops)) / loops * 1e3


def conv_cases():
    rng = np.random.default_rng(0)
    for cin in (8, 16, 32):
        x = rng.standard_normal((16 * 8, 12, cin))
        w = rng.standard_normal((3, cin, cin))
        g = rng.standard_normal((16 * 8, 12, cin))
        yield f"conv fwd  m=128 L=12 c={cin}", x, w, g


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; only the fallback can be timed")
    rows = []
    for label, x, w, g in conv_cases():
        ref_out, ref_cache = _reference.conv1d_forward(x, w)
        r_fwd = best_ms(lambda: _reference.conv1d_forward(x, w), args.repeat)
        r_bwd = best_ms(lambda: _reference.conv1d_backward(ref_cache, w, g), args.repeat)
        if _ckernels is not None:
            c_out, c_cache = _ckernels.conv1d_forward(x, w)
            assert np.allclose(c_out, ref_out, rtol=0, atol=1e-10)
            c_fwd = best_ms(lambda: _ckernels.conv1d_forward(x, w), args.repeat)
            c_bwd = best_ms(lambda: _ckernels.conv1d_backward(c_cache, w, g), args.repeat)
        else:
            c_fwd = c_bwd = float("nan")
        rows.append((label, r_fwd, c_fwd))
        rows.append((label.replace("fwd", "bwd"), r_bwd, c_bwd))
    rng = np.random.default_rng(1)
    for n, tau in ((8, 8), (64, 20), (207, 20)):
        a = rng.random((n, n))
        r = best_ms(lambda: _reference.topk_mask(a, tau), args.repeat)
        c = best_ms(lambda: _ckernels.topk_mask(a, tau), args.repeat) if _ckernels is not None else float("nan")
        rows.append((f"top-k     N={n} tau={tau}", r, c))

    print(f"{'kernel':<28}{'python ms':>12}{'compiled ms':>14}{'speed-up':>10}")
    for label, r, c in rows:
        print(f"{label:<28}{r:>12.4f}{c:>14.4f}{r / c:>9.2f}x")


if __name__ == "__main__":
    main()
