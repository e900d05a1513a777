#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Times the im2col/col2im hot kernels and a full conv forward+backward at the
production layer sizes, verifies both backends agree, and prints a table.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from yieldnet.tensor import _conv_np
from yieldnet.tensor.layers import conv_geometry

try:
    from yieldnet.tensor import _convkern

    BACKENDS = [("numpy", _conv_np), ("compiled", _convkern)]
except ImportError:
    _convkern = None
    BACKENDS = [("numpy", _conv_np)]

# (name, batch, H, W, Cin, k, stride, padding, Cout): the first backbone
# conv dominates runtime; the small late conv shows per-call overhead.
LAYERS = [
    ("backbone conv1", 32, 30, 32, 9, 7, 2, "valid", 48),
    ("backbone conv2", 32, 12, 13, 48, 5, 2, "valid", 64),
    ("backbone conv4", 32, 2, 3, 96, 3, 1, "same", 128),
    ("head conv", 32, 2, 3, 128, 3, 1, "same", 148),
]


def bench(fn, repeats=30):
    fn()  # warmup
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3  # ms


def conv_pass(mod, x, w, stride, pads, oh, ow):
    n = x.shape[0]
    kh, kw, cin, cout = w.shape
    cols = mod.im2col(x, kh, kw, stride, pads, oh, ow)
    y = cols @ w.reshape(-1, cout)
    dy = y  # stand-in gradient of the same shape
    dw = cols.T @ dy
    dcols = dy @ w.reshape(-1, cout).T
    dx = mod.col2im(np.ascontiguousarray(dcols), x.shape, kh, kw, stride,
                    pads, oh, ow)
    return y, dw, dx


def main():
    rng = np.random.default_rng(0)
    print(f"{'layer':<16} {'kernel':<20} " +
          " ".join(f"{name:>10}" for name, _ in BACKENDS) + "   speedup")
    for name, n, h, w_, cin, k, stride, padding, cout in LAYERS:
        oh, ow, pads = conv_geometry(h, w_, k, k, stride, padding)
        x = rng.standard_normal((n, h, w_, cin))
        w = rng.standard_normal((k, k, cin, cout))
        cols_ref = None
        rows = {}
        for bname, mod in BACKENDS:
            cols = mod.im2col(x, k, k, stride, pads, oh, ow)
            if cols_ref is None:
                cols_ref = cols
            else:
                assert np.array_equal(cols, cols_ref), "backends disagree"
            rows[bname] = {
                "im2col": bench(lambda m=mod: m.im2col(x, k, k, stride, pads, oh, ow)),
                "col2im": bench(lambda m=mod, c=cols: m.col2im(
                    c, x.shape, k, k, stride, pads, oh, ow)),
                "fwd+bwd": bench(lambda m=mod: conv_pass(
                    m, x, w, stride, pads, oh, ow), repeats=10),
            }
        for kernel in ("im2col", "col2im", "fwd+bwd"):
            line = f"{name:<16} {kernel:<20} "
            line += " ".join(f"{rows[b][kernel]:>8.2f}ms" for b, _ in BACKENDS)
            if len(BACKENDS) == 2:
                ratio = rows["numpy"][kernel] / rows["compiled"][kernel]
                line += f"   {ratio:>5.2f}x"
            print(line)
    if _convkern is None:
        print("\ncompiled backend not built; showing numpy only")


if __name__ == "__main__":
    main()
