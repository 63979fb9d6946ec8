"""Compare the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Shapes follow the full encoder on a batch of 8 pairs at 64x64 (both dates
stacked, so N=16).
"""

import argparse
import json
import sys
import timeit

import numpy as np

from donanet import _kernels_py

try:
    from donanet import _kernels
except ImportError:
    _kernels = None

CASES = [
    # name, input shape (already padded), kernel, stride
    ("stem 7x7/2", (16, 3, 70, 70), 7, 2),
    ("stage1 3x3", (16, 64, 18, 18), 3, 1),
    ("stage2 3x3/2", (16, 64, 18, 18), 3, 2),
    ("stage3 3x3", (16, 256, 6, 6), 3, 1),
]


def bench(fn, repeat):
    timer = timeit.Timer(fn)
    n, _ = timer.autorange()
    return min(timer.repeat(repeat, n)) / n


def run(repeat=5, dtype=np.float32):
    rng = np.random.default_rng(0)
    rows = []
    for name, shape, k, s in CASES:
        xp = rng.normal(size=shape).astype(dtype)
        cols = _kernels_py.im2col(xp, k, s)
        row = {"kernel": "im2col", "case": name}
        row["python"] = bench(lambda: _kernels_py.im2col(xp, k, s), repeat)
        if _kernels is not None:
            assert np.array_equal(_kernels.im2col(xp, k, s), cols)
            row["compiled"] = bench(lambda: _kernels.im2col(xp, k, s), repeat)
        rows.append(row)
        row = {"kernel": "col2im", "case": name}
        row["python"] = bench(lambda: _kernels_py.col2im(cols, shape, k, s), repeat)
        if _kernels is not None:
            row["compiled"] = bench(lambda: _kernels.col2im(cols, shape, k, s), repeat)
        rows.append(row)
    x = rng.normal(size=(16, 64, 32, 32)).astype(dtype)
    out, idx = _kernels_py.maxpool2_forward(x)
    g = rng.normal(size=out.shape).astype(dtype)
    for kname, fpy, fc in (
        ("maxpool fwd", lambda: _kernels_py.maxpool2_forward(x), lambda: _kernels.maxpool2_forward(x)),
        ("maxpool bwd", lambda: _kernels_py.maxpool2_backward(g, idx, x.shape),
         lambda: _kernels.maxpool2_backward(g, idx, x.shape)),
    ):
        row = {"kernel": kname, "case": "16x64x32x32", "python": bench(fpy, repeat)}
        if _kernels is not None:
            row["compiled"] = bench(fc, repeat)
        rows.append(row)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write the timings here")
    args = ap.parse_args(argv)
    rows = run(args.repeat)
    if _kernels is None:
        print("compiled extension not built; timing the fallback only", file=sys.stderr)
    print(f"{'kernel':<12} {'case':<14} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for r in rows:
        c = r.get("compiled")
        comp = "-" if c is None else "%.3f" % (1e3 * c)
        speed = "-" if c is None else "%.1fx" % (r["python"] / c)
        print(f"{r['kernel']:<12} {r['case']:<14} {1e3 * r['python']:>10.3f} {comp:>12} {speed:>8}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
