"""Time every hot kernel on each importable backend.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from msif import kernels


def cases(rng):
    img = rng.random((120, 160))
    batch = rng.random((8, 16, 16, 30))
    cols_shape = (8, 16, 16, 30)
    ys, xs = np.mgrid[0:120, 0:160].astype(np.float64)
    xs += rng.uniform(-2, 2, xs.shape)
    ys += rng.uniform(-2, 2, ys.shape)
    s = [rng.random((120, 160)) for _ in range(5)]
    s[0] += 1.0
    s[2] += 1.0

    def f64(a):
        return np.ascontiguousarray(a, dtype=np.float64)

    return {
        "im2col 8x16x16x30 k3 s2": lambda b: b.im2col(batch, 3, 3, 2, 1),
        "col2im 8x16x16x30 k3 s2": lambda b, c={}: b.col2im(
            c.setdefault(b, f64(b.im2col(batch, 3, 3, 2, 1))), *cols_shape, 3, 3, 2, 1),
        "bilinear_sample 120x160": lambda b: b.bilinear_sample(img, xs, ys),
        "box_sum 120x160 r7": lambda b: b.box_sum(img, 7),
        "lk_solve 120x160": lambda b: b.lk_solve(*s, 1e-4),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    found = kernels.backends()
    names = sorted(found)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':28s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for n in names:
            fn(found[n])
            times[n] = min(timeit.repeat(lambda: fn(found[n]), number=1, repeat=args.repeat)) * 1e3
        row = f"{label:28s}" + "".join(f"{times[n]:10.3f}ms" for n in names)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
