"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rows 4096] [--cols 64] [--repeat 20]

Prints one line per kernel and backend, plus the speedup when both exist,
and checks that both backends agree before timing.
"""
import argparse
import timeit

import numpy as np

from s2srec2.numeric.kernels import available_backends


def cases(rows, cols, rng):
    x = rng.standard_normal((rows, cols))
    mask = (rng.random((rows, cols)) < 0.8).astype(np.uint8)
    mask[:, 0] = 1
    no_mask = np.zeros((0, 0), dtype=np.uint8)
    gamma = rng.standard_normal(cols)
    beta = rng.standard_normal(cols)
    gy = rng.standard_normal((rows, cols))

    def prep(mod):
        y = mod.softmax_fwd(x, no_mask)
        _, xhat, rstd = mod.layernorm_fwd(x, gamma, beta, 1e-5)
        return {
            "softmax_fwd": lambda: mod.softmax_fwd(x, no_mask),
            "softmax_fwd_masked": lambda: mod.softmax_fwd(x, mask),
            "softmax_bwd": lambda: mod.softmax_bwd(y, gy),
            "layernorm_fwd": lambda: mod.layernorm_fwd(x, gamma, beta, 1e-5),
            "layernorm_bwd": lambda: mod.layernorm_bwd(gy, xhat, rstd, gamma),
        }

    return prep


def _flat(out):
    return np.concatenate([np.ravel(o) for o in out]) if isinstance(out, tuple) else np.ravel(out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--cols", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    backends = available_backends()
    prep = cases(args.rows, args.cols, np.random.default_rng(0))
    fns = {name: prep(mod) for name, mod in backends.items()}
    print(f"backends: {', '.join(backends)}  shape=({args.rows}, {args.cols})  repeat={args.repeat}")
    for kernel in fns["numpy"]:
        times = {}
        for name in backends:
            fn = fns[name][kernel]
            times[name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        line = f"{kernel:20s}" + "".join(f"  {n}={t * 1e3:8.3f} ms" for n, t in times.items())
        if "cython" in times:
            diff = np.max(np.abs(_flat(fns["cython"][kernel]()) - _flat(fns["numpy"][kernel]())))
            line += f"  speedup={times['numpy'] / times['cython']:5.2f}x  max|diff|={diff:.1e}"
        print(line)


if __name__ == "__main__":
    main()
