"""Compiled vs numpy kernels on the default ring (N = 8192, 4 RNS rows).

    python benchmarks/bench_kernels.py [--repeat 20]

Prints one row per kernel with the median seconds per call for each
backend and the speedup. Both backends are checked for identical output
before timing.
"""

import argparse
import statistics
import time

import numpy as np

from tipmarket.ckks import default_params
from tipmarket.ckks.rns import get_context
from tipmarket.kernels import get_backend


def _time(fn, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    ctx = get_context(default_params())
    rows = tuple(range(len(ctx.moduli)))
    psi, psi_s, ipsi, ipsi_s, q, ninv, ninv_s = ctx._table(rows)
    rng = np.random.default_rng(0)
    a = np.stack([rng.integers(0, int(m), ctx.n, dtype=np.uint64) for m in ctx.moduli])
    b = np.stack([rng.integers(0, int(m), ctx.n, dtype=np.uint64) for m in ctx.moduli])
    c = np.array([int(rng.integers(0, int(m))) for m in ctx.moduli], dtype=np.uint64)

    try:
        backends = {"native": get_backend("native")}
    except ImportError:
        backends = {}
        print("compiled backend not built; timing the numpy fallback only")
    backends["python"] = get_backend("python")

    cases = {
        "ntt_forward": lambda k: (lambda x=a.copy(): k["ntt_forward"](x, psi, psi_s, q)),
        "ntt_inverse": lambda k: (lambda x=a.copy(): k["ntt_inverse"](x, ipsi, ipsi_s, q, ninv, ninv_s)),
        "mulmod": lambda k: (lambda o=np.empty_like(a): k["mulmod"](a, b, q, o)),
        "mulmod_acc": lambda k: (lambda acc=a.copy(): k["mulmod_acc"](acc, a, b, q)),
        "mulmod_scalar": lambda k: (lambda o=np.empty_like(a): k["mulmod_scalar"](a, c, q, o)),
    }

    # same inputs, same outputs
    if "native" in backends:
        for name in ("ntt_forward", "mulmod"):
            outs = []
            for k in backends.values():
                x = a.copy()
                if name == "ntt_forward":
                    k[name](x, psi, psi_s, q)
                else:
                    o = np.empty_like(a)
                    k[name](a, b, q, o)
                    x = o
                outs.append(x)
            assert np.array_equal(outs[0], outs[1]), name

    print(f"{'kernel':<15}" + "".join(f"{n + ' s':>14}" for n in backends) + f"{'speedup':>10}")
    for name, make in cases.items():
        t = {n: _time(make(k), args.repeat) for n, k in backends.items()}
        speed = t["python"] / t["native"] if "native" in t else float("nan")
        print(f"{name:<15}" + "".join(f"{v:>14.3e}" for v in t.values()) + f"{speed:>10.1f}")


if __name__ == "__main__":
    main()
