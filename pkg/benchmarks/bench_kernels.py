"""Compiled vs numpy kernels: full-catalogue ranking and Sinkhorn codes.

    python benchmarks/bench_kernels.py [--users 256] [--items 12101] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from s4rec import kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--users", type=int, default=256)
    ap.add_argument("--items", type=int, default=12101)
    ap.add_argument("--history", type=int, default=9)
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--k", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    logits = rng.normal(size=(args.users, args.items)).astype(np.float32)
    targets = rng.integers(0, args.items, size=args.users)
    excluded = np.zeros((args.users, args.items), dtype=np.uint8)
    for i in range(args.users):
        excluded[i, rng.integers(0, args.items, size=args.history)] = 1
    excluded[np.arange(args.users), targets] = 0
    scores = rng.uniform(-1, 1, size=(args.batch, args.k))

    impls = kernels.implementations()
    cases = {
        f"rank_rows {args.users}x{args.items}": lambda m: kernels.rank_rows(logits, targets, excluded, impl=m),
        f"sinkhorn {args.batch}x{args.k} (3 iters)": lambda m: kernels.sinkhorn(scores, 0.05, 3, impl=m),
    }
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<34}" + "".join(f"{name:>12}" for name in impls) + "   speedup")
    for label, fn in cases.items():
        ref = None
        times = {}
        for name, mod in impls.items():
            out = fn(mod)
            if ref is None:
                ref = out
            else:
                assert np.allclose(out, ref, rtol=1e-12), f"{label}: backends disagree"
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<34}" + "".join(f"{times[n] * 1e3:>10.2f}ms" for n in impls) + f"{speed:>9.2f}x")


if __name__ == "__main__":
    main()
