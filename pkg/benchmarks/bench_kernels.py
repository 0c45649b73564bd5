"""Time every hot kernel on its numba and numpy paths, side by side.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --n-facts 50000 --repeats 9

Each kernel is timed best-of-N on identical inputs under both
implementations (flipping ``accel.USE_NUMBA`` in place), and the two
results are compared; the agreement column should sit at float rounding
noise. Without numba installed only the numpy column is reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from selprover import accel


def build_cases(rng: np.random.Generator, args: argparse.Namespace):
    F, C, D = args.n_facts, args.n_consts, args.dim
    emb = rng.normal(0.0, 0.4, size=(args.n_preds, D))
    cemb = rng.normal(0.0, 0.4, size=(C, D))
    Kc = accel.kernel_matrix(cemb, cemb)
    psim = rng.uniform(0.05, 1.0, size=F)
    asim = rng.uniform(0.05, 1.0, size=F)
    keys = rng.integers(0, C, size=F)
    grp = rng.integers(0, C, size=F)
    M = rng.uniform(0.0, 1.0, size=(args.n_side, args.n_side))
    N = rng.uniform(0.0, 1.0, size=(args.n_side, args.n_side))
    v = rng.uniform(0.0, 1.0, size=args.n_side)
    sq = max(1, args.n_side // 4)
    A = rng.uniform(0.0, 1.0, size=(sq, sq))
    B = rng.uniform(0.0, 1.0, size=(sq, sq))
    return [
        (f"kernel_matrix {args.n_preds}x{D}",
         lambda: accel.kernel_matrix(emb, emb)),
        (f"sweep_scores F={F}",
         lambda: accel.sweep_scores(0.9, psim, asim, asim, 0.1, 17)),
        (f"scatter_max F={F}",
         lambda: accel.scatter_max(keys, psim, C)),
        (f"strict_group F={F} C={C}",
         lambda: accel.strict_group(psim, keys, grp, Kc)),
        (f"maxmin_matvec {args.n_side}^2",
         lambda: accel.maxmin_matvec(M, v)),
        (f"maxmin_vecmat {args.n_side}^2",
         lambda: accel.maxmin_vecmat(v, M)),
        (f"maxmin_matmat {sq}^3",
         lambda: accel.maxmin_matmat(A, B)),
        (f"kernel+matmat pipeline",
         lambda: accel.maxmin_matmat(accel.kernel_matrix(cemb, cemb), N[:C, :C])),
    ]


def best_of(fn, repeats: int) -> tuple[float, object]:
    out = fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
        out = result
    return best * 1e3, out


def max_delta(a, b) -> float:
    if isinstance(a, tuple):
        return max(max_delta(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64)
                               - np.asarray(b, dtype=np.float64)))) if np.size(a) else 0.0


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-facts", type=int, default=20000)
    parser.add_argument("--n-consts", type=int, default=128)
    parser.add_argument("--n-preds", type=int, default=400)
    parser.add_argument("--n-side", type=int, default=1200)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=0)
    args = parser.parse_args()

    accel.set_threads(args.threads)
    cases = build_cases(np.random.default_rng(args.seed), args)

    if not accel.HAVE_NUMBA:
        print("numba not installed; timing the numpy path only\n")
        print(f"{'kernel':<28} {'numpy ms':>10}")
        accel.USE_NUMBA = False
        for name, fn in cases:
            ms, _ = best_of(fn, args.repeats)
            print(f"{name:<28} {ms:>10.3f}")
        return

    accel.USE_NUMBA = True
    accel.warmup()
    for _, fn in cases:   # compile the exact benched signatures
        fn()

    rows = []
    for name, fn in cases:
        accel.USE_NUMBA = True
        t_nb, out_nb = best_of(fn, args.repeats)
        accel.USE_NUMBA = False
        t_np, out_np = best_of(fn, args.repeats)
        rows.append((name, t_nb, t_np, t_np / t_nb, max_delta(out_nb, out_np)))
    accel.USE_NUMBA = True

    print(f"{'kernel':<28} {'numba ms':>10} {'numpy ms':>10} "
          f"{'speedup':>8} {'max|delta|':>11}")
    for name, t_nb, t_np, speed, delta in rows:
        print(f"{name:<28} {t_nb:>10.3f} {t_np:>10.3f} {speed:>7.2f}x {delta:>11.2e}")


if __name__ == "__main__":
    main()
