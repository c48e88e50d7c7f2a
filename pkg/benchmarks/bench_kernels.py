"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N] [--scale S]

Both variants run on the same inputs; results are checked for agreement
before timing.  The first numba call (compilation) is excluded.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from sleepgeom import kernels


def cases(scale: float, rng: np.random.Generator):
    rows, cols = int(100 * scale), 2100
    khat = rng.uniform(-10, 2110, size=(rows, cols))
    power = rng.random((rows, cols))
    yield "squeeze_rows", (khat, power, 2100), kernels.squeeze_rows_numpy, kernels.squeeze_rows_numba

    J = int(600 * scale)
    U = rng.normal(size=(J, 10))
    A = rng.normal(size=(J, 10, 10))
    P = np.einsum("jab,jcb->jac", A, A)
    yield "local_md_sq", (U, P), kernels.local_md_sq_numpy, kernels.local_md_sq_numba

    T = int(2000 * scale)
    lt = np.log(rng.dirichlet(np.ones(5), 5))
    le = np.log(rng.dirichlet(np.ones(64), 5))
    obs = rng.integers(0, 64, T)
    yield "viterbi_log", (lt[0].copy(), lt, le, obs), kernels.viterbi_log_numpy, kernels.viterbi_log_numba

    X = rng.normal(size=(int(20000 * scale), 30))
    C = rng.normal(size=(64, 30))
    yield "nearest_centroid", (X, C), kernels.nearest_centroid_numpy, kernels.nearest_centroid_numba


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="multiply problem sizes")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, inputs, f_np, f_nb in cases(args.scale, rng):
        ref, got = f_np(*inputs), f_nb(*inputs)  # also compiles the numba path
        if not _same(ref, got):
            raise SystemExit(f"{name}: numba and numpy results differ")
        t_np = min(timeit.repeat(lambda: f_np(*inputs), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=1, repeat=args.repeat))
        print(f"{name:<18}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
