"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Both implementations are importable regardless of TFDYN_DISABLE_NUMBA; the
flag only picks which one the package uses.  First calls (JIT compile) are
excluded from the timings.
"""

import argparse
import time

import numpy as np

from tfdyn import _kernels
from tfdyn.maxmargin import pool_dataset
from tfdyn.model import ModelParams
from tfdyn.sequences import build_even_pairs_dataset, build_parity_cot_dataset


def best_of(fn, repeat):
    fn()  # warm-up / compile
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def random_params(d, rng, lam=2.0):
    return ModelParams(rng.normal(size=d), rng.normal(scale=0.3, size=(d, d)), lam)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _kernels.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)

    rows = []
    for name, ds in [("even_pairs L_max=6", build_even_pairs_dataset(6)),
                     ("even_pairs L_max=12", build_even_pairs_dataset(12)),
                     ("parity L0=4", build_parity_cot_dataset(4)),
                     ("parity L0=6", build_parity_cot_dataset(6))]:
        p = random_params(ds.d, rng)
        a = (ds.idx, ds.lengths, ds.labels, ds.weights, ds.group_starts, p.u, p.W, p.lam)
        t_np = best_of(lambda: _kernels.loss_and_grads_numpy(*a), args.repeat)
        t_nb = best_of(lambda: _kernels.loss_and_grads_numba(*a), args.repeat)
        rows.append((f"loss+grads  {name} (n={len(ds)})", t_np, t_nb))

        pooled = pool_dataset(p, ds)
        V, y = pooled.points, pooled.labels
        sqn = np.einsum("ij,ij->i", V, V)

        def sweeps(kernel):
            alpha, w = np.zeros(len(y)), np.zeros(V.shape[1])
            return lambda: kernel(V, y, sqn, alpha, w, 20)

        t_np = best_of(sweeps(_kernels.dca_sweeps_numpy), max(1, args.repeat // 4))
        t_nb = best_of(sweeps(_kernels.dca_sweeps_numba), args.repeat)
        rows.append((f"20 DCA sweeps {name}", t_np, t_nb))

    print(f"{'kernel':45s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for label, t_np, t_nb in rows:
        print(f"{label:45s} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
