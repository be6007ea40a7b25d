"""Compiled vs pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--sides 32 64 128 224]

Times the fuzzy filter over a few image sizes and the UMAP layout optimizer
on a fitted graph, checks that both backends return identical arrays, and
prints one row per case.
"""
import argparse
import time

import numpy as np

from deepvc import _kernels
from deepvc.data import make_synthetic
from deepvc.embed.umap import UMAP
from deepvc.preprocess import fuzzy_filter


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_fuzzy(sides, repeat):
    rows = []
    for side in sides:
        x = make_synthetic(n_per_class=1, side=side, seed=7)[0].pixels
        t_py, y_py = best_of(lambda: fuzzy_filter(x, backend="python"), 1 if side > 128 else repeat)
        t_c, y_c = best_of(lambda: fuzzy_filter(x, backend="cython"), repeat)
        rows.append((f"fuzzy_filter {side}x{side}", t_py, t_c, np.array_equal(y_py, y_c)))
    return rows


def bench_layout(n_points, n_epochs, repeat):
    rng = np.random.default_rng(0)
    centres = rng.normal(0, 4, (5, 20))
    x = np.concatenate([c + rng.normal(size=(n_points // 5, 20)) for c in centres])

    def fit(backend):
        return UMAP(n_neighbors=15, n_epochs=n_epochs, seed=0, backend=backend).fit_transform(x)

    t_py, y_py = best_of(lambda: fit("python"), 1)
    t_c, y_c = best_of(lambda: fit("cython"), repeat)
    return [(f"umap fit {len(x)} pts, {n_epochs} epochs", t_py, t_c, np.array_equal(y_py, y_c))]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sides", type=int, nargs="+", default=[32, 64, 128, 224])
    ap.add_argument("--points", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()

    if _kernels.COMPILED_KERNELS is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")

    rows = bench_fuzzy(args.sides, args.repeat) + bench_layout(args.points, args.epochs, args.repeat)
    print(f"{'case':<34} {'python s':>10} {'cython s':>10} {'speedup':>8}  identical")
    for name, t_py, t_c, same in rows:
        print(f"{name:<34} {t_py:>10.4f} {t_c:>10.4f} {t_py / t_c:>7.1f}x  {same}")


if __name__ == "__main__":
    main()
