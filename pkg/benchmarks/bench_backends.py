"""Compare the compiled and pure-Python kernels on k-NN queries and training epochs.

    python3 benchmarks/bench_backends.py [--n 2000] [--repeats 5]
"""

import argparse
import time

import numpy as np

from kcn import _backend
from kcn import kcn_models as km
from kcn.experiments import synth_gp
from kcn.spatial_index import SpatialIndex
from kcn.variogram import VariogramModel


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def knn_case(mod, tree, queries, k):
    ex = np.full(len(queries), -1, dtype=np.int64)
    return lambda: mod.knn_query_many(*tree._tree(), queries, k, ex)


def epoch_case(name, ds, config):
    model = km.init_model(ds, config)
    kernel = model.kernel(name)
    A, H0, _ = km.training_graphs(ds, config, model.scaler)
    y = model.scaler.labels(ds.labels)
    theta = model.theta.copy()
    m, v = np.zeros_like(theta), np.zeros_like(theta)
    order = np.arange(len(ds), dtype=np.int64)
    return lambda: kernel.train_epoch(theta, m, v, 0, config.lr, 0.9, 0.999, 1e-8, A, H0, y, order, None)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args()
    mods = _backend.available()
    if "cython" not in mods:
        print("compiled kernels are not built; only the fallback is available")
    ds = synth_gp(args.n, VariogramModel("exponential", 0.1, 1.0, 0.2), seed=0)
    tree = SpatialIndex(ds.locations)
    queries = np.random.default_rng(1).uniform(size=(args.n, 2))

    rows = []
    for k in (10, 50):
        rows.append((f"knn query_many k={k}", {
            name: best_of(knn_case(mod, tree, queries, k), args.repeats) for name, mod in mods.items()}))
    for backbone in ("gcn", "attention", "sage"):
        cfg = km.KcnConfig(backbone=backbone, k=10, dropout=0.0)
        rows.append((f"train epoch {backbone} K=10", {
            name: best_of(epoch_case(name, ds, cfg), args.repeats) for name in mods}))

    print(f"N={args.n}, best of {args.repeats}")
    print(f"{'case':<28s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for case, t in rows:
        c = t.get("cython")
        cy = f"{c:11.4f}" if c is not None else f"{'n/a':>11s}"
        speed = f"{t['python'] / c:7.1f}x" if c else f"{'':>8s}"
        print(f"{case:<28s} {t['python']:11.4f} {cy} {speed}")


if __name__ == "__main__":
    main()
