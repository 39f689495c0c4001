"""Benchmark the numba kernel backend against the pure-numpy fallback.

Times the two optimizer hot loops (EWMA accumulation and the parameter
update) on GPT-block-sized arrays, then a full shared-moment Adam step over
a small transformer.  Run with:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from slimadam import kernels
from slimadam.models import ModelSpec, build_model
from slimadam.optim import Hyper, SharedMomentAdam
from slimadam.rules import baseline_rules
from slimadam.models import census_entries


def timeit(fn, repeats=20):
    fn()  # warm up (numba compilation, caches)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels():
    rng = np.random.default_rng(0)
    shapes = [(768, 768), (3072, 768), (50304, 768)]
    print(f"{'kernel':<14}{'shape':<16}" +
          "".join(f"{b:>12}" for b in kernels.available_backends()))
    for shape in shapes:
        dest = rng.standard_normal(shape)
        src = rng.standard_normal(shape)
        row = {}
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            work = dest.copy()
            row[backend] = timeit(lambda: kernels.ewma(work, src, 0.9))
        print(f"{'ewma':<14}{str(shape):<16}" +
              "".join(f"{row[b]*1e3:>10.2f}ms" for b in sorted(row)))
    for shape in shapes:
        w = rng.standard_normal(shape)
        m = rng.standard_normal(shape)
        denom = np.abs(rng.standard_normal(shape)) + 1e-8
        row = {}
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            work = w.copy()
            row[backend] = timeit(
                lambda: kernels.param_update(work, m, denom, 1e-3, 0.1, 0.1))
        print(f"{'param_update':<14}{str(shape):<16}" +
              "".join(f"{row[b]*1e3:>10.2f}ms" for b in sorted(row)))


def bench_optimizer_step():
    spec = ModelSpec(kind="MiniTransformer", vocab=256, d_model=128,
                     n_layers=4, n_heads=4, context=64)
    model = build_model(spec, 0)
    census = census_entries(model)
    rng = np.random.default_rng(1)
    grads = {b.name: rng.standard_normal(b.weights.shape)
             for b in model.blocks if not b.is_tied_alias}
    print(f"\n{'optimizer step (MiniTransformer d=128, 4 layers)':<50}")
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        opt = SharedMomentAdam(model.blocks, baseline_rules(census, "adam"),
                               Hyper(lr=1e-3))
        dt = timeit(lambda: opt.step(grads, 1e-3), repeats=50)
        print(f"  {backend:<10}{dt*1e3:>10.2f}ms")


if __name__ == "__main__":
    saved = kernels.get_backend()
    try:
        bench_kernels()
        bench_optimizer_step()
    finally:
        kernels.set_backend(saved)
