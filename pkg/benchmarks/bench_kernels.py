"""Benchmark the compiled Adam kernel against the numpy fallback.

Times the raw update on adapter-shaped parameter vectors and a full
iterative fit under each backend, and checks that the two backends agree
numerically.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from embedadapt import PairedEmbeddings, TrainConfig
from embedadapt import _kernels
from embedadapt._kernels import fallback
from embedadapt.adapter import fit_iterative


def time_update(update, n, steps=200, seed=0):
    rng = np.random.default_rng(seed)
    param = rng.standard_normal(n)
    grad = rng.standard_normal(n)
    m = np.zeros(n)
    v = np.zeros(n)
    update(param, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 1)  # warm up
    start = time.perf_counter()
    for step in range(1, steps + 1):
        update(param, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, step)
    return (time.perf_counter() - start) / steps, param


def agreement(n=512 * 512, steps=25):
    rng = np.random.default_rng(1)
    state = {}
    for name, update in (("compiled", _kernels.adam_update),
                         ("fallback", fallback.adam_update)):
        r = np.random.default_rng(2)
        param = r.standard_normal(n)
        m = np.zeros(n)
        v = np.zeros(n)
        for step in range(1, steps + 1):
            grad = rng.standard_normal(n) if name == "compiled" else state["grads"][step - 1]
            if name == "compiled":
                state.setdefault("grads", []).append(grad)
            update(param, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, step)
        state[name] = param
    return float(np.max(np.abs(state["compiled"] - state["fallback"])))


def bench_full_fit():
    rng = np.random.default_rng(3)
    n, d = 4096, 512
    x = rng.standard_normal((n, d)).astype(np.float32)
    y = rng.standard_normal((n, d)).astype(np.float32)
    pairs = PairedEmbeddings("a", "b", [(f"s{i}", "0") for i in range(n)], x, y)
    cfg = TrainConfig(seed=0, epochs=5)
    results = {}
    for name, update in (("compiled", _kernels.adam_update),
                         ("fallback", fallback.adam_update)):
        saved = _kernels.adam_update
        _kernels.adam_update = update
        try:
            start = time.perf_counter()
            fit_iterative(pairs, cfg)
            results[name] = time.perf_counter() - start
        finally:
            _kernels.adam_update = saved
    return results


def main():
    print(f"selected backend: {_kernels.BACKEND}")
    if _kernels.BACKEND != "compiled":
        print("compiled extension unavailable; timing the fallback only")

    print(f"\n{'size':>10} {'fallback':>12} {'compiled':>12} {'speedup':>8}")
    for n in (512, 512 * 64, 512 * 512, 512 * 512 + 512):
        fb, _ = time_update(fallback.adam_update, n)
        if _kernels.BACKEND == "compiled":
            cp, _ = time_update(_kernels.adam_update, n)
            print(f"{n:>10} {fb * 1e6:>10.1f}us {cp * 1e6:>10.1f}us {fb / cp:>7.2f}x")
        else:
            print(f"{n:>10} {fb * 1e6:>10.1f}us {'-':>12} {'-':>8}")

    if _kernels.BACKEND == "compiled":
        print(f"\nmax |compiled - fallback| after 25 steps on 512x512: {agreement():.3e}")
        fit_times = bench_full_fit()
        print(f"full iterative fit (4096 pairs, 512x512, 5 epochs): "
              f"compiled {fit_times['compiled']:.2f}s, "
              f"fallback {fit_times['fallback']:.2f}s, "
              f"speedup {fit_times['fallback'] / fit_times['compiled']:.2f}x")


if __name__ == "__main__":
    main()
