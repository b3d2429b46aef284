"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the three conv kernels at pipeline-representative shapes plus one
full classifier train step per backend, and prints throughput with the
numba/numpy speedup.  Select the default backend for a session with
BACKDOORLAB_BACKEND=numba|numpy.

Usage: python benchmarks/bench_backends.py [--sizes 32,64]
"""

import argparse
import time

import numpy as np

from backdoorlab import backend, datasets, nn
from backdoorlab.models import ClassifierNet


def _time(fn, repeat=5, warmup=1):
    for _ in range(warmup):
        fn()
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_conv(size, batch=64, c_in=32, c_out=32, repeat=5):
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((batch, size + 2, size + 2, c_in)).astype(np.float32)
    w = rng.standard_normal((3, 3, c_in, c_out)).astype(np.float32)
    dy = rng.standard_normal((batch, size, size, c_out)).astype(np.float32)
    flops = 2.0 * batch * size * size * c_in * c_out * 9
    rows = {}
    for name in backend.available_backends():
        prev = backend.set_backend(name)
        try:
            t_f = _time(lambda: backend.conv3x3(xp, w), repeat)
            t_bi = _time(lambda: backend.conv3x3_input_grad(dy, w, xp.shape),
                         repeat)
            t_bw = _time(lambda: backend.conv3x3_weight_grad(xp, dy), repeat)
        finally:
            backend.set_backend(prev)
        rows[name] = {"forward": (t_f, flops / t_f / 1e9),
                      "input_grad": (t_bi, flops / t_bi / 1e9),
                      "weight_grad": (t_bw, flops / t_bw / 1e9)}
    return rows


def bench_train_step(size, repeat=3):
    ds = datasets.make_synthetic_dataset(64, 2, size, seed=1)
    rows = {}
    for name in backend.available_backends():
        prev = backend.set_backend(name)
        try:
            model = ClassifierNet(2, seed=2)
            opt = nn.SGD(model.parameters(), lr=0.01)

            def step():
                logits = model.logits(ds.images, train=True)
                _, dlogits = nn.cross_entropy(logits, ds.labels)
                model.backward_input(dlogits, need_param_grads=True)
                opt.step()

            rows[name] = _time(step, repeat)
        finally:
            backend.set_backend(prev)
    return rows


def main(sizes=None):
    sizes = [int(s) for s in sizes.split(",")] if sizes else [16, 32]
    print(f"backends available: {backend.available_backends()} "
          f"(active default: {backend.active_backend()})\n")
    for size in sizes:
        print(f"== conv 3x3, batch 64, 32->32 channels, {size}x{size} ==")
        rows = bench_conv(size)
        for kernel in ("forward", "input_grad", "weight_grad"):
            line = f"  {kernel:12s}"
            for name in sorted(rows):
                t, gf = rows[name][kernel]
                line += f"  {name}: {t * 1e3:7.1f} ms ({gf:5.1f} GFLOP/s)"
            if {"numba", "numpy"} <= rows.keys():
                speedup = rows["numpy"][kernel][0] / rows["numba"][kernel][0]
                line += f"  numba speedup: {speedup:4.2f}x"
            print(line)
        steps = bench_train_step(size)
        line = "  train step  "
        for name in sorted(steps):
            line += f"  {name}: {steps[name] * 1e3:7.1f} ms"
        if {"numba", "numpy"} <= steps.keys():
            line += f"  numba speedup: {steps['numpy'] / steps['numba']:4.2f}x"
        print(line + "\n")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default=None, help="comma-separated image sizes")
    main(**vars(ap.parse_args()))
