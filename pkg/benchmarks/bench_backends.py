#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the convolution forward/backward at the shapes the toy and benchmark
models actually use, plus one full supervised training step, and reports the
max absolute difference between backends.

Usage: python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from cgssl.nn import backend
from cgssl.datasets import generate_toy_dataset, split_dataset, SplitSpec
from cgssl.models import ClassifierSpec
from cgssl.supervised import TrainConfig, train_supervised

SHAPES = [
    # (label, batch, hw, cin, cout, ksize, stride)
    ("toy 16x16 conv3x3 16->16", 32, 16, 16, 16, 3, 1),
    ("toy 8x8 conv3x3 16->32", 32, 8, 16, 32, 3, 2),
    ("toy 4x4 conv3x3 32->64", 32, 4, 32, 64, 3, 1),
    ("cifar 32x32 conv3x3 16->32", 32, 32, 16, 32, 3, 1),
]


def time_conv(batch, hw, cin, cout, k, stride, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, hw, hw, cin)).astype(np.float32)
    w = rng.normal(size=(k, k, cin, cout)).astype(np.float32)
    y, ctx = backend.conv2d(x, w, stride, 1, need_ctx=True)
    dy = rng.normal(size=y.shape).astype(np.float32)
    backend.conv2d_backward(ctx, dy)  # warm up / compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        y, ctx = backend.conv2d(x, w, stride, 1, need_ctx=True)
        backend.conv2d_backward(ctx, dy)
    return (time.perf_counter() - t0) / repeats * 1e3, y


def time_train_step(steps=30):
    data = generate_toy_dataset(4, 100, 16, seed=1234)
    d_l, d_v, _ = split_dataset(data, SplitSpec(seed=5))
    spec = ClassifierSpec(depth=10, width=1, num_classes=4, image_shape=(16, 16, 3))
    cfg = TrainConfig(max_steps=steps, eval_interval=steps, batch_size=32, seed=3)
    t0 = time.perf_counter()
    train_supervised(d_l, d_v, spec, cfg)
    return (time.perf_counter() - t0) / steps * 1e3


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    results = {}
    for name in ("numpy", "numba"):
        try:
            backend.set_backend(name)
        except ImportError:
            print(f"{name}: unavailable, skipping")
            continue
        rows = {}
        for label, batch, hw, cin, cout, k, stride in SHAPES:
            ms, y = time_conv(batch, hw, cin, cout, k, stride, args.repeats)
            rows[label] = (ms, y)
        rows["full train step (toy backbone)"] = (time_train_step(), None)
        results[name] = rows

    print(f"{'kernel':<36}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max|diff|':>11}")
    for label in list(results["numpy"]):
        np_ms, np_y = results["numpy"][label]
        if "numba" in results:
            nb_ms, nb_y = results["numba"][label]
            diff = float(np.abs(np_y - nb_y).max()) if np_y is not None else float("nan")
            print(f"{label:<36}{np_ms:>10.2f}{nb_ms:>10.2f}{np_ms / nb_ms:>9.2f}{diff:>11.2e}")
        else:
            print(f"{label:<36}{np_ms:>10.2f}{'-':>10}{'-':>9}{'-':>11}")
    print("\nactive default backend:", backend.set_backend(None) or backend.active_backend())


if __name__ == "__main__":
    main()
