"""Compare the numba and pure-numpy kernel paths.

    python benchmarks/bench_kernels.py            # kernel timings + end-to-end CA-FNN epoch
    python benchmarks/bench_kernels.py --quick

Kernel timings call both implementations directly.  The end-to-end timing runs
a short CA-FNN training twice in subprocesses, once with CALIBRA_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from calibra import _kernels

E2E = """
import dataclasses, time
from calibra.data import synth_gaussian_blobs, split, standardize
from calibra.models import MlpSpec
from calibra.training import TrainConfig, train
from calibra import _kernels
tr, te = standardize(*split(synth_gaussian_blobs(4, 500, 2, 4.0, 0.2, 0), 0.2, 0))
cfg = TrainConfig(objective="ca-fnn", lam=10.0, epochs={epochs}, batch_size={bs}, lr=0.01, optimizer="adam")
train(MlpSpec(2, (32,), 4), tr, te, dataclasses.replace(cfg, epochs=1))  # warm-up / jit
t = time.perf_counter()
train(MlpSpec(2, (32,), 4), tr, te, cfg)
print(_kernels.USE_NUMBA, time.perf_counter() - t)
"""


def bench(fn, *args, repeat=5):
    fn(*args)  # compile / warm caches
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    sizes = (64, 256) if args.quick else (16, 64, 256, 1024, 2048)
    rng = np.random.default_rng(0)

    print(f"{'kernel':<12}{'n':>6}{'numpy us':>12}{'numba us':>12}{'speedup':>9}")
    for n in sizes:
        r, w = rng.uniform(size=n), rng.normal(size=n)
        a = bench(_kernels.numpy_laplacian_quadform, r, w, 0.4)
        b = bench(_kernels.numba_laplacian_quadform, r, w, 0.4)
        print(f"{'quadform':<12}{n:>6}{a * 1e6:>12.1f}{b * 1e6:>12.1f}{a / b:>9.2f}")
    for n in sizes:
        conf, corr = rng.uniform(size=n * 8), (rng.uniform(size=n * 8) < 0.7).astype(float)
        a = bench(_kernels.numpy_bin_stats, conf, corr, 15)
        b = bench(_kernels.numba_bin_stats, conf, corr, 15)
        print(f"{'bin_stats':<12}{n * 8:>6}{a * 1e6:>12.1f}{b * 1e6:>12.1f}{a / b:>9.2f}")

    epochs = 2 if args.quick else 10
    print(f"\nend to end: ca-fnn, {epochs} epochs, batch 64 and 256")
    for bs in (64, 256):
        for flag in ("0", "1"):
            env = dict(os.environ, CALIBRA_DISABLE_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", E2E.format(epochs=epochs, bs=bs)], env=env,
                                 capture_output=True, text=True, check=True).stdout.split()
            label = "numba" if out[0] == "True" else "numpy"
            print(f"  batch {bs:<4} {label:<6} {float(out[1]):8.2f} s")


if __name__ == "__main__":
    main()
