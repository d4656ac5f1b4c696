"""Compare the compiled and numpy patch kernels.

    python benchmarks/bench_kernels.py [--repeat 20]

Times ``patch_sums`` and ``expand_patch_values`` on the standard layout
(257 bins, 1 s at an 8 ms hop, 20-bin patches, plus the 10/40 multi-scale
layout), then one full training step under each backend.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dispatchkd import _kernels_py
from dispatchkd.patching import MsspConfig, partition, partition_mssp
from dispatchkd.spectral import ComplexSpectrogram

try:
    from dispatchkd import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

STEP_SNIPPET = """
import timeit
from dispatchkd import kernels
from dispatchkd.trainer import ToyModel, TrainConfig, dataset_loss_and_grad, make_synthetic_dataset
data = make_synthetic_dataset(8, seed=0)
cfg = TrainConfig(mssp={mssp})
model = ToyModel.identity(257)
dataset_loss_and_grad(model, data, cfg)
t = min(timeit.repeat(lambda: dataset_loss_and_grad(model, data, cfg), number=1, repeat={repeat}))
print(kernels.BACKEND, t)
"""


def layouts(rng):
    spec = ComplexSpectrogram(rng.standard_normal((1, 257, 122)) + 0j)
    cross = tuple(rng.integers(40, 120, size=122))
    low, high = partition_mssp(spec, MsspConfig(10, 40, cross))
    return {"uniform-20": partition(spec, 20).index, "mssp-low-10": low.index, "mssp-high-40": high.index}


def time_kernel(fn, args, repeat):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=50, repeat=repeat)) / 50


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    size = 257 * 122
    field = rng.random(size)
    print(f"{'kernel':<22}{'layout':<14}{'python us':>11}{'cython us':>11}{'speedup':>9}")
    for name, index in layouts(rng).items():
        values = rng.random(index.shape[0])
        cases = {
            "patch_sums": (field, index),
            "expand_patch_values": (values, index, size),
            "coverage_counts": (index, size),
        }
        for kernel, args in cases.items():
            py = time_kernel(getattr(_kernels_py, kernel), args, repeat) * 1e6
            if _kernels_c is None:
                print(f"{kernel:<22}{name:<14}{py:>11.1f}{'n/a':>11}{'':>9}")
                continue
            c = time_kernel(getattr(_kernels_c, kernel), args, repeat) * 1e6
            print(f"{kernel:<22}{name:<14}{py:>11.1f}{c:>11.1f}{py / c:>8.2f}x")


def step_table(repeat):
    print()
    print("full loss+gradient over 8 one-second samples (ms)")
    for mssp in (None, (10, 40)):
        row = []
        for pure in ("1", "0"):
            env = dict(os.environ, DISPATCHKD_PURE_PYTHON=pure)
            out = subprocess.run(
                [sys.executable, "-c", STEP_SNIPPET.format(mssp=mssp, repeat=repeat)],
                env=env, capture_output=True, text=True, check=True,
            ).stdout.split()
            row.append(f"{out[0]} {float(out[1]) * 1e3:.2f}")
        print(f"  mssp={str(mssp):<10} " + "   ".join(row))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not built; only the numpy kernels are timed")
    kernel_table(args.repeat)
    step_table(max(3, args.repeat // 4))


if __name__ == "__main__":
    main()
