"""Compiled vs numpy-fallback depthwise 3x3 kernels, plus one full training step.

Run: python3 benchmarks/bench_kernels.py [--repeat N]
The training-step timing runs in subprocesses so each backend is selected
at import, exactly as in normal use.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from agdnet import _kernels_py

try:
    from agdnet import _kernels
except ImportError:
    _kernels = None

SHAPES = [(32, 32, 32), (64, 32, 32), (32, 64, 64)]

STEP_SNIPPET = """
import timeit
import numpy as np
from agdnet import kernels
from agdnet.network import AGDModel, NetConfig
from agdnet.observation import default_srf
from agdnet.trainer import TrainConfig, synthetic_samples, sample_patches, train_step
data = synthetic_samples(2, 16, 32, 32, 4, [default_srf(16)], seed=0)
model = AGDModel(NetConfig())
cfg = TrainConfig()
patches = sample_patches(data, 32, 4, 0, 0)
train_step(model, patches, cfg)
t = min(timeit.repeat(lambda: train_step(model, patches, cfg), number=1, repeat={repeat}))
print(kernels.BACKEND, t)
"""


def bench_kernels(repeat: int):
    rng = np.random.default_rng(0)
    print(f"{'shape':<14}{'op':<12}{'python ms':>11}{'compiled ms':>13}{'speedup':>9}")
    for shape in SHAPES:
        x = rng.normal(size=shape)
        w = rng.normal(size=(shape[0], 3, 3))
        g = rng.normal(size=shape)
        cases = {
            "forward": lambda m: m.dwconv3x3_forward(x, w),
            "grad_input": lambda m: m.dwconv3x3_grad_input(g, w),
            "grad_weight": lambda m: m.dwconv3x3_grad_weight(g, x),
        }
        for name, fn in cases.items():
            tp = min(timeit.repeat(lambda: fn(_kernels_py), number=10, repeat=repeat)) / 10 * 1e3
            if _kernels is None:
                print(f"{str(shape):<14}{name:<12}{tp:>11.3f}{'n/a':>13}{'':>9}")
                continue
            tc = min(timeit.repeat(lambda: fn(_kernels), number=10, repeat=repeat)) / 10 * 1e3
            print(f"{str(shape):<14}{name:<12}{tp:>11.3f}{tc:>13.3f}{tp / tc:>8.2f}x")


def bench_step(repeat: int):
    print("\nfull training step (batch 4, 32x32 crops, desk config)")
    for pure in ("1", "0"):
        env = {**os.environ, "AGDNET_PURE_PYTHON": pure}
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:<9} {float(out[1]) * 1e3:9.1f} ms")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_step(args.repeat)
