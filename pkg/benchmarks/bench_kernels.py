"""Compare the numba and pure-numpy kernel backends.

Per-kernel timings import both implementations directly. The end-to-end
row runs one batch-1 64x64 training step in a subprocess per backend,
since the backend is fixed at import time by RTFNET_DISABLE_NUMBA.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rtfnet.kernels import _numba, _numpy

STEP = r"""
import time, numpy as np
from rtfnet import ArchConfig, Tensor, backward, init_params, rtfnet_forward
from rtfnet import functional as F
from rtfnet.optim import AdamState, adam_step
mp = init_params(ArchConfig(), 0)
st = AdamState.for_params(mp.params)
rng = np.random.default_rng(0)
x = Tensor(rng.random((1, 1, 64, 64), dtype=np.float32))
def step():
    out, _ = rtfnet_forward(x, mp)
    backward(F.mse_loss(out, x))
    adam_step(mp.params, st, 1e-3)
step()
best = float("inf")
for _ in range({repeat}):
    t0 = time.perf_counter(); step(); best = min(best, time.perf_counter() - t0)
print(best)
"""


def cases(rng):
    # shapes match the default model at 64x64, batch 1 and batch 8
    for n in (1, 8):
        xp = rng.random((n, 32, 66, 66), dtype=np.float32)
        cols = rng.random((n * 64 * 64, 9 * 32), dtype=np.float32)
        yield f"im2col  n={n}", lambda m, xp=xp: m.im2col(xp, 3, 1, 64, 64)
        if n > 1:
            # the compiled gather on its own, bypassing the size dispatch
            yield f"im2col* n={n}", lambda m, xp=xp: (m._im2col if m is _numba else m.im2col)(xp, 3, 1, 64, 64)
        yield f"col2im  n={n}", lambda m, c=cols, s=xp.shape: m.col2im(c, s, 3, 1, 64, 64)
    act = rng.standard_normal((8, 128, 32, 32)).astype(np.float32)
    yield "gelu", lambda m: m.gelu(act)
    yield "gelu_grad", lambda m: m.gelu_grad(act)
    img = rng.integers(0, 256, size=(512, 512, 1), dtype=np.uint8)
    r1, r2 = rng.random(img.shape), rng.random(img.shape)
    yield "salt_pepper 512x512", lambda m: m.salt_pepper(img, r1, r2, 0.3)


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile for numba)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def train_step_time(disable_numba, repeat):
    env = dict(os.environ, RTFNET_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run(
        [sys.executable, "-c", STEP.format(repeat=repeat)], env=env, capture_output=True, text=True, check=True
    )
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-step", action="store_true", help="skip the end-to-end training step row")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases(rng):
        t_np = best_of(lambda: fn(_numpy), args.repeat)
        t_nb = best_of(lambda: fn(_numba), args.repeat)
        print(f"{name:<22}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.2f}x")
    if not args.skip_step:
        t_np = train_step_time(True, args.repeat)
        t_nb = train_step_time(False, args.repeat)
        print(f"{'train step 1x64x64':<22}{t_np * 1e3:>10.1f}{t_nb * 1e3:>10.1f}{t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
