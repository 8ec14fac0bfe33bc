"""Time each hot kernel under numba and under the numpy fallback.

    python benchmarks/bench_kernels.py            # per-kernel table
    python benchmarks/bench_kernels.py --step     # also a full training step per backend

The step comparison runs in subprocesses because the backend is chosen once,
at import, from ALCFCN_DISABLE_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from alcfcn import kernels
from alcfcn.affinity import _graph


def _best(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(h=16, w=24, C=112, K=2, seed=0):
    rng = np.random.default_rng(seed)
    I, J, pat, _ = _graph(h, w, 5, True)
    n = h * w
    Ft = rng.normal(size=(n, C)).astype(np.float32)
    gd = rng.normal(size=I.shape[0]).astype(np.float32)
    data = rng.random(pat.indices.shape[0]).astype(np.float32)
    X = rng.normal(size=(K, n)).astype(np.float32)
    G = rng.normal(size=(K, n)).astype(np.float32)
    mask = rng.random((64, 96)) < 0.3
    blob = np.zeros((64, 96), bool)
    blob[10:50, 10:80] = True
    heights = rng.random(64 * 96)
    seeds = np.array([20 * 96 + 20, 40 * 96 + 70, 30 * 96 + 45], dtype=np.int64)
    return {
        "pair_l1": (Ft, I, J),
        "pair_l1_grad": (Ft, I, J, gd),
        "csr_matvec": (pat.indptr, pat.indices, data, X),
        "csr_data_grad": (pat.indptr, pat.indices, X, G),
        "label8": (mask,),
        "watershed": (heights, blob.ravel(), 96, seeds),
        "edt_sq": (blob,),
    }


def kernel_table(repeat):
    print(f"{'kernel':<16}{'numpy ms':>11}{'numba ms':>11}{'speed-up':>10}")
    for name, args in cases().items():
        impl = kernels.IMPLEMENTATIONS[name]
        t_np = _best(impl["numpy"], args, repeat) * 1e3
        if "numba" in impl:
            t_nb = _best(impl["numba"], args, repeat) * 1e3
            print(f"{name:<16}{t_np:>11.3f}{t_nb:>11.3f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<16}{t_np:>11.3f}{'-':>11}{'-':>10}")


STEP_SNIPPET = """
import time, numpy as np
from alcfcn import backend
from alcfcn.autodiff import backward
from alcfcn.data import synth_scene, points_from_mask, normalize_image
from alcfcn.losses import lcfcn_loss
from alcfcn.models import ALCFCNModel
img, mask = synth_scene(np.random.default_rng(0), 64, 96, "standard", n_fish=3)
pts, _ = points_from_mask(mask)
m = ALCFCNModel.create(seed=0)
x = normalize_image(img)
best = 1e9
for i in range({n}):
    t0 = time.perf_counter()
    S, _ = m(x)
    L = lcfcn_loss(S, pts)
    m.store.zero_grad()
    backward(L)
    if i > 0:
        best = min(best, time.perf_counter() - t0)
print(backend(), best * 1e3)
"""


def step_table(n):
    print(f"\n{'backend':<10}{'train step ms':>15}")
    for flag in ("0", "1"):
        env = dict(os.environ, ALCFCN_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(n=n)], env=env,
                             capture_output=True, text=True, check=True)
        name, ms = res.stdout.split()
        print(f"{name:<10}{float(ms):>15.1f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--step", action="store_true")
    ap.add_argument("--steps", type=int, default=6)
    args = ap.parse_args()
    if not kernels.USE_NUMBA:
        print("numba disabled or missing: only the numpy column is available")
    kernel_table(args.repeat)
    if args.step:
        step_table(args.steps)


if __name__ == "__main__":
    main()
