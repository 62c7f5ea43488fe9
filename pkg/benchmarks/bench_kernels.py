"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 512] [--repeat 20]

Prints one row per kernel with the median time of each backend and the speedup.
"""

import argparse
import statistics
import sys
import time

import numpy as np

from prunekit import _kernels_py

try:
    from prunekit import _ckernels
except ImportError:
    _ckernels = None


def make_inputs(n, M, V, d_emb, d_hid, K_int, K_slot, seed=0):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1, M + 1, n)
    mask = np.arange(M)[None, :] < lengths[:, None]
    tokens = np.where(mask, rng.integers(1, V, (n, M)), 0).astype(np.int64)
    emb = rng.normal(0, 0.2, (V, d_emb))
    w = rng.normal(0, 0.2, (d_emb, d_hid))
    b = rng.normal(0, 0.2, d_hid)
    ip = rng.dirichlet(np.ones(K_int), n)
    sp = rng.dirichlet(np.ones(K_slot), (n, M))
    intents = rng.integers(0, K_int, n).astype(np.int64)
    slots = np.where(mask, rng.integers(0, K_slot, (n, M)), 0).astype(np.int64)
    dh = rng.normal(0, 1, (n, M, d_hid))
    return dict(emb=emb, w=w, b=b, tokens=tokens, mask=mask, ip=ip, sp=sp,
                intents=intents, slots=slots, dh=dh)


def median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernels(mod, x):
    a, h, inv = mod.encoder_forward(x["emb"], x["w"], x["b"], x["tokens"], x["mask"])
    return {
        "encoder_forward": lambda: mod.encoder_forward(x["emb"], x["w"], x["b"], x["tokens"], x["mask"]),
        "encoder_backward": lambda: mod.encoder_backward(
            x["emb"], x["w"], x["tokens"], x["mask"], a, h, inv, x["dh"]),
        "el2n_components": lambda: mod.el2n_components(
            x["ip"], x["intents"], x["sp"], x["slots"], x["mask"]),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--M", type=int, default=12)
    ap.add_argument("--V", type=int, default=600)
    ap.add_argument("--d-emb", type=int, default=16)
    ap.add_argument("--d-hid", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    x = make_inputs(args.n, args.M, args.V, args.d_emb, args.d_hid, 10, 8)
    py, cy = kernels(_kernels_py, x), kernels(_ckernels, x)
    print(f"{'kernel':<18}{'python ms':>11}{'cython ms':>11}{'speedup':>9}")
    for name in py:
        tp, tc = median_time(py[name], args.repeat), median_time(cy[name], args.repeat)
        print(f"{name:<18}{tp * 1e3:>11.3f}{tc * 1e3:>11.3f}{tp / tc:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
