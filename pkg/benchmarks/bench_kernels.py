#!/usr/bin/env python3
"""Compare the numba and numpy convolution backends.

Kernel timings use the conv shapes the network runs at the given image size.
The end-to-end row times one fusion with 5 TTT steps per backend; each runs in
a subprocess because the backend is fixed at import time.

    python3 benchmarks/bench_kernels.py --size 256 --repeats 5
"""

import argparse
import csv
import json
import os
import subprocess
import sys
import time

import numpy as np

from ttfuse import _kernels

# (c_in, c_out, k) for each conv in the encoder and decoder
NETWORK_CONVS = [(1, 16, 3), (16, 16, 3), (16, 32, 3), (32, 16, 3), (16, 8, 3), (8, 1, 3),
                 (2, 1, 7)]

E2E_SCRIPT = """
import json, sys, time
from ttfuse import _kernels
from ttfuse.fusion import TTTConfig, fuse_pipeline
from ttfuse.network import build_network
from ttfuse.phantom import PhantomSpec, generate_phantom
size, repeats = int(sys.argv[1]), int(sys.argv[2])
pair = generate_phantom(PhantomSpec(size=size, seed=1))
net, cfg = build_network(0), TTTConfig(steps=5)
fuse_pipeline(net, pair.a, pair.b, cfg)
times = []
for _ in range(repeats):
    t = time.perf_counter()
    fuse_pipeline(net, pair.a, pair.b, cfg)
    times.append(time.perf_counter() - t)
print(json.dumps({"backend": _kernels.BACKEND, "best": min(times)}))
"""


def best_of(fn, repeats):
    fn()  # warm up, includes JIT compilation
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_rows(size, repeats):
    rng = np.random.default_rng(0)
    rows = []
    for c_in, c_out, k in NETWORK_CONVS:
        pad = k // 2
        xp = rng.normal(size=(1, c_in, size + 2 * pad, size + 2 * pad))
        w = rng.normal(size=(c_out, c_in, k, k))
        b = np.zeros(c_out)
        g = rng.normal(size=(1, c_out, size, size))
        row = {"conv": f"{c_in}->{c_out} k{k}"}
        for backend in ("numba", "numpy"):
            if backend == "numba" and "numba" not in _kernels._IMPLS:
                continue
            fwd, bw_w, bw_x = _kernels.get_impl(backend)
            row[f"{backend}_fwd"] = best_of(lambda: fwd(xp, w, b, 1), repeats)
            row[f"{backend}_bw_weight"] = best_of(lambda: bw_w(xp, g, k, 1), repeats)
            row[f"{backend}_bw_input"] = best_of(lambda: bw_x(g, w, xp.shape, 1), repeats)
        rows.append(row)
    return rows


def end_to_end(size, repeats):
    out = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, TTFUSE_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", E2E_SCRIPT, str(size), str(repeats)],
                             env=env, capture_output=True, text=True, check=True)
        data = json.loads(res.stdout.strip().splitlines()[-1])
        out[data["backend"]] = data["best"]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--csv", default=None, help="also write kernel timings here")
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()

    rows = kernel_rows(args.size, args.repeats)
    print(f"conv kernels at {args.size}x{args.size}, best of {args.repeats} (seconds)")
    print(f"{'conv':<14}{'pass':<11}{'numba':>9}{'numpy':>9}{'speedup':>9}")
    for row in rows:
        for part in ("fwd", "bw_weight", "bw_input"):
            nb, npy = row.get(f"numba_{part}"), row[f"numpy_{part}"]
            nb_s = f"{nb:9.4f}" if nb is not None else f"{'-':>9}"
            sp = f"{npy / nb:8.2f}x" if nb else f"{'-':>9}"
            print(f"{row['conv']:<14}{part:<11}{nb_s}{npy:9.4f}{sp}")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)

    if not args.skip_e2e:
        e2e = end_to_end(args.size, args.repeats)
        print(f"\nfusion with 5 TTT steps at {args.size}x{args.size}:")
        for backend, seconds in e2e.items():
            print(f"  {backend:<6} {seconds:.3f} s")


if __name__ == "__main__":
    main()
