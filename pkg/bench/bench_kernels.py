#!/usr/bin/env python3
"""Timings for the compiled kernel extension against the numpy fallback.

Two views: per-kernel microbenchmarks on realistic shapes (both backends
in one process, via newsgraph.kernels.available_backends), and an
end-to-end encode of a small corpus run in a subprocess per backend so
each run goes through the normal NEWSGRAPH_KERNELS selection path.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from newsgraph import kernels


def _bench(fn, args, number, repeat=5):
    best = float("inf")
    fn(*args)
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def _cases(rng, n_rows, dim, heads):
    n_edges = 4 * n_rows
    x = rng.standard_normal((n_rows, dim))
    w = rng.standard_normal((dim, dim))
    idx = rng.integers(0, n_rows, size=n_edges)
    seg = np.sort(rng.integers(0, n_rows, size=n_edges))
    rows = rng.standard_normal((n_edges, dim))
    scores = rng.standard_normal((n_edges, heads))
    gout = rng.standard_normal((n_edges, heads))
    sm = kernels.segment_softmax(scores, seg, n_rows)
    return {
        "mm_stable": ("mm_stable", (x, w)),
        "gather_rows": ("gather_rows", (x, idx)),
        "scatter_add_rows": ("scatter_add_rows", (rows, idx, n_rows)),
        "segment_softmax": ("segment_softmax", (scores, seg, n_rows)),
        "segment_softmax_grad": ("segment_softmax_grad", (sm, gout, seg, n_rows)),
    }


_ENCODE_SNIPPET = """
import json, time
from newsgraph import kernels
from newsgraph import encoder as enc
from newsgraph.generate import GenConfig, generate

corpus = generate(GenConfig(seed=5, n_graphs=40, feature_dim=32,
                            post_count_range=(10, 40),
                            user_count_range=(8, 30)))
cfg = enc.EncoderConfig(feature_dim=32, hidden_dim=64, n_layers=2, n_heads=2)
params = enc.EncoderParams.init(cfg, seed=1)
for g in corpus.graphs:
    enc.encode(g, params)
t0 = time.perf_counter()
for _ in range(3):
    for g in corpus.graphs:
        enc.encode(g, params)
print(json.dumps({"backend": kernels.BACKEND,
                  "seconds": time.perf_counter() - t0}))
"""


def _encode_run(backend):
    env = dict(os.environ, NEWSGRAPH_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", _ENCODE_SNIPPET],
                         capture_output=True, text=True, env=env, check=True)
    result = json.loads(out.stdout)
    assert result["backend"] == backend, result
    return result["seconds"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--number", type=int, default=200,
                    help="inner loop repetitions per timing")
    ap.add_argument("--skip-encode", action="store_true",
                    help="microbenchmarks only")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}")
    print(f"available: {', '.join(sorted(backends))}\n")

    rng = np.random.default_rng(args.seed)
    header = f"{'kernel':<22} {'rows':>6}" + "".join(
        f" {name + ' (us)':>14}" for name in sorted(backends))
    if len(backends) > 1:
        header += f" {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for n_rows in (50, 200, 1000):
        for label, (fname, fargs) in _cases(rng, n_rows, 64, 2).items():
            times = {
                name: _bench(getattr(mod, fname), fargs, args.number)
                for name, mod in backends.items()
            }
            line = f"{label:<22} {n_rows:>6}" + "".join(
                f" {times[name] * 1e6:>14.1f}" for name in sorted(backends))
            if "compiled" in times and "python" in times:
                line += f" {times['python'] / times['compiled']:>8.2f}x"
            print(line)

    if args.skip_encode:
        return 0
    print("\nend-to-end encode (40 graphs x 3 passes, subprocess per backend)")
    encode_times = {name: _encode_run(name) for name in sorted(backends)}
    for name, seconds in encode_times.items():
        print(f"  {name:<10} {seconds:.3f}s")
    if "compiled" in encode_times and "python" in encode_times:
        ratio = encode_times["python"] / encode_times["compiled"]
        print(f"  speedup    {ratio:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
