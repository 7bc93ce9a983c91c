"""Compiled kernels vs the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both implementations are imported directly, so the comparison does not
depend on which backend ``airflux.kernels`` picked. Outputs are checked
for agreement before anything is timed.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from airflux import _fallback

try:
    from airflux import _kernels
except ImportError:
    _kernels = None


def sgns_case(V=5000, d=100, n=1024, dtype=np.float32, seed=0):
    rng = np.random.default_rng(seed)
    emb = rng.normal(scale=0.1, size=(2 * V, d)).astype(dtype)
    centers = rng.integers(0, V, n).astype(np.int64)
    contexts = (V + rng.integers(0, V, n)).astype(np.int64)
    labels = rng.integers(0, 2, n).astype(dtype)
    slots = np.unique(np.concatenate([centers, contexts]), return_inverse=True)[1].astype(np.int64)
    c_slot, o_slot = slots[:n].copy(), slots[n:].copy()
    rows = int(slots.max()) + 1
    return emb, centers, contexts, labels, c_slot, o_slot, rows


def bench_sgns(mod, case, repeat):
    emb, centers, contexts, labels, c_slot, o_slot, rows = case

    def run():
        out = np.zeros((rows, emb.shape[1]), dtype=emb.dtype)
        mod.sgns_grad(emb, centers, contexts, labels, c_slot, o_slot, out)
        return out

    return run, min(timeit.repeat(run, number=10, repeat=repeat)) / 10


def bench_apply(mod, theta, rows, values, repeat):
    def run():
        t = theta.copy()
        mod.apply_rows(t, rows, values, 0.025)
        return t

    return run, min(timeit.repeat(run, number=20, repeat=repeat)) / 20


def bench_fnv(mod, keys, repeat):
    def run():
        return [mod.fnv1a_64(k) for k in keys]

    return run, min(timeit.repeat(run, number=3, repeat=repeat)) / 3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1

    results = []
    case = sgns_case()
    ref_run, t_py = bench_sgns(_fallback, case, args.repeat)
    ext_run, t_cy = bench_sgns(_kernels, case, args.repeat)
    # summation order differs, so agreement is to f32 rounding
    assert np.allclose(ref_run(), ext_run(), rtol=1e-5, atol=1e-7)
    results.append(("sgns_grad", "1024 pairs, d=100", t_py, t_cy))

    rng = np.random.default_rng(1)
    theta = rng.normal(size=(10000, 100)).astype(np.float32)
    rows = np.unique(rng.integers(0, 10000, 2000)).astype(np.int64)
    values = rng.normal(size=(rows.size, 100)).astype(np.float32)
    ref_run, t_py = bench_apply(_fallback, theta, rows, values, args.repeat)
    ext_run, t_cy = bench_apply(_kernels, theta, rows, values, args.repeat)
    assert ref_run().tobytes() == ext_run().tobytes()
    results.append(("apply_rows", f"{rows.size} rows, width 100", t_py, t_cy))

    keys = [str(i).encode() for i in range(20000)]
    ref_run, t_py = bench_fnv(_fallback, keys, args.repeat)
    ext_run, t_cy = bench_fnv(_kernels, keys, args.repeat)
    assert ref_run() == ext_run()
    results.append(("fnv1a_64", "20000 short keys", t_py, t_cy))

    print(f"{'kernel':<12} {'case':<22} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, what, a, b in results:
        print(f"{name:<12} {what:<22} {a * 1e3:>10.3f} {b * 1e3:>10.3f} {a / b:>7.1f}x")
    if args.json:
        rows = [{"kernel": n, "case": w, "python_s": a, "cython_s": b, "speedup": a / b} for n, w, a, b in results]
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
