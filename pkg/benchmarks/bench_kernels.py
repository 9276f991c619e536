"""Time the compiled kernels against the interpreted fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both implementations are imported directly, so the comparison does not
depend on LORENTZ_EMBED_PURE.  Outputs are compared before timing.
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from lorentz_embed import _kernels_py

try:
    from lorentz_embed import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(rng):
    n = 120
    W = np.full((n, n), np.inf)
    np.fill_diagonal(W, 0.0)
    for i in range(n):
        for j in rng.choice(n, 4, replace=False):
            if i != j:
                W[i, j] = W[j, i] = rng.uniform(0.5, 2.0)
    A = rng.normal(size=(4000, 4, 4))
    mats = A + A.transpose(0, 2, 1)
    pts = rng.normal(size=(20000, 10))
    d = np.diff(pts, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(d, axis=1))])
    queries = rng.uniform(0, cum[-1], 50000)
    return {
        "floyd_warshall": ((W,), 1e-12),
        "batch_min_eigenvalue": ((mats,), 1e-9),
        "polyline_at": ((cum, pts, queries), 1e-9),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = []
    for name, (inputs, tol) in cases(rng).items():
        py_fn = getattr(_kernels_py, name)
        row = {"kernel": name, "python_s": min(timeit.repeat(lambda: py_fn(*inputs), number=1, repeat=args.repeat))}
        if _compiled is not None:
            c_fn = getattr(_compiled, name)
            ref, got = np.asarray(py_fn(*inputs)), np.asarray(c_fn(*inputs))
            row["max_abs_diff"] = float(np.max(np.abs(np.where(np.isinf(ref), 0, ref - got))))
            if row["max_abs_diff"] > tol:
                raise SystemExit(f"{name}: backends disagree by {row['max_abs_diff']:.3g}")
            row["cython_s"] = min(timeit.repeat(lambda: c_fn(*inputs), number=1, repeat=args.repeat))
            row["speedup"] = row["python_s"] / row["cython_s"]
        rows.append(row)
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'python [s]':>11}  {'cython [s]':>11}  {'speedup':>8}")
    for r in rows:
        c = f"{r['cython_s']:11.5f}  {r['speedup']:7.1f}x" if "cython_s" in r else f"{'n/a':>11}  {'':>8}"
        print(f"{r['kernel']:<{width}}  {r['python_s']:11.5f}  {c}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
