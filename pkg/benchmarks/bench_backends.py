"""Compare the numba and pure-numpy kernel backends.

The backend is fixed at import time by ADAPTOPT_BACKEND, so each one is
timed in its own subprocess. Every case runs once to warm up (numba compiles,
or loads its on-disk cache) and is then timed ``--repeat`` times; the best
time is reported.

    python3 benchmarks/bench_backends.py [--repeat 3] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from adaptopt import BACKEND, kernels
from adaptopt.costs import cost_table, example1_costs
from adaptopt.experiments import run_example1, run_example2

repeat = int(sys.argv[1])

def best(fn):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)

rng = np.random.default_rng(0)
N, n = 5, 2
adj = (np.ones((N, N)) - np.eye(N))
x, v, grads = rng.normal(size=(N, n)), rng.normal(size=(N, n)), rng.normal(size=(N, n))
w, sigma, wdiag = rng.normal(size=(N, N)), np.ones(N), np.full(N, 0.2)
outs = (np.empty((N, n)), np.empty((N, n)), np.empty((N, N)), np.empty(N))

def field_10k():
    for _ in range(10_000):
        kernels.network_field(adj, x, v, w, sigma, grads, wdiag, *outs)

table = cost_table(example1_costs())
y0 = np.concatenate([rng.uniform(-5, 5, 2 * N * n), np.eye(N).ravel(), np.ones(N)])

def block_5k():
    kernels.rk4_block(adj, y0.copy(), 1e-3, 5_000, N, n, *table, np.empty(0))

data = rng.normal(size=(500, 3))
val, grd = np.empty(3), np.empty(3)

def huber_10k():
    for _ in range(10_000):
        kernels.huber_sums(data, data[0], 0.5, val, grd)

out = {"backend": BACKEND, "cases": {
    "field x10k": best(field_10k),
    "huber_sums(500x3) x10k": best(huber_10k),
    "rk4_block example1 5k steps": best(block_5k),
    "run_example1 t_end=10": best(lambda: run_example1(t_end=10.0)),
    "run_example2 t_end=1": best(lambda: run_example2(t_end=1.0)),
}}
print(json.dumps(out))
"""


def run_backend(name: str, repeat: int) -> dict:
    env = dict(os.environ, ADAPTOPT_BACKEND=name)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                          capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"{name} worker failed:\n{proc.stderr}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the raw timings here")
    args = ap.parse_args(argv)

    results = {b: run_backend(b, args.repeat) for b in ("numba", "numpy")}
    if results["numba"]["backend"] != "numba":
        print("warning: numba unavailable, both columns ran the numpy kernels")
    cases = list(results["numba"]["cases"])
    width = max(map(len, cases))
    print(f"{'case':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speedup':>8}")
    for c in cases:
        a, b = results["numba"]["cases"][c], results["numpy"]["cases"][c]
        print(f"{c:<{width}}  {a:>10.4f}  {b:>10.4f}  {b / a:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
