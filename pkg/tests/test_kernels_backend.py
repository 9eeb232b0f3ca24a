import json
import os
import subprocess
import sys

import numpy as np
import pytest

from adaptopt import kernels
from adaptopt._backend import HAS_NUMBA
from adaptopt.costs import HuberSpec, cost_table, example1_costs, huber_cost


def field_inputs(rng, N=5, n=3):
    adj = (rng.random((N, N)) < 0.5) * rng.uniform(0.5, 2, (N, N))
    np.fill_diagonal(adj, 0.0)
    return (adj, rng.normal(size=(N, n)), rng.normal(size=(N, n)), rng.normal(size=(N, N)),
            rng.uniform(1, 5, N), rng.normal(size=(N, n)), rng.uniform(0.1, 1, N))


def run_field(fn, args):
    adj, x, v, w, sigma, grads, wdiag = args
    N, n = x.shape
    outs = (np.empty((N, n)), np.empty((N, n)), np.empty((N, N)), np.empty(N))
    fn(adj, x, v, w, sigma, grads, wdiag, *outs)
    return outs


def mixed_table(rng, n=2):
    costs = example1_costs()[:3]
    costs += [huber_cost(HuberSpec(0.5, rng.normal(size=(m, n)))) for m in (4, 9)]
    return cost_table(costs)


def test_field_loops_vs_numpy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        args = field_inputs(rng)
        for a, b in zip(run_field(kernels.field_loops, args), run_field(kernels.field_numpy, args)):
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def test_selected_field_matches_numpy():
    rng = np.random.default_rng(1)
    args = field_inputs(rng)
    for a, b in zip(run_field(kernels.network_field, args),
                    run_field(kernels.field_numpy, args)):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def test_huber_sums_variants():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(300, 3))
    for s in rng.normal(size=(10, 3)):
        out = [(np.empty(3), np.empty(3)) for _ in range(3)]
        kernels.huber_sums_loops(data, s, 0.5, *out[0])
        kernels.huber_sums_numpy(data, s, 0.5, *out[1])
        kernels.huber_sums(data, s, 0.5, *out[2])
        for val, grad in out[1:]:
            np.testing.assert_allclose(val, out[0][0], rtol=1e-12)
            np.testing.assert_allclose(grad, out[0][1], rtol=1e-12, atol=1e-12)


def test_mixed_gradients_variants():
    rng = np.random.default_rng(3)
    table = mixed_table(rng)
    X = rng.normal(size=(5, 2)) * 3
    res = []
    for fn in (kernels.mixed_gradients_loops, kernels.mixed_gradients_numpy,
               kernels.mixed_gradients):
        out = np.empty((5, 2))
        fn(*table, X, out)
        res.append(out)
    np.testing.assert_allclose(res[1], res[0], rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(res[2], res[0], rtol=1e-13, atol=1e-13)


def test_rk4_block_variants():
    rng = np.random.default_rng(4)
    table = mixed_table(rng)
    adj = np.ones((5, 5)) - np.eye(5)
    y0 = np.concatenate([rng.normal(size=10), rng.normal(size=10), np.eye(5).ravel(),
                         np.ones(5)])
    ys = []
    for fn in (kernels.rk4_block_numpy, kernels.rk4_block):
        y = y0.copy()
        assert fn(adj, y, 1e-3, 200, 5, 2, *table, np.empty(0)) == 200
        ys.append(y)
    np.testing.assert_allclose(ys[1], ys[0], rtol=1e-12, atol=1e-12)


def test_rk4_block_stops_before_fault():
    # w_11 goes negative in the second stage when h > 2 on a 2-node graph
    adj = np.array([[0.0, 1.0], [1.0, 0.0]])
    table = cost_table([example1_costs()[3]] * 2)
    y0 = np.concatenate([np.zeros(4), np.zeros(4), np.eye(2).ravel(), np.ones(2)])
    for fn in (kernels.rk4_block_numpy, kernels.rk4_block):
        y = y0.copy()
        assert fn(adj, y, 3.0, 5, 2, 2, *table, np.empty(0)) == 0
        np.testing.assert_array_equal(y, y0)


@pytest.mark.slow
@pytest.mark.skipif(not HAS_NUMBA, reason="numba backend not active")
def test_numpy_backend_subprocess_agrees():
    code = (
        "import json; from adaptopt import BACKEND; "
        "from adaptopt.experiments import run_example1; "
        "r = run_example1(t_end=2.0); "
        "print(json.dumps({'backend': BACKEND, 'x': r.trajectory.x[-1].tolist()}))"
    )
    env = dict(os.environ, ADAPTOPT_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True, timeout=600)
    doc = json.loads(out.stdout)
    assert doc["backend"] == "numpy"
    from adaptopt.experiments import run_example1
    ref = run_example1(t_end=2.0).trajectory.x[-1]
    np.testing.assert_allclose(doc["x"], ref, rtol=0, atol=1e-10)


def test_bad_backend_name():
    env = dict(os.environ, ADAPTOPT_BACKEND="fortran")
    out = subprocess.run([sys.executable, "-c", "import adaptopt"], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0
    assert "ADAPTOPT_BACKEND" in out.stderr
