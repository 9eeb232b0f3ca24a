import numpy as np
import pytest

from adaptopt.costs import example1_costs, quadratic_cost
from adaptopt.dynamics import NetworkField, NetworkState, initial_state
from adaptopt.graph import Digraph, fig1_digraph
from adaptopt.integrator import IntegrationAborted, IntegratorConfig, integrate, rk4_step


def decay(y):
    return -y


def rk4_global_error(h, t_end=1.0):
    y = np.array([1.0])
    for _ in range(int(round(t_end / h))):
        y = rk4_step(y, decay, h)
    return abs(y[0] - np.exp(-t_end))


class Generic:
    """Wraps a field so the integrator cannot see its compiled block path."""

    def __init__(self, f):
        self.f = f

    def __call__(self, y):
        return self.f(y)


def ex1_start(seed=0):
    rng = np.random.default_rng(seed)
    return initial_state(rng.uniform(-5, 5, (5, 2)), rng.uniform(-5, 5, (5, 2)), [1.0] * 5)


# --- single steps ----------------------------------------------------------

def test_rk4_exponential_one_step():
    y = rk4_step(np.array([1.0]), decay, 0.1)
    assert abs(y[0] - np.exp(-0.1)) < 1e-7
    assert y[0] == pytest.approx(0.9048374, abs=1e-7)


def test_rk4_zero_field():
    st = ex1_start()
    out = rk4_step(st, lambda y: np.zeros_like(y), 0.5)
    np.testing.assert_array_equal(out.to_vector(), st.to_vector())
    assert out.time == 0.5


def test_rk4_order_ratio():
    e = [rk4_global_error(h) for h in (0.1, 0.05, 0.025)]
    for a, b in zip(e, e[1:]):
        assert 12 <= a / b <= 20


# --- integrate -------------------------------------------------------------

def test_quadratic_closed_form():
    g = Digraph(np.zeros((1, 1)))
    field = NetworkField(g, [quadratic_cost([3.0], 2.0)])
    st = initial_state([[7.0]], [[0.0]], [1.0])
    traj = integrate(st, field, IntegratorConfig(step=1e-3, t_end=1.0, record_stride=100))
    expected = np.exp(-4 * traj.times) * (7.0 - 3.0) + 3.0
    np.testing.assert_allclose(traj.x[:, 0, 0], expected, rtol=0, atol=1e-9)


def test_record_grid():
    g = Digraph(np.zeros((1, 1)))
    field = NetworkField(g, [quadratic_cost([3.0], 2.0)])
    st = initial_state([[7.0]], [[0.0]], [1.0])
    cfg = IntegratorConfig(step=0.01, t_end=1.0, record_stride=7)
    traj = integrate(st, field, cfg)
    assert len(traj) == cfg.n_steps // 7 + 1
    assert np.all(np.diff(traj.times) > 0)
    np.testing.assert_allclose(traj.times, 0.07 * np.arange(len(traj)), atol=1e-14)


def test_horizon_zero():
    st = ex1_start()
    traj = integrate(st, NetworkField(fig1_digraph(), example1_costs()),
                     IntegratorConfig(t_end=0.0))
    assert len(traj) == 1
    np.testing.assert_array_equal(traj.final.to_vector(), st.to_vector())


def test_example1_short_run_finite_no_faults():
    traj = integrate(ex1_start(), NetworkField(fig1_digraph(), example1_costs()),
                     IntegratorConfig(step=1e-3, t_end=5.0, record_stride=100))
    assert np.isfinite(traj.x).all() and np.isfinite(traj.sigma).all()
    assert traj.faults == []


def test_deterministic():
    field = NetworkField(fig1_digraph(), example1_costs())
    cfg = IntegratorConfig(step=1e-3, t_end=2.0, record_stride=50)
    a = integrate(ex1_start(3), field, cfg)
    b = integrate(ex1_start(3), field, cfg)
    for name in ("times", "x", "v", "w", "sigma"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_compiled_block_matches_generic_stepper():
    field = NetworkField(fig1_digraph(), example1_costs())
    assert field.fused is not None
    cfg = IntegratorConfig(step=1e-3, t_end=2.0, record_stride=100)
    a = integrate(ex1_start(4), field, cfg)
    b = integrate(ex1_start(4), Generic(field), cfg)
    np.testing.assert_allclose(a.x, b.x, rtol=0, atol=1e-11)
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-12)


def test_observers_collect_metrics():
    field = NetworkField(fig1_digraph(), example1_costs())
    cfg = IntegratorConfig(step=1e-3, t_end=0.5, record_stride=100)
    traj = integrate(ex1_start(), field, cfg,
                     observers=[lambda t, st: {"t_copy": t, "s1": st.sigma[0]}])
    np.testing.assert_array_equal(traj.metrics["t_copy"], traj.times)
    np.testing.assert_array_equal(traj.metrics["s1"], traj.sigma[:, 0])


# --- faults ----------------------------------------------------------------

def two_node_field():
    g = Digraph.from_edges(2, [(1, 2), (2, 1)])
    return NetworkField(g, [quadratic_cost([0.0], 1.0), quadratic_cost([0.0], 1.0)])


@pytest.mark.parametrize("wrap", [False, True])
def test_positivity_fault_splits_step(wrap):
    # at h = 3 the second stage gives w_11 = 1 - h/2 < 0, and at h = 1.5
    # the fourth gives 1 - 2.625 < 0; h = 0.75 is clean
    field = two_node_field()
    st = initial_state([[0.0], [0.0]], [[0.0], [0.0]], [1.0, 1.0])
    cfg = IntegratorConfig(step=3.0, t_end=6.0, record_stride=1, min_step=0.5)
    traj = integrate(st, Generic(field) if wrap else field, cfg)
    assert traj.faults[:2] == [{"time": 0.0, "step": 3.0, "reason": "w_1^1 = -0.5 <= 0"},
                               {"time": 0.0, "step": 1.5, "reason": "w_1^1 = -1.625 <= 0"}]
    assert {f["step"] for f in traj.faults} <= {3.0, 1.5}
    # the record grid is unaffected by the splitting
    np.testing.assert_array_equal(traj.times, [0.0, 3.0, 6.0])
    assert (traj.w[:, 0, 0] > 0).all()
    # first step ran as 0.75 + 0.75 + 1.5; the w-mode exp(-2t) is scaled by
    # the RK4 stability polynomial once per substep
    def R(z):
        return 1 + z + z * z / 2 + z ** 3 / 6 + z ** 4 / 24

    assert traj.w[1, 0, 0] == pytest.approx(0.5 + 0.5 * R(-1.5) ** 2 * R(-3.0), rel=1e-14)


def test_fault_below_min_step_aborts():
    field = two_node_field()
    st = initial_state([[0.0], [0.0]], [[0.0], [0.0]], [1.0, 1.0])
    cfg = IntegratorConfig(step=3.0, t_end=3.0, record_stride=1, min_step=2.0)
    with pytest.raises(IntegrationAborted) as exc:
        integrate(st, field, cfg)
    assert exc.value.diagnostics["time"] == 0.0
    assert isinstance(exc.value.diagnostics["state"], NetworkState)


@pytest.mark.parametrize("wrap", [False, True])
def test_nan_gradient_aborts_with_agent(wrap):
    class Broken(type(quadratic_cost([0.0, 0.0]))):
        def gradient(self, s):
            g = 2.0 * self.scale * (np.asarray(s) - self.center)
            return np.array([np.nan, 0.0]) if s[0] > 0.5 else g

    costs = example1_costs()
    costs[3] = Broken("square", [0.0, 0.0])
    field = NetworkField(fig1_digraph(), costs)
    st = initial_state(np.zeros((5, 2)), np.zeros((5, 2)), [1.0] * 5)
    st.x[3] = [0.0, 0.0]
    # agent 4 is driven toward positive x by the others
    st.x[[0, 1, 2, 4], 0] = 3.0
    cfg = IntegratorConfig(step=1e-3, t_end=5.0, record_stride=100)
    with pytest.raises(IntegrationAborted) as exc:
        integrate(st, Generic(field) if wrap else field, cfg)
    assert exc.value.diagnostics["agent"] == 3
    assert "agent 4" in str(exc.value)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(step=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(step=1e-3, min_step=1e-2)
    with pytest.raises(ValueError):
        IntegratorConfig(t_end=-1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(record_stride=0)
