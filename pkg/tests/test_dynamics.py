import numpy as np
import pytest

from adaptopt.costs import HuberSpec, example1_costs, huber_cost, quadratic_cost
from adaptopt.dynamics import (NetworkField, NetworkState, NonFiniteGradient, PositivityFault,
                               compact_field, consensus_error_vector, error_coordinates,
                               initial_state, stationary_pair, vector_field)
from adaptopt.graph import Digraph, build_laplacian, certify, fig1_digraph
from adaptopt.analysis import laplacian_projected_norm_bound

S_STAR_EX1 = np.array([2.0038883, 3.30483419])


def random_state(rng, N=5, n=2, w_pos=True):
    w = rng.uniform(-0.5, 0.5, (N, N))
    if w_pos:
        w[np.diag_indices(N)] = rng.uniform(0.05, 1.0, N)
    return NetworkState(rng.uniform(-6, 6, (N, n)), rng.uniform(-6, 6, (N, n)), w,
                        rng.uniform(1, 20, N))


# --- initial state ---------------------------------------------------------

def test_initial_state_single_agent():
    st = initial_state([[0.5]], [[0.0]], [1.0])
    np.testing.assert_array_equal(st.w, [[1.0]])


def test_initial_state_identity_w():
    rng = np.random.default_rng(0)
    st = initial_state(rng.normal(size=(5, 2)), np.zeros((5, 2)), [1.0] * 5)
    np.testing.assert_array_equal(st.w, np.eye(5))
    np.testing.assert_array_equal(st.sigma, np.ones(5))


def test_initial_state_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        initial_state(np.zeros((2, 1)), np.zeros((2, 1)), [1.0, 0.0])


def test_state_vector_round_trip():
    st = random_state(np.random.default_rng(1))
    back = NetworkState.from_vector(st.to_vector(), 5, 2)
    for a, b in ((st.x, back.x), (st.v, back.v), (st.w, back.w), (st.sigma, back.sigma)):
        np.testing.assert_array_equal(a, b)
    assert st.agent(2).sigma == st.sigma[2]


# --- consensus error -------------------------------------------------------

def test_consensus_error_at_consensus():
    st = initial_state(np.tile([1.0, -2.0], (5, 1)), np.zeros((5, 2)), [1.0] * 5)
    np.testing.assert_array_equal(consensus_error_vector(st, fig1_digraph()), 0.0)


def test_consensus_error_two_node():
    g = Digraph.from_edges(2, [(1, 2), (2, 1)])
    st = initial_state([[1.0], [0.0]], [[0.0], [0.0]], [1.0, 1.0])
    np.testing.assert_array_equal(consensus_error_vector(st, g), [[1.0], [-1.0]])


def test_consensus_error_matches_kron():
    g = fig1_digraph()
    rng = np.random.default_rng(2)
    st = random_state(rng)
    L = build_laplacian(g)
    dense = np.kron(L, np.eye(2)) @ st.x.ravel()
    np.testing.assert_allclose(consensus_error_vector(st, g).ravel(), dense, atol=1e-14)


# --- field -----------------------------------------------------------------

def test_field_single_agent_quadratic():
    g = Digraph(np.zeros((1, 1)))
    st = initial_state([[5.0]], [[0.7]], [2.0])
    d = vector_field(st, g, [quadratic_cost([3.0], 2.0)])
    np.testing.assert_allclose(d.x, [[-8.0]])
    np.testing.assert_array_equal(d.v, [[0.0]])
    np.testing.assert_array_equal(d.w, [[0.0]])
    np.testing.assert_array_equal(d.sigma, [0.0])


def test_field_vanishes_at_stationary_pair():
    g = fig1_digraph()
    costs = example1_costs()
    xi = certify(g).xi
    x_bar, v_bar = stationary_pair(g, costs, S_STAR_EX1, xi)
    st = NetworkState(x_bar, v_bar, np.tile(xi, (5, 1)), np.ones(5))
    d = vector_field(st, g, costs)
    # S_STAR_EX1 is rounded to 1e-8, hence the looser tolerance here
    assert np.abs(d.to_vector()).max() < 1e-6


def test_field_matches_compact_form_on_random_states():
    g = fig1_digraph()
    costs = example1_costs()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        st = random_state(rng)
        a = vector_field(st, g, costs).to_vector()
        b = compact_field(st, g, costs).to_vector()
        worst = max(worst, np.abs(a - b).max() / max(1.0, np.abs(b).max()))
    assert worst < 1e-12


def test_field_matches_compact_form_huber():
    g = fig1_digraph()
    rng = np.random.default_rng(4)
    costs = [huber_cost(HuberSpec(0.5, rng.normal(size=(20, 3)))) for _ in range(5)]
    for _ in range(20):
        st = random_state(rng, n=3)
        a = vector_field(st, g, costs).to_vector()
        b = compact_field(st, g, costs).to_vector()
        assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(b).max())


def test_positivity_fault():
    g = fig1_digraph()
    st = random_state(np.random.default_rng(5))
    st.w[3, 3] = -0.1
    with pytest.raises(PositivityFault) as exc:
        vector_field(st, g, example1_costs())
    assert exc.value.agent == 3


def test_non_finite_gradient_names_agent():
    class Broken(type(quadratic_cost([0.0, 0.0]))):
        def gradient(self, s):
            return np.array([np.nan, 0.0])

    costs = example1_costs()
    costs[2] = Broken("square", [0.0, 0.0])
    st = random_state(np.random.default_rng(6))
    with pytest.raises(NonFiniteGradient) as exc:
        vector_field(st, fig1_digraph(), costs)
    assert exc.value.agent == 2


def test_field_rejects_mismatched_costs():
    with pytest.raises(ValueError):
        NetworkField(fig1_digraph(), example1_costs()[:4])


# --- error coordinates -----------------------------------------------------

def test_error_coordinates_vanish_at_stationarity():
    g = fig1_digraph()
    costs = example1_costs()
    xi = certify(g).xi
    x_bar, v_bar = stationary_pair(g, costs, S_STAR_EX1, xi)
    st = NetworkState(x_bar, v_bar, np.eye(5), np.ones(5))
    ec = error_coordinates(st, x_bar, v_bar, g)
    assert np.abs(ec.zeta).max() == 0.0 and np.abs(ec.eta).max() == 0.0


def test_zeta_equals_consensus_error():
    g = fig1_digraph()
    rng = np.random.default_rng(7)
    x_bar = np.tile(S_STAR_EX1, (5, 1))
    for _ in range(20):
        st = random_state(rng)
        ec = error_coordinates(st, x_bar, np.zeros((5, 2)), g)
        np.testing.assert_allclose(ec.zeta, consensus_error_vector(st, g).ravel(),
                                   rtol=0, atol=1e-13)


def test_zeta_norm_bound():
    g = fig1_digraph()
    cert = certify(g)
    rng = np.random.default_rng(8)
    for _ in range(200):
        zsq, rhs = laplacian_projected_norm_bound(g, rng.normal(size=(5, 2)), cert)
        assert zsq >= rhs - 1e-12
