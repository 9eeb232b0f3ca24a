"""Agent states, the adaptive network vector field and the error coordinates.

Each agent i carries a decision vector ``x_i``, an integral-action vector
``v_i``, an estimate ``w_i`` of the left eigenvector (its own entry
``w_i^i`` rescales the local gradient), and an adaptive gain ``sigma_i``.
The consensus error ``e_i = sum_j a_ij (x_i - x_j)`` drives both the
integrated gain ``sigma_i`` and the memoryless gain ``rho_i = |e_i|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .costs import CostFunction, GradientStack
from .graph import Digraph, build_laplacian


class DynamicsError(RuntimeError):
    pass


class PositivityFault(DynamicsError):
    """Some ``w_i^i`` left the positive half-line (a discretization fault)."""

    def __init__(self, agent: int, value: float):
        super().__init__(f"w_{agent + 1}^{agent + 1} = {value:.6g} <= 0")
        self.agent = agent
        self.value = value


class NonFiniteGradient(DynamicsError):
    def __init__(self, agent: int, grad):
        super().__init__(f"agent {agent + 1} returned a non-finite gradient {np.asarray(grad).tolist()}")
        self.agent = agent


@dataclass(frozen=True)
class AgentState:
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    sigma: float


@dataclass
class NetworkState:
    """Stacked states of N agents: ``x``, ``v`` are (N, n), ``w`` is (N, N)."""

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    sigma: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float, ndmin=2)
        self.v = np.array(self.v, dtype=float, ndmin=2)
        self.w = np.array(self.w, dtype=float, ndmin=2)
        self.sigma = np.array(self.sigma, dtype=float, ndmin=1)
        N, n = self.x.shape
        if self.v.shape != (N, n):
            raise ValueError(f"v has shape {self.v.shape}, expected {(N, n)}")
        if self.w.shape != (N, N):
            raise ValueError(f"w has shape {self.w.shape}, expected {(N, N)}")
        if self.sigma.shape != (N,):
            raise ValueError(f"sigma has shape {self.sigma.shape}, expected {(N,)}")

    @property
    def n_agents(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def agent(self, i: int) -> AgentState:
        return AgentState(self.x[i].copy(), self.v[i].copy(), self.w[i].copy(),
                          float(self.sigma[i]))

    @property
    def agents(self) -> list[AgentState]:
        return [self.agent(i) for i in range(self.n_agents)]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.x.ravel(), self.v.ravel(), self.w.ravel(), self.sigma])

    @classmethod
    def from_vector(cls, y: np.ndarray, n_agents: int, dim: int, time: float = 0.0):
        N, n = n_agents, dim
        a, b, c = N * n, 2 * N * n, 2 * N * n + N * N
        return cls(y[:a].reshape(N, n), y[a:b].reshape(N, n),
                   y[b:c].reshape(N, N), y[c:], time=time)

    def copy(self) -> "NetworkState":
        return NetworkState(self.x.copy(), self.v.copy(), self.w.copy(),
                            self.sigma.copy(), self.time)


def initial_state(x0, v0, sigma0) -> NetworkState:
    """Start from ``x0``, ``v0`` with ``w_i(0) = e_i`` and ``sigma_i(0) = sigma0[i]``."""
    x0 = np.array(x0, dtype=float, ndmin=2)
    v0 = np.array(v0, dtype=float, ndmin=2)
    sigma0 = np.array(sigma0, dtype=float, ndmin=1)
    N = x0.shape[0]
    if sigma0.size == 1 and N > 1:
        sigma0 = np.full(N, float(sigma0[0]))
    if sigma0.shape != (N,):
        raise ValueError(f"sigma0 needs {N} entries, got {sigma0.size}")
    if np.any(~(sigma0 > 0)):
        raise ValueError(f"initial adaptive gains must be positive, got {sigma0.tolist()}")
    return NetworkState(x0, v0, np.eye(N), sigma0, time=0.0)


def consensus_error_vector(state: NetworkState, g: Digraph) -> np.ndarray:
    """``e_i = sum_j a_ij (x_i - x_j)`` for every agent, shape (N, n)."""
    return build_laplacian(g) @ state.x


class NetworkField:
    """Right-hand side of the network ODE over the flat state vector.

    ``w_diag`` replaces the learned ``w_i^i`` by fixed values; passing the
    left eigenvector gives the unperturbed flow used in the stability
    argument.
    """

    def __init__(self, g: Digraph, costs: Sequence[CostFunction], w_diag=None):
        self.graph = g
        self.costs = list(costs)
        self.N = g.n_agents
        if len(self.costs) != self.N:
            raise ValueError(f"{len(self.costs)} costs for {self.N} agents")
        self.n = self.costs[0].dimension
        if any(c.dimension != self.n for c in self.costs):
            raise ValueError("all local costs must share one dimension")
        self.adj = np.ascontiguousarray(g.adjacency)
        self.w_diag = None if w_diag is None else np.array(w_diag, dtype=float)
        self._grad_stack = GradientStack(self.costs)
        N, n = self.N, self.n
        self._grads = np.empty((N, n))
        self._slices = (N * n, 2 * N * n, 2 * N * n + N * N)
        self._diag_idx = 2 * N * n + np.arange(N) * (N + 1)
        self.size = 2 * N * n + N * N + N
        table = self._grad_stack.table
        wfix = np.empty(0) if self.w_diag is None else self.w_diag
        self.fused = None if table is None else (self.adj, N, n, *table, wfix)

    def advance_block(self, y: np.ndarray, h: float, n_steps: int) -> int:
        """Take up to ``n_steps`` compiled RK4 steps in place on ``y``.

        Returns the count completed before any step that would fault; the
        caller handles that step. Only available when :attr:`fused` is set.
        """
        adj, N, n, *rest = self.fused
        return int(kernels.rk4_block(adj, y, h, n_steps, N, n, *rest))

    def split(self, y):
        a, b, c = self._slices
        N, n = self.N, self.n
        return (y[:a].reshape(N, n), y[a:b].reshape(N, n),
                y[b:c].reshape(N, N), y[c:])

    def gradients(self, x: np.ndarray) -> np.ndarray:
        grads = self._grad_stack(x, self._grads)
        if not np.isfinite(grads).all():
            bad = int(np.flatnonzero(~np.isfinite(grads).all(axis=1))[0])
            raise NonFiniteGradient(bad, grads[bad])
        return grads

    def __call__(self, y: np.ndarray) -> np.ndarray:
        x, v, w, sigma = self.split(y)
        if self.w_diag is None:
            wdiag = y[self._diag_idx]
            if not (wdiag > 0).all():
                bad = int(np.flatnonzero(~(wdiag > 0))[0])
                raise PositivityFault(bad, float(wdiag[bad]))
        else:
            wdiag = self.w_diag
        grads = self.gradients(np.ascontiguousarray(x))
        dy = np.empty(self.size)
        dx, dv, dw, ds = self.split(dy)
        kernels.network_field(self.adj, np.ascontiguousarray(x), np.ascontiguousarray(v),
                              np.ascontiguousarray(w), sigma, grads, wdiag, dx, dv, dw, ds)
        return dy

    def evaluate(self, state: NetworkState) -> NetworkState:
        """Time derivative of ``state`` as a :class:`NetworkState`."""
        dy = self(state.to_vector())
        return NetworkState.from_vector(dy, self.N, self.n, time=state.time)


def vector_field(state: NetworkState, g: Digraph, costs: Sequence[CostFunction],
                 w_diag=None) -> NetworkState:
    return NetworkField(g, costs, w_diag=w_diag).evaluate(state)


def compact_field(state: NetworkState, g: Digraph, costs: Sequence[CostFunction],
                  w_diag=None) -> NetworkState:
    """Stacked form of the field built from dense Kronecker products.

    Independent of the per-agent kernel; kept as a cross-check.
    """
    L = build_laplacian(g)
    N, n = state.n_agents, state.dim
    In, IN = np.eye(n), np.eye(N)
    x = state.x.ravel()
    v = state.v.ravel()
    w = state.w.ravel()
    wd = np.diag(state.w) if w_diag is None else np.asarray(w_diag, dtype=float)
    grad = np.concatenate([c.gradient(state.x[i]) for i, c in enumerate(costs)])
    e = np.kron(L, In) @ x
    rho = np.array([e[i * n:(i + 1) * n] @ e[i * n:(i + 1) * n] for i in range(N)])
    C, B = np.diag(state.sigma), np.diag(rho)
    Winv = np.diag(1.0 / wd)
    gainL = np.kron((C + B) @ L, In)
    dx = -np.kron(Winv, In) @ grad - gainL @ x - np.kron(L, In) @ v
    dv = gainL @ x
    dw = -np.kron(L, IN) @ w
    return NetworkState(dx.reshape(N, n), dv.reshape(N, n), dw.reshape(N, N), rho,
                        time=state.time)


# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorCoordinates:
    zeta: np.ndarray   # (L kron I_n)(x - x_bar), flat length N*n
    eta: np.ndarray    # (L kron I_n)(v - v_bar)

    def per_agent(self, n: int):
        return self.zeta.reshape(-1, n), self.eta.reshape(-1, n)


def stationary_pair(g: Digraph, costs: Sequence[CostFunction], s_star, xi):
    """Consensus point ``x_bar = 1 kron s*`` and the minimum-norm ``v_bar``
    solving ``(L kron I) v_bar = -(R^{-1} kron I) grad f(x_bar)``.

    Both are returned as (N, n) arrays.
    """
    s_star = np.asarray(s_star, dtype=float)
    N = g.n_agents
    L = build_laplacian(g)
    x_bar = np.tile(s_star, (N, 1))
    rhs = -np.stack([c.gradient(s_star) / xi[i] for i, c in enumerate(costs)])
    # the n coordinates decouple: solve L v[:, k] = rhs[:, k]
    v_bar = np.linalg.lstsq(L, rhs, rcond=None)[0]
    return x_bar, v_bar


def error_coordinates(state: NetworkState, x_bar, v_bar, g: Digraph) -> ErrorCoordinates:
    L = build_laplacian(g)
    x_bar = np.broadcast_to(np.asarray(x_bar, dtype=float), state.x.shape)
    v_bar = np.asarray(v_bar, dtype=float).reshape(state.v.shape)
    zeta = L @ (state.x - x_bar)
    eta = L @ (state.v - v_bar)
    return ErrorCoordinates(zeta.ravel(), eta.ravel())
