"""Weighted digraphs, their Laplacians and the left-eigenvector oracles."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

ZERO_EIG_TOL = 1e-9


class GraphError(ValueError):
    """Invalid adjacency data or a graph that violates strong connectivity."""


@dataclass(frozen=True)
class Digraph:
    """Weighted digraph on nodes ``0..N-1``.

    ``adjacency[i, j] > 0`` encodes the edge ``j -> i``: agent ``i`` reads
    agent ``j``.
    """

    adjacency: np.ndarray
    name: str = ""

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise GraphError(f"adjacency must be a nonempty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise GraphError("adjacency contains non-finite weights")
        if np.any(a < 0):
            i, j = np.argwhere(a < 0)[0]
            raise GraphError(f"negative weight a[{i},{j}] = {a[i, j]}")
        if np.any(np.diag(a) != 0):
            i = int(np.flatnonzero(np.diag(a))[0])
            raise GraphError(f"self-loop weight a[{i},{i}] = {a[i, i]} must be zero")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, n_agents: int, edges, name: str = "") -> "Digraph":
        """Build from ``(src, dst[, weight])`` triples with 1-indexed nodes."""
        a = np.zeros((n_agents, n_agents))
        for edge in edges:
            src, dst = int(edge[0]), int(edge[1])
            weight = float(edge[2]) if len(edge) > 2 else 1.0
            if not (1 <= src <= n_agents and 1 <= dst <= n_agents):
                raise GraphError(f"edge {src}->{dst} outside 1..{n_agents}")
            a[dst - 1, src - 1] = weight
        return cls(a, name=name)

    def edges(self) -> list[tuple[int, int, float]]:
        """1-indexed ``(src, dst, weight)`` triples."""
        dst, src = np.nonzero(self.adjacency)
        return [(int(s) + 1, int(d) + 1, float(self.adjacency[d, s]))
                for d, s in sorted(zip(dst, src), key=lambda p: (p[1], p[0]))]


def load_edge_list(path, n_agents: int | None = None) -> Digraph:
    """Read a ``src dst [weight]`` edge list (1-indexed, ``#`` comments).

    The node count is the largest index seen unless ``n_agents`` is given.
    """
    edges = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) not in (2, 3):
            raise GraphError(f"{path}:{lineno}: expected 'src dst [weight]', got {raw!r}")
        try:
            src, dst = int(parts[0]), int(parts[1])
            weight = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError as exc:
            raise GraphError(f"{path}:{lineno}: {exc}") from None
        if src == dst:
            raise GraphError(f"{path}:{lineno}: self-loop {src}->{dst}")
        edges.append((src, dst, weight))
    if not edges and n_agents is None:
        raise GraphError(f"{path}: no edges")
    top = max((max(s, d) for s, d, _ in edges), default=1)
    return Digraph.from_edges(n_agents or top, edges, name=Path(path).stem)


def save_edge_list(g: Digraph, path) -> None:
    lines = [f"{s} {d} {w:.17g}" for s, d, w in g.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


FIG1_EDGES = [(1, 2), (2, 3), (3, 4), (4, 5), (2, 5), (5, 1), (3, 1)]


def fig1_digraph() -> Digraph:
    """The five-agent unbalanced test network, unit weights."""
    return Digraph.from_edges(5, FIG1_EDGES, name="fig1")


def cycle_digraph(n_agents: int, bidirectional: bool = True) -> Digraph:
    edges = [(i, i % n_agents + 1) for i in range(1, n_agents + 1)]
    if bidirectional:
        edges += [(d, s) for s, d in edges]
    if n_agents == 1:
        edges = []
    return Digraph.from_edges(n_agents, edges, name=f"cycle{n_agents}")


def random_strongly_connected(n_agents: int, rng: np.random.Generator,
                              extra_edge_prob: float = 0.3,
                              weight_range=(0.5, 2.0)) -> Digraph:
    """A random directed Hamiltonian cycle plus random extra edges."""
    order = rng.permutation(n_agents)
    a = np.zeros((n_agents, n_agents))
    lo, hi = weight_range
    for k in range(n_agents):
        src, dst = order[k], order[(k + 1) % n_agents]
        if src != dst:
            a[dst, src] = rng.uniform(lo, hi)
    extra = rng.random((n_agents, n_agents)) < extra_edge_prob
    np.fill_diagonal(extra, False)
    a[extra & (a == 0)] = rng.uniform(lo, hi, size=int((extra & (a == 0)).sum()))
    return Digraph(a, name=f"random{n_agents}")


# --------------------------------------------------------------------------

def build_laplacian(g: Digraph) -> np.ndarray:
    """``l_ii = sum_j a_ij``, ``l_ij = -a_ij``; every row sums to zero."""
    a = g.adjacency
    lap = -a + 0.0
    lap[np.diag_indices_from(lap)] = a.sum(axis=1)
    lap.setflags(write=False)
    return lap


def is_strongly_connected(g: Digraph) -> bool:
    if g.n_agents == 1:
        return True
    n_comp, _ = connected_components(csr_matrix(g.adjacency > 0), directed=True,
                                     connection="strong")
    return n_comp == 1


def is_balanced(g: Digraph, tol: float = 1e-12) -> bool:
    lap = build_laplacian(g)
    return bool(np.max(np.abs(lap.sum(axis=0))) <= tol * max(1.0, np.abs(lap).max()))


def require_strongly_connected(g: Digraph) -> None:
    if not is_strongly_connected(g):
        raise GraphError(
            f"graph {g.name or '<unnamed>'} is not strongly connected; "
            "the algorithm requires a strongly connected communication digraph"
        )


def left_eigenvector(lap: np.ndarray, tol: float = ZERO_EIG_TOL) -> np.ndarray:
    """Positive, unit-sum ``xi`` with ``xi^T L = 0``.

    Takes the eigenvector of ``L^T`` whose eigenvalue is nearest zero and
    refuses when zero is not a simple eigenvalue.
    """
    lap = np.asarray(lap, dtype=float)
    n = lap.shape[0]
    if n == 1:
        return np.ones(1)
    vals, vecs = np.linalg.eig(lap.T)
    scale = max(1.0, np.abs(lap).max())
    near_zero = np.abs(vals) <= tol * scale
    if near_zero.sum() != 1:
        raise GraphError(
            f"null space of L^T has dimension {int(near_zero.sum())}, expected 1 "
            "(graph not strongly connected)"
        )
    vec = np.real(vecs[:, int(np.argmin(np.abs(vals)))])
    xi = vec / vec.sum()
    if np.any(xi <= 0):
        raise GraphError("left null vector is not strictly positive (graph not strongly connected)")
    return xi


@dataclass(frozen=True)
class SpectralCertificate:
    xi: np.ndarray
    lambda2_bar: float   # second smallest eigenvalue of R L + L^T R
    lambdaN_bar: float   # largest eigenvalue of L^T L
    lambda2_LtL: float   # second smallest eigenvalue of L^T L
    lbar_min_eig: float = field(default=0.0)

    def as_dict(self) -> dict:
        return {
            "xi": self.xi.tolist(),
            "lambda2_bar": self.lambda2_bar,
            "lambdaN_bar": self.lambdaN_bar,
            "lambda2_LtL": self.lambda2_LtL,
            "lbar_min_eig": self.lbar_min_eig,
        }


def symmetrized_laplacian(lap: np.ndarray, xi: np.ndarray) -> np.ndarray:
    R = np.diag(xi)
    return R @ lap + lap.T @ R


def spectral_certificate(lap: np.ndarray, xi: np.ndarray) -> SpectralCertificate:
    lap = np.asarray(lap, dtype=float)
    n = lap.shape[0]
    if n < 2:
        raise GraphError("spectral certificate needs at least two agents")
    lbar_eigs = np.linalg.eigvalsh(symmetrized_laplacian(lap, xi))
    ltl_eigs = np.linalg.eigvalsh(lap.T @ lap)
    cert = SpectralCertificate(
        xi=np.array(xi, dtype=float),
        lambda2_bar=float(lbar_eigs[1]),
        lambdaN_bar=float(ltl_eigs[-1]),
        lambda2_LtL=float(ltl_eigs[1]),
        lbar_min_eig=float(lbar_eigs[0]),
    )
    if cert.lambda2_bar <= 0 or cert.lambda2_LtL <= 0:
        raise GraphError(
            f"nonpositive spectral constants (lambda2_bar={cert.lambda2_bar:.3e}, "
            f"lambda2_LtL={cert.lambda2_LtL:.3e}); graph not strongly connected"
        )
    return cert


def certify(g: Digraph) -> SpectralCertificate:
    """Strong-connectivity check, left eigenvector and spectral constants."""
    require_strongly_connected(g)
    lap = build_laplacian(g)
    return spectral_certificate(lap, left_eigenvector(lap))


@dataclass
class ExpLimitReport:
    times: list
    min_entry: list
    min_diagonal: list
    limit_deviation: list
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def matrix_exponential_limit_check(lap: np.ndarray, t_grid: Sequence[float],
                                   xi: np.ndarray | None = None,
                                   neg_tol: float = 1e-12) -> ExpLimitReport:
    """Check ``exp(-L t)`` is nonnegative with positive diagonal, and track
    ``max |exp(-L t) - 1 xi^T|`` along ``t_grid``.

    Violations are ``(t, i, j, value)`` tuples.
    """
    lap = np.asarray(lap, dtype=float)
    if xi is None:
        xi = left_eigenvector(lap)
    limit = np.outer(np.ones(lap.shape[0]), xi)
    rep = ExpLimitReport([], [], [], [], [])
    for t in t_grid:
        E = expm(-lap * float(t))
        rep.times.append(float(t))
        rep.min_entry.append(float(E.min()))
        rep.min_diagonal.append(float(np.diag(E).min()))
        rep.limit_deviation.append(float(np.abs(E - limit).max()))
        for i, j in np.argwhere(E < -neg_tol):
            rep.violations.append((float(t), int(i), int(j), float(E[i, j])))
        for i in np.flatnonzero(np.diag(E) <= 0):
            rep.violations.append((float(t), int(i), int(i), float(E[i, i])))
    return rep
