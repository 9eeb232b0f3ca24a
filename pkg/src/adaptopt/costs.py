"""Local cost functions, the two example libraries, and the centralized oracle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels


class CostError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class CostFunction:
    """Smooth local cost ``f_i: R^n -> R`` with an analytic gradient.

    Subclasses implement :meth:`value` and :meth:`gradient`.
    ``lipschitz_hint`` is an upper bound on the gradient's Lipschitz constant
    (``None`` when unknown). ``singular_points`` lists points where the
    gradient is not differentiable; ``singular_radius`` is the radius around
    them outside of which the hint is claimed to hold.
    """

    dimension: int
    lipschitz_hint: float | None = None
    singular_points: tuple = ()
    singular_radius: float = 0.0
    name: str = ""

    def value(self, s: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, s):
        return self.value(s)

    def distance_to_singular(self, s) -> float:
        s = np.asarray(s, dtype=float)
        if not self.singular_points:
            return np.inf
        return min(float(np.linalg.norm(s - p)) for p in self.singular_points)

    def describe(self) -> dict:
        return {"name": self.name, "dimension": self.dimension,
                "lipschitz_hint": self.lipschitz_hint}


_KIND_NAMES = {"sin": kernels.SIN, "coslog": kernels.COSLOG, "power": kernels.POWER,
               "square": kernels.SQUARE, "soft": kernels.SOFT}


class RadialCost(CostFunction):
    """``scale * phi(||s - center||)`` for a fixed profile ``phi``.

    Profiles: ``sin`` (sin r), ``coslog`` (cos ln r, r clamped below
    ``param``), ``power`` (r**param), ``square`` (r**2), ``soft``
    (r**2 / sqrt(r**2 + param)).
    """

    def __init__(self, kind: str, center, scale: float = 1.0, param: float = 0.0,
                 lipschitz_hint: float | None = None, singular: bool = False,
                 singular_radius: float = 0.0, name: str = ""):
        if kind not in _KIND_NAMES:
            raise CostError(f"unknown radial profile {kind!r}")
        self.kind = kind
        self.code = _KIND_NAMES[kind]
        self.center = np.array(center, dtype=float)
        self.dimension = self.center.size
        self.scale = float(scale)
        self.param = float(param)
        self.lipschitz_hint = lipschitz_hint
        self.singular_points = (self.center.copy(),) if singular else ()
        self.singular_radius = singular_radius
        self.name = name or kind

    def value(self, s):
        r = float(np.linalg.norm(np.asarray(s, dtype=float) - self.center))
        return float(kernels.radial_profile(self.code, r, self.scale, self.param)[0])

    def gradient(self, s):
        u = np.asarray(s, dtype=float) - self.center
        r = float(np.linalg.norm(u))
        return kernels.radial_profile(self.code, r, self.scale, self.param)[1] * u

    def describe(self):
        d = super().describe()
        d.update(kind=self.kind, center=self.center.tolist(), scale=self.scale, param=self.param)
        return d


def quadratic_cost(center, scale: float = 1.0, name: str = "") -> RadialCost:
    """``scale * ||s - center||^2``."""
    return RadialCost("square", center, scale, lipschitz_hint=2.0 * abs(scale),
                      name=name or "quadratic")


COSLOG_EPS = 1e-9


def example1_costs() -> list[RadialCost]:
    """The five two-dimensional costs of the first example.

    f1 and f2 are nonconvex. Their Lipschitz hints, and f3's, hold outside
    the unit ball around the respective singular point; f4 and f5 are global.
    """
    return [
        RadialCost("sin", [-4.0, -5.0], 5.0, lipschitz_hint=5.0, singular=True,
                   singular_radius=1.0, name="f1"),
        RadialCost("coslog", [-8.0, -10.0], 10.0, param=COSLOG_EPS,
                   lipschitz_hint=10.0 * np.sqrt(2.0), singular=True,
                   singular_radius=1.0, name="f2"),
        RadialCost("power", [-2.0, -3.0], 4.0, param=4.0 / 3.0,
                   lipschitz_hint=16.0 / 3.0, singular=True, singular_radius=1.0,
                   name="f3"),
        RadialCost("square", [3.0, 5.0], 2.0, lipschitz_hint=4.0, name="f4"),
        RadialCost("soft", [-1.0, -2.0], 1.0, param=2.0, lipschitz_hint=np.sqrt(2.0),
                   name="f5"),
    ]


# --------------------------------------------------------------------------
# Huber

def huber_scalar(q: float, s: float, tol: float) -> float:
    """Huber loss of residual ``q - s`` with threshold ``tol``."""
    if not tol > 0:
        raise CostError(f"Huber threshold must be positive, got {tol}")
    r = abs(q - s)
    if r <= tol:
        return 0.5 * r * r
    return tol * r - 0.5 * tol * tol


def huber_scalar_derivative(q: float, s: float, tol: float) -> float:
    """d/ds of :func:`huber_scalar`."""
    if not tol > 0:
        raise CostError(f"Huber threshold must be positive, got {tol}")
    r = s - q
    return float(min(max(r, -tol), tol))


@dataclass(frozen=True)
class HuberSpec:
    tolerance: float
    data: np.ndarray

    def __post_init__(self):
        data = np.atleast_2d(np.array(self.data, dtype=float))
        if data.shape[0] == 0 or data.size == 0:
            raise CostError("Huber data must be nonempty")
        if not self.tolerance > 0:
            raise CostError(f"Huber threshold must be positive, got {self.tolerance}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)


class HuberCost(CostFunction):
    """``|| sum_j H(Q_j, s) ||_1`` with ``H`` applied componentwise.

    The outer l1 norm contributes ``sign(.)`` with ``sign(0) = 0``.
    """

    def __init__(self, spec: HuberSpec, name: str = ""):
        self.spec = spec
        self.data = np.ascontiguousarray(spec.data)
        self.tol = float(spec.tolerance)
        self.dimension = self.data.shape[1]
        # each H' is 1-Lipschitz; sign(.) is constant off the degenerate set
        self.lipschitz_hint = float(self.data.shape[0])
        self.name = name or "huber"
        self._val = np.empty(self.dimension)
        self._grad = np.empty(self.dimension)

    def _sums(self, s):
        s = np.ascontiguousarray(s, dtype=float)
        kernels.huber_sums(self.data, s, self.tol, self._val, self._grad)
        return self._val, self._grad

    def value(self, s):
        val, _ = self._sums(s)
        return float(np.abs(val).sum())

    def gradient(self, s):
        val, grad = self._sums(s)
        return np.sign(val) * grad

    def describe(self):
        d = super().describe()
        d.update(tolerance=self.tol, n_samples=int(self.data.shape[0]))
        return d


def huber_cost(spec: HuberSpec, name: str = "") -> HuberCost:
    return HuberCost(spec, name=name)


# --------------------------------------------------------------------------

class SumCost(CostFunction):
    """Sum of local costs sharing one dimension."""

    def __init__(self, costs: Sequence[CostFunction]):
        costs = list(costs)
        if not costs:
            raise CostError("global cost needs at least one local cost")
        dims = {c.dimension for c in costs}
        if len(dims) != 1:
            raise CostError(f"local costs disagree on dimension: {sorted(dims)}")
        self.costs = costs
        self.dimension = dims.pop()
        hints = [c.lipschitz_hint for c in costs]
        self.lipschitz_hint = None if None in hints else float(sum(hints))
        self.singular_points = tuple(p for c in costs for p in c.singular_points)
        self.singular_radius = max(c.singular_radius for c in costs)
        self.name = "sum"

    def value(self, s):
        return float(sum(c.value(s) for c in self.costs))

    def gradient(self, s):
        return np.sum([c.gradient(s) for c in self.costs], axis=0)


def global_cost(costs: Sequence[CostFunction]) -> SumCost:
    return SumCost(costs)


class GradientStack:
    """Evaluate ``grad f_i(x_i)`` for all agents into an ``(N, n)`` array.

    When every cost is radial or Huber the whole stack goes through one
    compiled kernel call (see :attr:`table`); anything else is called agent
    by agent.
    """

    def __init__(self, costs: Sequence[CostFunction]):
        self.costs = list(costs)
        self.N = len(self.costs)
        self.n = self.costs[0].dimension
        self.table = cost_table(self.costs)

    def __call__(self, X: np.ndarray, out: np.ndarray) -> np.ndarray:
        if self.table is not None:
            kernels.mixed_gradients(*self.table, X, out)
        else:
            for i, c in enumerate(self.costs):
                out[i] = c.gradient(X[i])
        return out


def cost_table(costs: Sequence[CostFunction]):
    """Pack radial and Huber costs into the flat arrays the kernels take.

    Returns ``(ctype, kinds, centers, scales, params, hdata, hcount, htol)``
    or None if some cost is of another type.
    """
    # exact types only: a subclass may override gradient()
    if not all(type(c) in (RadialCost, HuberCost) for c in costs):
        return None
    N, n = len(costs), costs[0].dimension
    ctype = np.zeros(N, dtype=np.int64)
    kinds = np.zeros(N, dtype=np.int64)
    centers = np.zeros((N, n))
    scales = np.zeros(N)
    params = np.zeros(N)
    hcount = np.zeros(N, dtype=np.int64)
    htol = np.zeros(N)
    m_max = max([c.data.shape[0] for c in costs if isinstance(c, HuberCost)], default=0)
    hdata = np.zeros((N, max(m_max, 1), n))
    for i, c in enumerate(costs):
        if type(c) is RadialCost:
            kinds[i], centers[i], scales[i], params[i] = c.code, c.center, c.scale, c.param
        else:
            ctype[i] = 1
            m = c.data.shape[0]
            hdata[i, :m] = c.data
            hcount[i] = m
            htol[i] = c.tol
    return ctype, kinds, centers, scales, params, hdata, hcount, htol


# --------------------------------------------------------------------------

@dataclass
class MinimizerResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    starts: list = field(default_factory=list)


def _descend(f: CostFunction, x0, tol, max_iter, c1=1e-4, shrink=0.5):
    # Trial step is Barzilai-Borwein, then Armijo backtracking. Once the
    # predicted decrease drops under the rounding level of f, a decrease of
    # ||grad|| is accepted instead.
    x = np.array(x0, dtype=float)
    fx = f.value(x)
    g = f.gradient(x)
    step = 1.0
    for it in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn < tol:
            return x, fx, gn, it
        while True:
            trial = x - step * g
            ft = f.value(trial)
            drop = c1 * step * gn * gn
            if ft <= fx - drop:
                gt = f.gradient(trial)
                break
            if drop < 64 * np.finfo(float).eps * max(1.0, abs(fx)):
                gt = f.gradient(trial)
                if np.linalg.norm(gt) < gn:
                    break
            step *= shrink
            if step < 1e-300:
                return x, fx, gn, it
        s, y = trial - x, gt - g
        x, fx, g = trial, ft, gt
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else min(step * 2.0, 1e6)
        step = min(max(step, 1e-12), 1e6)
    return x, fx, float(np.linalg.norm(g)), max_iter


def centralized_minimizer(f: CostFunction, x0=None, tol: float = 1e-10,
                          starts: Sequence | None = None,
                          max_iter: int = 200_000) -> MinimizerResult:
    """Multi-start gradient descent with Armijo backtracking.

    Each start in ``starts`` (plus ``x0``) is descended until
    ``||grad f|| < tol``; the converged point with the lowest value wins.
    Raises :class:`ConvergenceError` if no start converges.
    """
    if not tol > 0:
        raise CostError("tol must be positive")
    points = [] if x0 is None else [np.asarray(x0, dtype=float)]
    if starts is not None:
        points += [np.asarray(p, dtype=float) for p in starts]
    if not points:
        points = [np.zeros(f.dimension)]
    best = None
    record = []
    for p in points:
        x, fx, gn, it = _descend(f, p, tol, max_iter)
        record.append((p.tolist(), x.tolist(), fx, gn))
        if gn < tol and (best is None or fx < best.value):
            best = MinimizerResult(x, fx, gn, it)
    if best is None:
        worst = min(r[3] for r in record)
        raise ConvergenceError(
            f"no start reached ||grad|| < {tol:g} within {max_iter} iterations "
            f"(best gradient norm {worst:.3e})"
        )
    best.starts = record
    return best


def grid_starts(lo: float, hi: float, per_axis: int, dimension: int) -> list[np.ndarray]:
    axis = np.linspace(lo, hi, per_axis)
    return [np.array(p) for p in itertools.product(axis, repeat=dimension)]


# --------------------------------------------------------------------------

@dataclass
class GradientCheckReport:
    max_rel_error: float
    errors: list
    points: list

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def gradient_check(f: CostFunction, points, h: float = 1e-6) -> GradientCheckReport:
    """Central-difference check of ``f.gradient``.

    Error per point is ``||g - g_fd||_inf / max(1, ||g||_inf)``.
    """
    errors = []
    pts = [np.asarray(p, dtype=float) for p in points]
    for p in pts:
        g = f.gradient(p)
        fd = np.empty_like(g)
        for k in range(p.size):
            e = np.zeros_like(p)
            e[k] = h
            fd[k] = (f.value(p + e) - f.value(p - e)) / (2 * h)
        errors.append(float(np.abs(g - fd).max() / max(1.0, np.abs(g).max())))
    return GradientCheckReport(max(errors) if errors else 0.0, errors, pts)


def sample_nonsingular(f: CostFunction, rng: np.random.Generator, count: int,
                       lo: float = -10.0, hi: float = 10.0, clearance: float = 0.1,
                       around=None) -> list[np.ndarray]:
    """Uniform points in a box (shifted by ``around``) avoiding singular balls."""
    shift = np.zeros(f.dimension) if around is None else np.asarray(around, dtype=float)
    out = []
    while len(out) < count:
        p = shift + rng.uniform(lo, hi, f.dimension)
        if f.distance_to_singular(p) > clearance:
            out.append(p)
    return out
