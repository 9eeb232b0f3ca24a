"""Fixed-step classical Runge-Kutta integration with fault-driven step halving."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import DynamicsError, NetworkState, NonFiniteGradient, PositivityFault


class IntegrationAborted(RuntimeError):
    """The run could not continue; ``diagnostics`` holds the offending state."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 1e-3
    t_end: float = 100.0
    record_stride: int = 100
    min_step: float = 1e-7

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not 0 < self.min_step <= self.step:
            raise ValueError(f"need 0 < min_step <= step, got {self.min_step}")
        if not self.t_end >= 0 or not math.isfinite(self.t_end):
            raise ValueError(f"t_end must be finite and nonnegative, got {self.t_end}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError(f"record_stride must be a positive integer, got {self.record_stride}")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.step + 1e-9))


def _rk4(y, f, h):
    k1 = f(y)
    k2 = f(y + (0.5 * h) * k1)
    k3 = f(y + (0.5 * h) * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def rk4_step(state, field: Callable, h: float):
    """One classical RK4 step.

    ``state`` is either a flat array (``field`` maps arrays to arrays) or a
    :class:`NetworkState`, in which case all components advance together
    and the time moves by ``h``.
    """
    if isinstance(state, NetworkState):
        y = _rk4(state.to_vector(), field, h)
        return NetworkState.from_vector(y, state.n_agents, state.dim, time=state.time + h)
    return _rk4(np.asarray(state, dtype=float), field, h)


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray        # (R, N, n)
    v: np.ndarray        # (R, N, n)
    w: np.ndarray        # (R, N, N)
    sigma: np.ndarray    # (R, N)
    metrics: dict = field(default_factory=dict)
    faults: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def state(self, k: int) -> NetworkState:
        return NetworkState(self.x[k], self.v[k], self.w[k], self.sigma[k], float(self.times[k]))

    @property
    def final(self) -> NetworkState:
        return self.state(len(self) - 1)


class _Recorder:
    def __init__(self, n_records, N, n, observers):
        self.times = np.empty(n_records)
        self.x = np.empty((n_records, N, n))
        self.v = np.empty((n_records, N, n))
        self.w = np.empty((n_records, N, N))
        self.sigma = np.empty((n_records, N))
        self.observers = list(observers)
        self.metrics: dict[str, list] = {}
        self.k = 0

    def __call__(self, t, state: NetworkState):
        k = self.k
        self.times[k] = t
        self.x[k], self.v[k], self.w[k], self.sigma[k] = state.x, state.v, state.w, state.sigma
        for obs in self.observers:
            out = obs(t, state)
            if out:
                for name, val in out.items():
                    self.metrics.setdefault(name, []).append(val)
        self.k += 1


def integrate(state0: NetworkState, field, cfg: IntegratorConfig,
              observers: Sequence[Callable] = ()) -> Trajectory:
    """Integrate from ``state0`` to ``cfg.t_end`` with fixed step ``cfg.step``.

    Every ``record_stride``-th step is recorded and handed to each observer
    as ``observer(t, state)``; dict results are collected into
    ``Trajectory.metrics``. A positivity fault or a non-finite result makes
    the step retry as two half steps, recursively down to ``min_step``;
    below that the run aborts with :class:`IntegrationAborted`.
    """
    N, n = state0.n_agents, state0.dim
    h = cfg.step
    n_steps = cfg.n_steps
    stride = int(cfg.record_stride)
    rec = _Recorder(n_steps // stride + 1, N, n, observers)
    y = state0.to_vector()
    t0 = float(state0.time)
    rec(t0, state0.copy())
    faults = []

    def advance(y, t, h):
        try:
            y_new = _rk4(y, field, h)
            if np.isfinite(y_new).all():
                return y_new
            reason = "non-finite state"
        except PositivityFault as exc:
            reason = str(exc)
        except NonFiniteGradient as exc:
            raise IntegrationAborted(
                f"t={t:.6g}: {exc}",
                {"time": t, "agent": exc.agent, "reason": str(exc),
                 "state": NetworkState.from_vector(y, N, n, t)},
            ) from exc
        half = 0.5 * h
        if half < cfg.min_step:
            raise IntegrationAborted(
                f"t={t:.6g}: {reason} persists below min_step={cfg.min_step:g}",
                {"time": t, "reason": reason, "step": h,
                 "state": NetworkState.from_vector(y, N, n, t)},
            )
        faults.append({"time": t, "step": h, "reason": reason})
        y_mid = advance(y, t, half)
        return advance(y_mid, t + half, half)

    def slow_step(y, k):
        t_prev = t0 + (k - 1) * h
        try:
            return advance(y, t_prev, h)
        except DynamicsError as exc:  # pragma: no cover - unexpected field error
            raise IntegrationAborted(f"t={t_prev:.6g}: {exc}", {"time": t_prev}) from exc

    fused = getattr(field, "fused", None) is not None
    k = 0
    while k < n_steps:
        target = min(n_steps, (k // stride + 1) * stride)
        if fused:
            # compiled steps up to the next record; a step that would fault is
            # redone by the python stepper, which splits it
            y = np.ascontiguousarray(y, dtype=float)
            k += field.advance_block(y, h, target - k)
            if k < target:
                k += 1
                y = slow_step(y, k)
        else:
            k += 1
            y = slow_step(y, k)
        if k % stride == 0 and k <= n_steps:
            rec(t0 + k * h, NetworkState.from_vector(y.copy(), N, n, t0 + k * h))

    metrics = {name: np.asarray(vals) for name, vals in rec.metrics.items()}
    return Trajectory(rec.times, rec.x, rec.v, rec.w, rec.sigma, metrics, faults,
                      meta={"step": h, "t_end": cfg.t_end, "record_stride": stride})
