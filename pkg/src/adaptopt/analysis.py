"""Convergence metrics and the Lyapunov certificate of the unperturbed flow."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .costs import CostError, CostFunction
from .dynamics import (ErrorCoordinates, NetworkField, NetworkState, compact_field,
                       error_coordinates, stationary_pair)
from .graph import Digraph, SpectralCertificate, build_laplacian
from .integrator import Trajectory, rk4_step


def consensus_error(x: np.ndarray) -> float:
    """``max_{i,j} ||x_i - x_j||``."""
    diff = x[:, None, :] - x[None, :, :]
    return float(np.sqrt((diff ** 2).sum(axis=-1)).max())


def weighted_mean(x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    return np.asarray(xi) @ x


def optimality_residual(state: NetworkState, costs: Sequence[CostFunction], xi) -> float:
    """``||sum_i grad f_i(x_hat)||`` at the xi-weighted mean ``x_hat``."""
    x_hat = weighted_mean(state.x, xi)
    return float(np.linalg.norm(np.sum([c.gradient(x_hat) for c in costs], axis=0)))


def w_error(w: np.ndarray, xi) -> float:
    """``max_i ||w_i - xi||``."""
    return float(np.sqrt(((w - np.asarray(xi)[None, :]) ** 2).sum(axis=1)).max())


class MetricsObserver:
    """Observer collecting the scalar diagnostics at every recorded step.

    With ``s_star`` it adds the distance to the oracle; with ``lyapunov``
    (a ``(constants, cert, x_bar, v_bar)`` tuple) it records V along the
    trajectory as a plain series.
    """

    def __init__(self, g: Digraph, costs, xi, s_star=None, lyapunov=None):
        self.graph = g
        self.costs = list(costs)
        self.xi = np.asarray(xi, dtype=float)
        self.s_star = None if s_star is None else np.asarray(s_star, dtype=float)
        self.lyapunov = lyapunov

    def __call__(self, t, state: NetworkState) -> dict:
        out = {
            "consensus_error": consensus_error(state.x),
            "optimality_residual": optimality_residual(state, self.costs, self.xi),
            "w_error": w_error(state.w, self.xi),
        }
        if self.s_star is not None:
            out["distance_to_oracle"] = float(
                np.linalg.norm(state.x - self.s_star[None, :], axis=1).max())
        if self.lyapunov is not None:
            consts, cert, x_bar, v_bar = self.lyapunov
            ec = error_coordinates(state, x_bar, v_bar, self.graph)
            out["lyapunov"] = lyapunov_value(ec, state.sigma, cert.xi, consts.sigma_zero, cert)
        return out


@dataclass
class ConvergenceReport:
    consensus_error: float
    optimality_residual: float
    distance_to_oracle: float
    w_error: float
    sigma_final: list
    series: dict = field(default_factory=dict)

    def to_dict(self, with_series: bool = True) -> dict:
        d = asdict(self)
        if not with_series:
            d.pop("series")
        return d


def convergence_report(traj: Trajectory, oracle_s_star, xi, costs,
                       g: Digraph | None = None) -> ConvergenceReport:
    """Final-time metrics plus their full time series, recomputed from records."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    s_star = np.asarray(oracle_s_star, dtype=float)
    xi = np.asarray(xi, dtype=float)
    series = {"t": traj.times.tolist(), "consensus_error": [], "optimality_residual": [],
              "distance_to_oracle": [], "w_error": []}
    for k in range(len(traj)):
        st = traj.state(k)
        series["consensus_error"].append(consensus_error(st.x))
        series["optimality_residual"].append(optimality_residual(st, costs, xi))
        series["distance_to_oracle"].append(
            float(np.linalg.norm(st.x - s_star[None, :], axis=1).max()))
        series["w_error"].append(w_error(st.w, xi))
    series["sigma"] = traj.sigma.tolist()
    return ConvergenceReport(
        consensus_error=series["consensus_error"][-1],
        optimality_residual=series["optimality_residual"][-1],
        distance_to_oracle=series["distance_to_oracle"][-1],
        w_error=series["w_error"][-1],
        sigma_final=traj.sigma[-1].tolist(),
        series=series,
    )


# --------------------------------------------------------------------------
# Lyapunov certificate

@dataclass(frozen=True)
class LyapunovConstants:
    omega1: float
    omega2: float
    sigma_zero: float
    epsilon: float
    varrho: float
    kappa: float
    l_hat: float
    w_check: float

    def as_dict(self):
        return asdict(self)


def lyapunov_constants(cert: SpectralCertificate, costs: Sequence[CostFunction],
                       w_check: float, N: int) -> LyapunovConstants:
    """Constants of the stability argument from the spectral data.

    ``w_check`` lower-bounds ``w_i^i`` (use ``min(xi)`` for the unperturbed
    flow). Every cost needs a Lipschitz hint.
    """
    hints = [c.lipschitz_hint for c in costs]
    if any(h is None for h in hints):
        missing = [i + 1 for i, h in enumerate(hints) if h is None]
        raise CostError(f"agents {missing} have no Lipschitz hint")
    if not w_check > 0:
        raise ValueError("w_check must be positive")
    lam2, lamN, lam2t = cert.lambda2_bar, cert.lambdaN_bar, cert.lambda2_LtL
    l_hat = float(max(hints))
    omega1 = 33 * N * lamN * (lam2 + 2 * lamN) / lam2 ** 3
    omega2 = (l_hat ** 2 / lam2t) * (
        4 * N * lamN / (lam2 * w_check ** 2)
        + 17 * N * lamN ** 2 * (8 + lam2) / (4 * lam2 ** 3 * w_check ** 2)
    )
    sigma_zero = 1 + omega1 + omega2 + N / (2 * lam2)
    epsilon = 33 * N * lamN / lam2 ** 2
    varrho = 4 * N / lam2 + epsilon * (8 + lam2) / (4 * lam2)
    kappa = min(N * lamN / (8 * lam2), 1.0)
    return LyapunovConstants(float(omega1), float(omega2), float(sigma_zero), float(epsilon),
                             float(varrho), float(kappa), l_hat, float(w_check))


def _rho(zeta_i: np.ndarray) -> np.ndarray:
    return np.einsum("ik,ik->i", zeta_i, zeta_i)


def lyapunov_terms(ec: ErrorCoordinates, sigmas, xi, sigma_zero: float):
    """``(V1, V2, V3)``; ``n`` is inferred from ``len(zeta) / N``."""
    sigmas = np.asarray(sigmas, dtype=float)
    xi = np.asarray(xi, dtype=float)
    N = sigmas.size
    zeta = ec.zeta.reshape(N, -1)
    eta = ec.eta.reshape(N, -1)
    rho = _rho(zeta)
    v1 = 0.5 * float(((sigmas - sigma_zero) ** 2).sum())
    v2 = 0.5 * float((xi * (2 * sigmas + rho) * rho).sum())
    s = zeta + eta
    v3 = 0.5 * float((xi * _rho(s)).sum())
    return v1, v2, v3


def lyapunov_value(ec: ErrorCoordinates, sigmas, xi, sigma_zero: float,
                   cert: SpectralCertificate) -> float:
    """``V = V1 + V2 + (33 N lambdaN / lambda2^2) V3``."""
    N = np.asarray(sigmas).size
    v1, v2, v3 = lyapunov_terms(ec, sigmas, xi, sigma_zero)
    return v1 + v2 + 33 * N * cert.lambdaN_bar / cert.lambda2_bar ** 2 * v3


@dataclass
class DecreaseSample:
    vdot: float
    bound: float
    slack: float
    zeta_sq: float
    eta_sq: float
    passed: bool
    state: NetworkState | None = None


@dataclass
class DecreaseReport:
    samples: list
    sigma_zero: float

    @property
    def violations(self) -> list:
        return [s for s in self.samples if not s.passed]

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> dict:
        margins = [s.bound + s.slack - s.vdot for s in self.samples]
        return {"n_samples": len(self.samples), "n_violations": len(self.violations),
                "sigma_zero": self.sigma_zero,
                "min_margin": float(min(margins)) if margins else None}


def lyapunov_decrease_check(samples: Sequence[NetworkState], x_bar, v_bar, g: Digraph,
                            costs: Sequence[CostFunction], cert: SpectralCertificate,
                            sigma_zero: float | None = None, w_check: float | None = None,
                            delta: float = 1e-6, slack_rel: float = 1e-4) -> DecreaseReport:
    """Sample ``dV/dt <= -|zeta|^2 - (17 N lambdaN / (4 lambda2)) |eta|^2``
    along the unperturbed flow (``w_i^i`` frozen at ``xi_i``).

    ``dV/dt`` is a central difference over one RK4 step of ``+-delta``. The
    ``V1`` part is differenced in factored form because ``sigma_zero`` is
    typically many orders of magnitude above ``sigma``.
    """
    xi = cert.xi
    N = g.n_agents
    if sigma_zero is None:
        wc = float(np.min(xi)) if w_check is None else w_check
        sigma_zero = lyapunov_constants(cert, costs, wc, N).sigma_zero
    coef = 33 * N * cert.lambdaN_bar / cert.lambda2_bar ** 2
    eta_coef = 17 * N * cert.lambdaN_bar / (4 * cert.lambda2_bar)
    field = NetworkField(g, costs, w_diag=xi)
    out = []
    for st in samples:
        plus = rk4_step(st, field, delta)
        minus = rk4_step(st, field, -delta)
        ec0 = error_coordinates(st, x_bar, v_bar, g)
        ecp = error_coordinates(plus, x_bar, v_bar, g)
        ecm = error_coordinates(minus, x_bar, v_bar, g)
        _, v2p, v3p = lyapunov_terms(ecp, plus.sigma, xi, sigma_zero)
        _, v2m, v3m = lyapunov_terms(ecm, minus.sigma, xi, sigma_zero)
        dv1 = 0.5 * float(((plus.sigma - minus.sigma)
                           * (plus.sigma + minus.sigma - 2 * sigma_zero)).sum())
        vdot = (dv1 + (v2p - v2m) + coef * (v3p - v3m)) / (2 * delta)
        zsq = float(ec0.zeta @ ec0.zeta)
        esq = float(ec0.eta @ ec0.eta)
        bound = -zsq - eta_coef * esq
        slack = slack_rel * (1 + abs(vdot))
        ok = vdot <= bound + slack
        out.append(DecreaseSample(vdot, bound, slack, zsq, esq, bool(ok),
                                  None if ok else st.copy()))
    return DecreaseReport(out, float(sigma_zero))


def sample_states(x_bar, v_bar, rng: np.random.Generator, count: int,
                  radius: float = 1.0, sigma_range=(1.0, 10.0)) -> list[NetworkState]:
    """Random states around the stationary pair with random positive gains."""
    x_bar = np.asarray(x_bar, dtype=float)
    v_bar = np.asarray(v_bar, dtype=float)
    N = x_bar.shape[0]
    lo, hi = sigma_range
    out = []
    for _ in range(count):
        out.append(NetworkState(
            x_bar + rng.uniform(-radius, radius, x_bar.shape),
            v_bar + rng.uniform(-radius, radius, v_bar.shape),
            np.eye(N),
            rng.uniform(lo, hi, N),
        ))
    return out


def stationary_pair_round_trip(g: Digraph, costs, s_star, xi) -> float:
    """Max abs entry of the unperturbed stacked field at the stationary pair."""
    x_bar, v_bar = stationary_pair(g, costs, s_star, xi)
    N = g.n_agents
    st = NetworkState(x_bar, v_bar, np.tile(xi, (N, 1)), np.ones(N))
    d = compact_field(st, g, costs, w_diag=xi)
    return float(np.abs(d.to_vector()).max())


def laplacian_projected_norm_bound(g: Digraph, x_tilde: np.ndarray, cert) -> tuple:
    """``(|zeta|^2, lambda2(L^T L) |x_perp|^2)`` for a stacked deviation."""
    L = build_laplacian(g)
    zeta = L @ x_tilde
    x_perp = x_tilde - x_tilde.mean(axis=0, keepdims=True)
    return float((zeta ** 2).sum()), cert.lambda2_LtL * float((x_perp ** 2).sum())
