"""Experiment configuration, the two reference experiments, and file outputs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import ConvergenceReport, MetricsObserver, convergence_report
from .costs import (HuberSpec, centralized_minimizer, example1_costs,
                    global_cost, grid_starts, huber_cost, quadratic_cost)
from .dynamics import NetworkField, initial_state
from .graph import (Digraph, SpectralCertificate, certify,
                    cycle_digraph, fig1_digraph, load_edge_list)
from .integrator import IntegratorConfig, Trajectory, integrate

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class HuberDataConfig:
    mu: list = field(default_factory=lambda: [1.0, 2.0, 3.0])
    tolerance: float = 0.5
    cov_scale: float = 0.01      # sensor i draws with covariance cov_scale * i * I
    count: int = 500


@dataclass
class ExperimentConfig:
    """Everything a run needs. ``graph`` is ``fig1``, ``cycleN`` or a path to
    an edge list; ``costs`` is ``example1``, ``example2`` or ``quadratic``
    (with ``quadratics`` holding ``{center, scale}`` pairs, one per agent)."""

    name: str = "custom"
    graph: str = "fig1"
    costs: str = "example1"
    n: int | None = None
    seed: int = 0
    step: float = 1e-3
    t_end: float = 100.0
    stride: int = 100
    min_step: float = 1e-7
    sigma0: float | list = 1.0
    x0: list | None = None
    v0: list | None = None
    init_range: list = field(default_factory=lambda: [-5.0, 5.0])
    huber: HuberDataConfig = field(default_factory=HuberDataConfig)
    quadratics: list | None = None
    output_dir: str | None = None
    base_dir: str | None = field(default=None, repr=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "huber" in d:
            hd = d["huber"] or {}
            bad = set(hd) - {f.name for f in fields(HuberDataConfig)}
            if bad:
                raise ConfigError(f"unknown huber keys: {sorted(bad)}")
            d["huber"] = HuberDataConfig(**hd)
        cfg = cls(**d, base_dir=None if base_dir is None else str(base_dir))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def validate(self):
        try:
            self.integrator()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.costs not in ("example1", "example2", "quadratic"):
            raise ConfigError(f"unknown cost set {self.costs!r}")
        if self.costs == "quadratic" and not self.quadratics:
            raise ConfigError("cost set 'quadratic' needs a 'quadratics' list")
        lo, hi = self.init_range
        if not lo < hi:
            raise ConfigError(f"init_range must be increasing, got {self.init_range}")
        s0 = np.atleast_1d(np.asarray(self.sigma0, dtype=float))
        if np.any(~(s0 > 0)):
            raise ConfigError(f"sigma0 must be positive, got {self.sigma0}")
        if int(self.seed) != self.seed:
            raise ConfigError("seed must be an integer")

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(step=float(self.step), t_end=float(self.t_end),
                                record_stride=int(self.stride), min_step=float(self.min_step))

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        if "huber" in overrides and isinstance(overrides["huber"], dict):
            overrides["huber"] = replace(self.huber, **overrides["huber"])
        cfg = replace(self, **overrides)
        cfg.validate()
        return cfg


EXAMPLE1 = ExperimentConfig(name="example1", graph="fig1", costs="example1",
                            step=1e-3, stride=100, t_end=100.0)
# the Huber costs have curvature ~500 / xi_min, past the RK4 stability limit at 1e-3
EXAMPLE2 = ExperimentConfig(name="example2", graph="fig1", costs="example2",
                            step=2.5e-4, stride=400, t_end=100.0)
BUILTIN = {"example1": EXAMPLE1, "example2": EXAMPLE2}


def load_config(path) -> ExperimentConfig:
    """Load a YAML (or JSON) experiment file; relative paths resolve against it."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is None:
        data = {}
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def resolve_config(spec: str) -> ExperimentConfig:
    """A config path, or the name of a built-in experiment."""
    if spec in BUILTIN and not Path(spec).exists():
        return BUILTIN[spec]
    if not Path(spec).exists():
        raise ConfigError(f"no such config file or built-in experiment: {spec}")
    return load_config(spec)


# --------------------------------------------------------------------------
# data

def polar_normals(rng: np.random.Generator, count: int) -> np.ndarray:
    """Standard normal variates by Marsaglia's polar method.

    Uniform pairs come from ``rng.random()`` (PCG64 doubles, stable across
    platforms); accepted pairs are used in draw order, both variates kept.
    """
    out = np.empty(count)
    filled = 0
    while filled < count:
        need = count - filled
        uv = 2.0 * rng.random((max(8, need), 2)) - 1.0
        s = (uv * uv).sum(axis=1)
        ok = (s > 0.0) & (s < 1.0)
        uv, s = uv[ok], s[ok]
        z = uv * np.sqrt(-2.0 * np.log(s) / s)[:, None]
        z = z.ravel()[:need]
        out[filled:filled + z.size] = z
        filled += z.size
    return out


def generate_gaussian_data(seed: int, mu, sigmas, count_per_sensor: int,
                           tolerance: float = 0.5) -> list[HuberSpec]:
    """Sensor ``i`` draws ``count_per_sensor`` vectors from N(mu, sigmas[i] * I).

    ``sigmas`` are covariance scales (variances). Sensors draw in order from
    one PCG64 stream seeded with ``seed``.
    """
    mu = np.asarray(mu, dtype=float)
    if count_per_sensor <= 0:
        raise ValueError("count_per_sensor must be positive")
    if any(not c > 0 for c in sigmas):
        raise ValueError(f"covariance scales must be positive, got {list(sigmas)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    specs = []
    for c in sigmas:
        z = polar_normals(rng, count_per_sensor * mu.size).reshape(count_per_sensor, mu.size)
        specs.append(HuberSpec(tolerance, mu + math.sqrt(c) * z))
    return specs


# --------------------------------------------------------------------------

def build_graph(cfg: ExperimentConfig) -> Digraph:
    name = cfg.graph
    if name == "fig1":
        return fig1_digraph()
    if name.startswith("cycle") and name[5:].isdigit():
        return cycle_digraph(int(name[5:]))
    path = Path(name)
    if not path.is_absolute() and cfg.base_dir:
        path = Path(cfg.base_dir) / path
    if not path.exists():
        raise ConfigError(f"graph edge list not found: {path}")
    return load_edge_list(path)


def build_costs(cfg: ExperimentConfig, n_agents: int):
    """Local costs and, for the Huber experiment, the generated datasets."""
    datasets = None
    if cfg.costs == "example1":
        costs = example1_costs()
    elif cfg.costs == "example2":
        h = cfg.huber
        scales = [h.cov_scale * (i + 1) for i in range(n_agents)]
        datasets = generate_gaussian_data(cfg.seed, h.mu, scales, h.count, h.tolerance)
        costs = [huber_cost(spec, name=f"huber{i + 1}") for i, spec in enumerate(datasets)]
    else:
        costs = [quadratic_cost(q["center"], q.get("scale", 1.0), name=f"q{i + 1}")
                 for i, q in enumerate(cfg.quadratics)]
    if len(costs) != n_agents:
        raise ConfigError(f"cost set {cfg.costs!r} has {len(costs)} agents, graph has {n_agents}")
    if cfg.n is not None and costs[0].dimension != cfg.n:
        raise ConfigError(f"cost dimension {costs[0].dimension} != configured n={cfg.n}")
    return costs, datasets


def oracle_minimizer(cfg: ExperimentConfig, costs, datasets=None) -> np.ndarray:
    f = global_cost(costs)
    if cfg.costs == "example2":
        all_data = np.vstack([d.data for d in datasets])
        starts = [all_data.mean(axis=0), np.median(all_data, axis=0)]
        return centralized_minimizer(f, tol=1e-9, starts=starts).x
    starts = grid_starts(-10.0, 10.0, 5 if f.dimension <= 2 else 3, f.dimension)
    return centralized_minimizer(f, tol=1e-10, starts=starts).x


def initial_conditions(cfg: ExperimentConfig, N: int, n: int):
    rng = np.random.Generator(np.random.PCG64([cfg.seed, 0]))
    lo, hi = cfg.init_range
    x0 = rng.uniform(lo, hi, (N, n)) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    v0 = rng.uniform(lo, hi, (N, n)) if cfg.v0 is None else np.asarray(cfg.v0, dtype=float)
    if x0.shape != (N, n) or v0.shape != (N, n):
        raise ConfigError(f"x0/v0 must have shape {(N, n)}")
    sigma0 = np.broadcast_to(np.asarray(cfg.sigma0, dtype=float), (N,)).copy()
    return x0, v0, sigma0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    graph: Digraph
    certificate: SpectralCertificate
    costs: list
    s_star: np.ndarray
    trajectory: Trajectory
    report: ConvergenceReport
    datasets: list | None = None
    estimation: dict | None = None


def prepare(cfg: ExperimentConfig):
    """Graph (checked strongly connected), certificate, costs, data and oracle."""
    g = build_graph(cfg)
    cert = certify(g)
    costs, datasets = build_costs(cfg, g.n_agents)
    s_star = oracle_minimizer(cfg, costs, datasets)
    return g, cert, costs, datasets, s_star


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    g, cert, costs, datasets, s_star = prepare(cfg)
    N, n = g.n_agents, costs[0].dimension
    x0, v0, sigma0 = initial_conditions(cfg, N, n)
    state0 = initial_state(x0, v0, sigma0)
    field_ = NetworkField(g, costs)
    observer = MetricsObserver(g, costs, cert.xi, s_star=s_star)
    traj = integrate(state0, field_, cfg.integrator(), observers=[observer])
    report = convergence_report(traj, s_star, cert.xi, costs, g)
    estimation = None
    if cfg.costs == "example2":
        estimation = estimation_summary(traj, cfg.huber.mu, s_star)
    return ExperimentResult(cfg, g, cert, costs, s_star, traj, report, datasets, estimation)


def estimation_summary(traj: Trajectory, mu, s_star, threshold: float = 0.02) -> dict:
    mu = np.asarray(mu, dtype=float)
    err = np.abs(traj.x - mu[None, None, :])          # (R, N, n)
    worst = err.reshape(len(traj), -1).max(axis=1)
    below = np.flatnonzero(worst < threshold)
    final = err[-1]
    return {
        "threshold": threshold,
        "first_time_all_below": float(traj.times[below[0]]) if below.size else None,
        "final_abs_error_to_mu": final.tolist(),
        "final_max_abs_error_to_mu": float(final.max()),
        "final_max_componentwise_distance_to_oracle": float(
            np.abs(traj.x[-1] - np.asarray(s_star)[None, :]).max()),
        "oracle_error_to_mu": (np.asarray(s_star) - mu).tolist(),
    }


def run_example1(**overrides) -> ExperimentResult:
    return run_experiment(EXAMPLE1.with_overrides(**overrides))


def run_example2(**overrides) -> ExperimentResult:
    return run_experiment(EXAMPLE2.with_overrides(**overrides))


# --------------------------------------------------------------------------
# outputs

CSV_METRICS = ("consensus_error", "optimality_residual", "w_error")


def trajectory_header(N: int, n: int) -> list[str]:
    cols = ["t"]
    cols += [f"x_{i}_{k}" for i in range(1, N + 1) for k in range(1, n + 1)]
    cols += [f"v_{i}_{k}" for i in range(1, N + 1) for k in range(1, n + 1)]
    cols += [f"sigma_{i}" for i in range(1, N + 1)]
    cols += list(CSV_METRICS)
    return cols


def _fmt(v: float) -> str:
    return repr(float(v))


def trajectory_csv(traj: Trajectory) -> str:
    R, N, n = traj.x.shape
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_header(N, n))
    for k in range(R):
        row = [traj.times[k], *traj.x[k].ravel(), *traj.v[k].ravel(), *traj.sigma[k]]
        row += [traj.metrics[m][k] for m in CSV_METRICS]
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_trajectory_csv(path):
    """Parse ``trajectory.csv`` into ``(times, x, v, sigma, metrics)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if header[0] != "t" or tuple(header[-3:]) != CSV_METRICS:
        raise ConfigError(f"{path}: not a trajectory file")
    N = sum(1 for h in header if h.startswith("sigma_"))
    n = sum(1 for h in header if h.startswith("x_")) // N
    a = 1 + N * n
    x = body[:, 1:a].reshape(-1, N, n)
    v = body[:, a:a + N * n].reshape(-1, N, n)
    sigma = body[:, a + N * n:a + N * n + N]
    metrics = {m: body[:, -3 + j] for j, m in enumerate(CSV_METRICS)}
    return body[:, 0], x, v, sigma, metrics


def report_document(res: ExperimentResult) -> dict:
    cfg = res.config
    traj = res.trajectory
    doc = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "graph": {"n_agents": res.graph.n_agents, "edges": res.graph.edges()},
        "oracle": {
            "s_star": np.asarray(res.s_star).tolist(),
            "certificate": res.certificate.as_dict(),
        },
        "initial": {
            "x0": traj.x[0].tolist(),
            "v0": traj.v[0].tolist(),
            "sigma0": traj.sigma[0].tolist(),
        },
        "integrator": traj.meta,
        "faults": traj.faults,
        "report": res.report.to_dict(with_series=True),
    }
    if res.estimation is not None:
        doc["estimation"] = res.estimation
    return doc


def dataset_csv(datasets) -> str:
    n = datasets[0].data.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sensor", "index"] + [f"q_{k}" for k in range(1, n + 1)])
    for i, spec in enumerate(datasets, start=1):
        for j, row in enumerate(spec.data, start=1):
            w.writerow([i, j] + [_fmt(v) for v in row])
    return buf.getvalue()


def write_outputs(res: ExperimentResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trajectory": out / "trajectory.csv", "report": out / "report.json"}
    paths["trajectory"].write_text(trajectory_csv(res.trajectory))
    paths["report"].write_text(json.dumps(report_document(res), indent=2, sort_keys=True) + "\n")
    if res.datasets is not None:
        paths["dataset"] = out / "dataset.csv"
        paths["dataset"].write_text(dataset_csv(res.datasets))
    return paths


def output_dir_for(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.output_dir:
        p = Path(cfg.output_dir)
        if not p.is_absolute() and cfg.base_dir:
            p = Path(cfg.base_dir) / p
        return p
    return Path("runs") / cfg.name


def exact_w_error(lap: np.ndarray, xi, times) -> np.ndarray:
    """``max_i ||w_i(t) - xi||`` from the closed form ``w(t) = exp(-L t)``."""
    from scipy.linalg import expm

    xi = np.asarray(xi)
    return np.array([float(np.sqrt(((expm(-lap * t) - xi[None, :]) ** 2).sum(axis=1)).max())
                     for t in times])


__all__ = [
    "ConfigError", "ExperimentConfig", "HuberDataConfig", "EXAMPLE1", "EXAMPLE2",
    "load_config", "resolve_config", "generate_gaussian_data", "polar_normals",
    "run_experiment", "run_example1", "run_example2", "write_outputs",
    "read_trajectory_csv", "trajectory_header", "exact_w_error",
]
