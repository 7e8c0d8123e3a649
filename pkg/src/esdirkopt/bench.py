"""Benchmark harness: single solves, the N-sweep, and the low-tolerance
experiment, with CSV/JSON statistics emission.

Every run is configured by a flat RunConfig (seed-free, deterministic) and
produces one RunStats row. The sweep solves every (method, sens, N)
combination; non-converged runs are recorded as rows, never raised.
"""

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .integrator import NewtonSettings, NewtonStrategy
from .nlp import DecisionVector, OcpProblem
from .sensitivity import SensitivityMode
from .sqp import SqpSettings, solve_ocp
from .tableau import make_tableau

METHODS = ("esdirk12", "esdirk23", "esdirk34")
SENS_MODES = ("iterated", "direct", "base")
SWEEP_N = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50)

#: deterministic report column order
COLUMNS = ("method", "sens", "N", "converged", "sqp_iters", "qp_iters",
           "kkt", "f_evals", "jac_x_evals", "jac_u_evals",
           "lu_factorizations", "wall_time")


@dataclass
class SetpointSwitch:
    """Piecewise-constant setpoints switching at half the horizon."""
    first: np.ndarray
    second: np.ndarray

    def __call__(self, t, horizon):
        return self.first if t < horizon / 2.0 else self.second


@dataclass
class RunConfig:
    """One benchmark run: solver selection plus the experiment constants."""
    method: str = "esdirk12"
    sens: str = "iterated"
    N: int = 10
    Ts: float = 10.0
    Nc: int = 40
    qz: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0]))
    qdu: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1]))
    u_min: np.ndarray = field(default_factory=lambda: np.zeros(2))
    u_max: np.ndarray = field(default_factory=lambda: np.full(2, 500.0))
    x0: np.ndarray = field(default_factory=lambda: np.array(
        [7602.7, 11404.0, 1000.0, 1000.0]))
    d: np.ndarray = field(default_factory=lambda: np.array(
        [0.0, 0.0, 100.0, 100.0]))
    setpoint_first: np.ndarray = field(
        default_factory=lambda: np.array([20.0, 30.0]))
    setpoint_second: np.ndarray = field(
        default_factory=lambda: np.array([30.0, 20.0]))
    u_prev: np.ndarray = field(default_factory=lambda: np.full(2, 300.0))
    init_value: float = 300.0
    tol_sqp: float = 1e-3
    tol_qp: float = 1e-8
    tol_step: float = 1e-8
    abs: float = 1e-8
    rel: float = 1e-8
    tau: float = 0.1
    max_sqp_iter: int = 200

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"method: {self.method!r} is not one of "
                              f"{'/'.join(METHODS)}")
        if self.sens not in SENS_MODES:
            raise ConfigError(f"sens: {self.sens!r} is not one of "
                              f"{'/'.join(SENS_MODES)}")
        if self.N < 1:
            raise ConfigError(f"N: must be >= 1, got {self.N}")
        if self.Ts <= 0:
            raise ConfigError(f"Ts: must be positive, got {self.Ts}")
        if self.Nc < 1:
            raise ConfigError(f"Nc: must be >= 1, got {self.Nc}")
        for name in ("tol_sqp", "tol_qp", "tol_step", "abs", "rel", "tau"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be positive")
        if np.any(self.u_min > self.u_max):
            raise ConfigError("u_min: exceeds u_max")
        return self

    @property
    def strategy(self):
        """The base case refactorizes every iteration; the rest reuse."""
        if self.sens == "base":
            return NewtonStrategy.REFACTORIZE_EVERY_ITERATION
        return NewtonStrategy.REUSE_PER_STEP

    @property
    def mode(self):
        return {"iterated": SensitivityMode.ITERATED,
                "direct": SensitivityMode.DIRECT,
                "base": SensitivityMode.BASE_DIRECT}[self.sens]


@dataclass
class RunStats:
    """One result row of the benchmark tables."""
    method: str
    sens: str
    N: int
    converged: bool
    sqp_iters: int
    qp_iters: int
    kkt: float
    f_evals: int
    jac_x_evals: int
    jac_u_evals: int
    lu_factorizations: int
    wall_time: float

    def as_dict(self, include_walltime=True):
        out = {k: getattr(self, k) for k in COLUMNS}
        if not include_walltime:
            del out["wall_time"]
        return out


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17e")
    return str(value)


def make_problem(config):
    """Build the OcpProblem for a validated RunConfig."""
    config.validate()
    return OcpProblem(
        model=_make_model(config),
        x0=np.asarray(config.x0, float),
        Ts=config.Ts, Nc=config.Nc, N=config.N,
        Qz=np.diag(np.asarray(config.qz, float)),
        Qdu=np.diag(np.asarray(config.qdu, float)),
        u_min=np.asarray(config.u_min, float),
        u_max=np.asarray(config.u_max, float),
        setpoint=SetpointSwitch(np.asarray(config.setpoint_first, float),
                                np.asarray(config.setpoint_second, float)),
        u_prev=np.asarray(config.u_prev, float),
        d=np.asarray(config.d, float),
        tableau=make_tableau(config.method.upper()),
        strategy=config.strategy,
        mode=config.mode,
        newton=NewtonSettings(tau=config.tau, abs=config.abs,
                              rel=config.rel))


def _make_model(config):
    from .model import QuadrupleTank
    return QuadrupleTank()


def sqp_settings(config):
    return SqpSettings(tol_kkt=config.tol_sqp, tol_qp=config.tol_qp,
                       tol_step=config.tol_step,
                       max_sqp_iter=config.max_sqp_iter)


def run_single(config, out_dir=None):
    """Solve one OCP; optionally write the trajectory CSV to out_dir."""
    problem = make_problem(config)
    w0 = DecisionVector.filled(config.init_value, problem.model.n_x,
                               problem.model.n_u, config.Nc)
    t0 = time.perf_counter()
    result = solve_ocp(problem, sqp_settings(config), w0)
    wall = time.perf_counter() - t0
    stats = RunStats(
        method=config.method, sens=config.sens, N=config.N,
        converged=result.converged,
        sqp_iters=result.sqp_iterations,
        qp_iters=result.qp_iterations_total,
        kkt=result.kkt,
        f_evals=result.counters.f_evals,
        jac_x_evals=result.counters.jac_x_evals,
        jac_u_evals=result.counters.jac_u_evals,
        lu_factorizations=result.counters.lu_factorizations,
        wall_time=wall)
    if out_dir is not None:
        _write_trajectory(config, problem, result.w_star, out_dir)
    return stats


def _write_trajectory(config, problem, w, out_dir):
    """Optimal (t, z1, z2, zbar1, zbar2, u1, u2) at the shooting nodes."""
    C = problem.model.output_matrix()
    horizon = problem.horizon
    os.makedirs(out_dir, exist_ok=True)
    name = f"trajectory_{config.method}_{config.sens}_N{config.N}.csv"
    path = os.path.join(out_dir, name)
    lines = ["t,z1,z2,zbar1,zbar2,u1,u2"]
    for n in range(1, config.Nc + 1):
        t = n * problem.Ts
        z = C @ w.x(n)
        zbar = problem.setpoint(t, horizon)
        u = w.u(n - 1)
        vals = [t, z[0], z[1], zbar[0], zbar[1], u[0], u[1]]
        lines.append(",".join(_fmt(float(v)) for v in vals))
    _write_file(path, "\n".join(lines) + "\n")
    return path


def _run_point(args):
    config, out_dir = args
    return run_single(config, out_dir)


def run_sweep(base_config, n_list=SWEEP_N, out_dir=None, jobs=1,
              methods=METHODS, sens_modes=SENS_MODES, row_sink=None):
    """Solve every (method, sens, N) combination; failures become rows.

    Results are ordered by (method, sens, N) regardless of completion
    order. row_sink, when given, receives each RunStats in that order as
    soon as it is available (incremental writing).
    """
    if not n_list:
        raise ValueError("n_list must be nonempty")
    points = [replace(base_config, method=m, sens=s, N=int(n))
              for m in methods for s in sens_modes for n in n_list]
    for p in points:
        p.validate()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            stats = list(pool.map(_run_point, [(p, out_dir) for p in points]))
    else:
        stats = [run_single(p, out_dir) for p in points]
    if row_sink is not None:
        for s in stats:
            row_sink(s)
    return stats


def run_low_tol_experiment(base_config, out_dir=None, jobs=1, row_sink=None):
    """Short control interval, tight tolerances, all method/sens pairs."""
    config = replace(base_config, Ts=2.0, N=10, tol_sqp=1e-6, tol_qp=1e-10,
                     abs=1e-10, rel=1e-10)
    return run_sweep(config, n_list=(10,), out_dir=out_dir, jobs=jobs,
                     row_sink=row_sink)


def stats_to_csv(stats, include_walltime=True):
    cols = COLUMNS if include_walltime else COLUMNS[:-1]
    lines = [",".join(cols)]
    for s in stats:
        row = s.as_dict(include_walltime)
        lines.append(",".join(_fmt(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


def stats_to_json(stats, include_walltime=True):
    return json.dumps([s.as_dict(include_walltime) for s in stats],
                      indent=2) + "\n"


def stats_from_json(text):
    rows = json.loads(text)
    out = []
    for r in rows:
        r.setdefault("wall_time", 0.0)
        out.append(RunStats(**r))
    return out


def _write_file(path, content):
    try:
        with open(path, "w") as fh:
            fh.write(content)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_report(stats, out_dir, fmt="csv", include_walltime=True):
    """Write the stats table plus one per-method grouped file.

    Returns the list of written paths. An empty table is an error and
    writes nothing.
    """
    if not stats:
        raise ValueError("empty stats table")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    main = os.path.join(out_dir, f"stats.{fmt}")
    render = stats_to_csv if fmt == "csv" else stats_to_json
    _write_file(main, render(stats, include_walltime))
    paths.append(main)
    for method in sorted({s.method for s in stats}):
        group = [s for s in stats if s.method == method]
        path = os.path.join(out_dir, f"stats_{method}.{fmt}")
        _write_file(path, render(group, include_walltime))
        paths.append(path)
    return paths


def parse_config_file(path):
    """Flat key = value document; arrays in [a, b, ...] bracket syntax."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, text = line.partition("=")
        key = key.strip()
        text = text.strip()
        if not hasattr(RunConfig(), key):
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(text, path, lineno)
    return values


def _parse_value(text, path, lineno):
    if text.startswith("[") and text.endswith("]"):
        items = [t.strip() for t in text[1:-1].split(",") if t.strip()]
        try:
            return np.array([float(t) for t in items])
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad array {text!r}")
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def config_from(values):
    """RunConfig from a plain mapping, validating field names."""
    cfg = RunConfig()
    for key, value in values.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config field {key!r}")
        default = getattr(cfg, key)
        if isinstance(default, int) and not isinstance(default, bool) \
                and not isinstance(value, int):
            raise ConfigError(f"{key}: expected integer, got {value!r}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
