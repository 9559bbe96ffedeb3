"""Simulation sweeps, rolling forecasts and result serialization."""
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields
import io
import json
import logging
from pathlib import Path
import time

import numpy as np

from .. import __version__, kernels
from ..baselines import (DEFAULT_C, SPARSE_GRID, BaselineSpec, initial_var, ols_var, pool_var,
                         select_sparse_lambda, sparse_var_lasso, tl_var)
from ..estimator import TaskStats
from ..exceptions import ConfigError, DataError, TLVARError
from ..selection import (DEFAULT_C_GRID, fit_mlr_var, initialize_all,
                         select_c_by_validation, select_ranks_ridge_ratio)
from ..var import Panel, SimDesign, generate_design, simulate
from .data import TransformCode, load_codes, load_csv, preprocess
from .metrics import mafe, rmse_tensor, rmsfe

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "MetricsRow",
    "ForecastResult",
    "replication_seed",
    "run_replication",
    "run_sim1",
    "run_sim2",
    "run_sim3",
    "run_simulation",
    "rolling_forecast",
    "load_forecast_data",
    "run_forecast",
    "run_fit",
    "run_select",
    "write_results",
    "summarize",
]

SIM1_SETTINGS = ((5, 10, 3, 3), (10, 10, 3, 3), (10, 20, 3, 3), (10, 20, 5, 5))
H_GRID = tuple(0.25 * i for i in range(9))
T0_GRID = (50, 100, 150, 200, 250, 300)
K_GRID = (5, 10, 50)
SIM_METHODS = ("tl", "pool", "mlr", "ols")
KINDS = ("sim1", "sim2", "sim3", "forecast", "fit", "select")
SETTING_COLUMNS = ("K", "N", "s1", "s2", "s3", "p", "h", "T0")


@dataclass
class ExperimentConfig:
    """Declarative description of one run.

    Simulation fields: ``settings`` as (K, N, s1, s2) tuples, ``p_values``,
    ``h_grid``, ``T0_grid``, ``K_grid``.  Data fields: ``target`` and
    ``sources`` CSV paths plus optional ``codes`` (a path or a list).
    """

    experiment: str
    settings: list = None
    p_values: list = None
    h_grid: list = None
    T0_grid: list = None
    K_grid: list = None
    h: float = 0.5
    T0: int = 100
    T_src: int = 300
    methods: list = None
    replications: int = 50
    seed: int = 0
    c_S: float = DEFAULT_C
    c_T: float = None
    mlr_ranks: list = None
    s_ranks: list = None
    p: int = 4
    test_len: int = 20
    holdout_len: int = 20
    c_grid: list = None
    sparse_grid: list = None
    rank_rule: str = "threshold"
    tau: float = 0.75
    target: str = None
    sources: list = None
    codes: object = None
    out: str = "runs/out"
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in KINDS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {KINDS}")
        sim = self.experiment.startswith("sim")
        if self.experiment == "sim1":
            self.settings = self.settings or [list(s) for s in SIM1_SETTINGS]
            self.h_grid = self.h_grid if self.h_grid is not None else list(H_GRID)
            self.T0_grid = self.T0_grid or [self.T0]
        elif self.experiment == "sim2":
            self.settings = self.settings or [list(s) for s in SIM1_SETTINGS]
            self.h_grid = self.h_grid if self.h_grid is not None else [self.h]
            self.T0_grid = self.T0_grid or list(T0_GRID)
        elif self.experiment == "sim3":
            self.settings = self.settings or [[K, 20, 5, 5] for K in (self.K_grid or K_GRID)]
            self.h_grid = self.h_grid if self.h_grid is not None else [0.0, 0.25, 0.5, 0.75, 1.0]
            self.T0_grid = self.T0_grid or [self.T0]
            self.methods = self.methods or ["tl"]
        if sim:
            self.p_values = self.p_values or ([1, 4] if self.experiment != "sim3" else [1])
            self.methods = self.methods or list(SIM_METHODS)
            for grid in ("settings", "h_grid", "T0_grid", "p_values", "methods"):
                if not getattr(self, grid):
                    raise ConfigError(f"{grid} must be nonempty")
            for s in self.settings:
                if len(s) != 4:
                    raise ConfigError(f"settings entries are (K, N, s1, s2), got {s}")
        else:
            self.methods = self.methods or ["tl", "pool", "initial", "ols", "mlr", "sparse"]
            if self.experiment != "select" and not self.target:
                raise ConfigError("a target CSV is required")
            paths = ([self.target] if self.target else []) + list(self.sources or [])
            for path in paths:
                if not Path(path).is_file():
                    raise ConfigError(f"file not found: {path}")
            if isinstance(self.codes, str) and not Path(self.codes).is_file():
                raise ConfigError(f"file not found: {self.codes}")
            transfer = any(m in ("tl", "pool", "initial") for m in self.methods)
            if (self.experiment == "select" or transfer) and not self.sources:
                raise ConfigError("transfer methods need source CSVs")
        for m in self.methods:
            try:
                BaselineSpec(m)
            except TLVARError as exc:
                raise ConfigError(str(exc)) from None
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.c_grid is not None and not self.c_grid:
            raise ConfigError("c_grid must be nonempty")
        if self.sparse_grid is not None and not self.sparse_grid:
            raise ConfigError("sparse_grid must be nonempty")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "experiment" not in data:
            raise ConfigError("config must name an experiment")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MetricsRow:
    """One metric value of one method in one replication and setting."""

    experiment: str
    method: str
    replication: int
    metric: str
    value: float
    seed: int = -1
    K: int = 0
    N: int = 0
    s1: int = 0
    s2: int = 0
    s3: int = 0
    p: int = 0
    h: float = 0.0
    T0: int = 0
    seconds: float = field(default=0.0, compare=False)

    def sort_key(self):
        return (self.experiment, self.K, self.N, self.s1, self.s2, self.s3, self.p, self.h,
                self.T0, self.method, self.replication, self.metric)


def replication_seed(seed, K, N, s1, s2, s3, p, rep):
    """32-bit seed for one replication.

    It does not depend on ``h`` or ``T0``, so sweeps over those reuse the
    same draws (common random numbers).
    """
    ss = np.random.SeedSequence([int(seed), K, N, s1, s2, s3, p, int(rep)])
    return int(ss.generate_state(1)[0])


def _mlr_default(p):
    return (2, 2, 2) if p > 1 else (2, 2, 1)


def run_replication(task):
    """Fit every requested method on one simulated replication.

    ``task`` is a dict with keys experiment, K, N, s1, s2, p, h, T0, T_src, rep,
    seed, methods, c_S, c_T, mlr_ranks.  Returns ``(rows, failures)``.
    """
    K, N, s1, s2, p = (task[k] for k in ("K", "N", "s1", "s2", "p"))
    design_seed = replication_seed(task["seed"], K, N, s1, s2, 1 if p == 1 else 3, p,
                                   task["rep"])
    design = SimDesign(K=K, N=N, p=p, s1=s1, s2=s2, h=task["h"], T0=task["T0"],
                       T_src=task["T_src"], seed=design_seed)
    target, sources, _ = generate_design(design)
    st0 = TaskStats.from_panel(simulate(target, design.T0, seed=[design_seed, 1, 0]))
    stats = [TaskStats.from_panel(simulate(s, design.T_src, seed=[design_seed, 1, k + 1]))
             for k, s in enumerate(sources)]
    base = dict(experiment=task["experiment"], seed=design_seed, K=K, N=N, s1=s1, s2=s2,
                s3=design.s3, p=p, h=float(task["h"]), T0=design.T0)
    rows, failures = [], []
    init = None
    for method in task["methods"]:
        t = time.perf_counter()
        try:
            if method in ("tl", "pool", "initial") and init is None:
                init = initialize_all(stats, s_ranks=design.ranks)
            if method == "tl":
                A = tl_var(stats, st0, c_S=task["c_S"], c_T=task["c_T"], init=init).A0
            elif method == "pool":
                A = pool_var(stats, st0, init=init).A0
            elif method == "initial":
                A = initial_var(stats, st0, c_T=task["c_T"] or task["c_S"], init=init).A0
            elif method == "mlr":
                A = fit_mlr_var(st0, tuple(task["mlr_ranks"] or _mlr_default(p)))
            elif method == "ols":
                A = ols_var(st0)
            else:
                A = sparse_var_lasso(st0, lam=task.get("sparse_lam", 0.1))
        except TLVARError as exc:
            failures.append({**base, "method": method, "replication": task["rep"],
                             "error": f"{type(exc).__name__}: {exc}"})
            continue
        rows.append(MetricsRow(method=method, replication=task["rep"], metric="rmse",
                               value=rmse_tensor(A, target.A),
                               seconds=time.perf_counter() - t, **base))
    return rows, failures


def _sim_tasks(cfg):
    tasks = []
    for K, N, s1, s2 in cfg.settings:
        for p in cfg.p_values:
            for h in cfg.h_grid:
                for T0 in cfg.T0_grid:
                    for rep in range(cfg.replications):
                        tasks.append(dict(experiment=cfg.experiment, K=K, N=N, s1=s1, s2=s2,
                                          p=p, h=float(h), T0=int(T0), T_src=cfg.T_src,
                                          rep=rep, seed=cfg.seed, methods=list(cfg.methods),
                                          c_S=cfg.c_S, c_T=cfg.c_T, mlr_ranks=cfg.mlr_ranks))
    return tasks


def run_simulation(cfg):
    """Run a simulation sweep; returns ``(rows, failures)`` in canonical order."""
    tasks = _sim_tasks(cfg)
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run_replication, tasks, chunksize=4))
    else:
        results = [run_replication(t) for t in tasks]
    rows = [r for res in results for r in res[0]]
    failures = [f for res in results for f in res[1]]
    rows.sort(key=MetricsRow.sort_key)
    return rows, failures


def _with_kind(cfg, kind):
    if cfg.experiment != kind:
        raise ConfigError(f"expected a {kind} config, got {cfg.experiment}")
    return run_simulation(cfg)


def run_sim1(cfg):
    """RMSE over a grid of similarity levels ``h``."""
    return _with_kind(cfg, "sim1")


def run_sim2(cfg):
    """RMSE over a grid of target sample sizes ``T0``."""
    return _with_kind(cfg, "sim2")


def run_sim3(cfg):
    """Transfer RMSE over the number of sources ``K`` and ``h``."""
    return _with_kind(cfg, "sim3")


def summarize(rows):
    """Mean metric per (setting, method, metric), as a list of dicts in canonical order."""
    groups = {}
    for r in rows:
        key = (r.experiment,) + tuple(getattr(r, c) for c in SETTING_COLUMNS) + (r.method,
                                                                                 r.metric)
        groups.setdefault(key, []).append(r.value)
    out = []
    for key in sorted(groups):
        vals = groups[key]
        d = dict(zip(("experiment",) + SETTING_COLUMNS + ("method", "metric"), key))
        d.update(mean=float(np.mean(vals)), n=len(vals))
        out.append(d)
    return out


# ---------------------------------------------------------------------------
# rolling forecasts


@dataclass
class ForecastResult:
    """One-step errors of one method; ``errors[i]`` is None when origin i failed."""

    method: str
    origins: list
    errors: list
    failures: list

    def error_matrix(self):
        ok = [e for e in self.errors if e is not None]
        return np.vstack(ok) if ok else np.empty((0, 0))

    def metrics(self):
        E = self.error_matrix()
        out = {"failures": float(len(self.failures))}
        if E.size:
            out.update(rmsfe=rmsfe(E), mafe=mafe(E))
        return out


def _forecast(A, data, t, p):
    # y_hat_t = sum_j A_j y_{t-j}
    return sum(A[:, :, j] @ data[:, t - 1 - j] for j in range(p))


def rolling_forecast(data, spec, test_len, p=4, sources=None, refit_policy="expanding",
                     model=None, s_ranks=None, c_S=DEFAULT_C, c_T=None, holdout_len=20,
                     init_kwargs=None):
    """One-step rolling forecasts over the last ``test_len`` observations.

    Each origin t is fitted on observations ``0 .. t-1`` (fixed start).  The
    transfer methods learn their representations once, from the sources cut
    to the first training window, and re-estimate only the target stage per
    origin.  With ``refit_policy="none"`` a single model (``model`` if given,
    else one fit on the first window) is applied at every origin.
    """
    if not isinstance(spec, BaselineSpec):
        spec = BaselineSpec(spec)
    if refit_policy not in ("expanding", "none"):
        raise ConfigError(f"unknown refit policy {refit_policy!r}")
    Y = data.Y
    n = Y.shape[1]
    if test_len < 1 or test_len >= n - p:
        raise DataError(f"test length {test_len} does not fit a series of length {n}")
    first = n - test_len
    params = dict(spec.params)
    s_ranks = params.get("ranks", s_ranks)
    shared = {}
    if spec.transfer:
        if not sources:
            raise ConfigError(f"{spec.kind} needs source series")
        cut = [Panel(s.Y[:, :s.Y.shape[1] - test_len], s.task_id, p) for s in sources]
        stats = [TaskStats.from_panel(s) for s in cut]
        init = initialize_all(stats, s_ranks=s_ranks, **(init_kwargs or {}))
        shared["init"] = init
        cS = params.get("c_S", c_S)
        cT = params.get("c_T", c_T)
        if spec.kind == "tl":
            shared["stage1"] = tl_var(stats, stats[0], c_S=cS, c_T=cT, init=init).stage1
        elif spec.kind == "pool":
            shared["stage1"] = pool_var(stats, stats[0], init=init).stage1
    if spec.kind == "sparse" and "lam" not in params:
        train = Panel(Y[:, :first], data.task_id, p)
        params["lam"] = select_sparse_lambda(train, p, params.get("grid", SPARSE_GRID),
                                             holdout_len)
    if spec.kind == "mlr" and "ranks" not in params:
        params["ranks"] = select_ranks_ridge_ratio(Panel(Y[:, :first], data.task_id, p))

    def fit(t):
        train = Panel(Y[:, :t], data.task_id, p)
        st = TaskStats.from_panel(train)
        if spec.kind == "ols":
            return ols_var(st)
        if spec.kind == "mlr":
            return fit_mlr_var(st, params["ranks"])
        if spec.kind == "sparse":
            return sparse_var_lasso(st, lam=params["lam"])
        if spec.kind == "tl":
            return tl_var(stats, st, c_S=cS, c_T=cT, stage1=shared["stage1"]).A0
        if spec.kind == "pool":
            return pool_var(stats, st, stage1=shared["stage1"]).A0
        return initial_var(stats, st, c_T=cT if cT is not None else cS, init=shared["init"]).A0

    errors, failures = [], []
    fixed = model
    for t in range(first, n):
        try:
            if refit_policy == "none":
                if fixed is None:
                    fixed = fit(first)
                A = fixed
            else:
                A = fit(t)
            errors.append(Y[:, t] - _forecast(np.asarray(A), Y, t, p))
        except TLVARError as exc:
            errors.append(None)
            failures.append((t, f"{type(exc).__name__}: {exc}"))
    return ForecastResult(spec.kind, list(range(first, n)), errors, failures)


def _codes_for(panel, codes):
    if codes is None:
        return None
    if isinstance(codes, str):
        table = load_codes(codes)
        try:
            return [table[v] for v in panel.variables]
        except KeyError as exc:
            raise DataError(f"no transform code for variable {exc.args[0]!r}") from None
    return list(codes)


def load_forecast_data(cfg):
    """Read and preprocess the target and source CSVs of a data config."""
    def prep(path):
        raw = load_csv(path)
        codes = _codes_for(raw, cfg.codes)
        panel = raw if codes is None else preprocess(raw, TransformCode(tuple(codes)))[0]
        return Panel(panel.Y, Path(path).stem, 0, panel.variables)

    target = prep(cfg.target) if cfg.target else None
    sources = [prep(s) for s in (cfg.sources or [])]
    N = {p.N for p in ([target] if target else []) + sources}
    if len(N) > 1:
        raise DataError(f"series have different numbers of variables: {sorted(N)}")
    return target, sources


def run_forecast(cfg):
    """Rolling forecasts of every configured method; returns ``(rows, failures)``."""
    target, sources = load_forecast_data(cfg)
    rows, failures = [], []
    for method in cfg.methods:
        params = {}
        if method == "sparse" and cfg.sparse_grid:
            params["grid"] = tuple(cfg.sparse_grid)
        if method == "mlr" and cfg.mlr_ranks:
            params["ranks"] = tuple(cfg.mlr_ranks)
        t = time.perf_counter()
        try:
            res = rolling_forecast(target, BaselineSpec(method, params), cfg.test_len, cfg.p,
                                   sources, s_ranks=cfg.s_ranks, c_S=cfg.c_S, c_T=cfg.c_T,
                                   holdout_len=cfg.holdout_len,
                                   init_kwargs=dict(rank_rule=cfg.rank_rule, tau=cfg.tau))
        except TLVARError as exc:
            if isinstance(exc, (DataError, ConfigError)):
                raise
            failures.append({"method": method, "error": f"{type(exc).__name__}: {exc}"})
            continue
        secs = time.perf_counter() - t
        for origin, msg in res.failures:
            failures.append({"method": method, "origin": origin, "error": msg})
        for metric, value in sorted(res.metrics().items()):
            rows.append(MetricsRow("forecast", method, 0, metric, value, seed=cfg.seed,
                                   N=target.N, p=cfg.p, T0=target.T, K=len(sources),
                                   seconds=secs))
    rows.sort(key=MetricsRow.sort_key)
    return rows, failures


def run_fit(cfg):
    """Fit every configured method on the full target series.

    Returns ``(tensors, failures)`` with ``tensors`` mapping method to its
    (N, N, p) estimate.
    """
    target, sources = load_forecast_data(cfg)
    st0 = TaskStats.from_panel(target.with_order(cfg.p))
    stats = [TaskStats.from_panel(s.with_order(cfg.p)) for s in sources]
    init_kwargs = dict(rank_rule=cfg.rank_rule, tau=cfg.tau)
    s_ranks = tuple(cfg.s_ranks) if cfg.s_ranks else None
    init = None
    out, failures = {}, []
    for method in cfg.methods:
        try:
            if method in ("tl", "pool", "initial") and init is None:
                init = initialize_all(stats, s_ranks=s_ranks, **init_kwargs)
            if method == "tl":
                out[method] = tl_var(stats, st0, c_S=cfg.c_S, c_T=cfg.c_T, init=init).A0
            elif method == "pool":
                out[method] = pool_var(stats, st0, init=init).A0
            elif method == "initial":
                cT = cfg.c_T if cfg.c_T is not None else cfg.c_S
                out[method] = initial_var(stats, st0, c_T=cT, init=init).A0
            elif method == "ols":
                out[method] = ols_var(st0)
            elif method == "mlr":
                ranks = tuple(cfg.mlr_ranks) if cfg.mlr_ranks else select_ranks_ridge_ratio(st0)
                out[method] = fit_mlr_var(st0, ranks)
            else:
                panel = target.with_order(cfg.p)
                lam = select_sparse_lambda(panel, cfg.p, tuple(cfg.sparse_grid or SPARSE_GRID),
                                           cfg.holdout_len)
                out[method] = sparse_var_lasso(st0, lam=lam)
        except (DataError, ConfigError):
            raise
        except TLVARError as exc:
            failures.append({"method": method, "error": f"{type(exc).__name__}: {exc}"})
    return out, failures


def run_select(cfg):
    """Validation search for ``c_S`` on the sources; returns ``(best, table)``."""
    _, sources = load_forecast_data(cfg)
    if not sources:
        raise ConfigError("selection needs source CSVs")
    panels = [s.with_order(cfg.p) for s in sources]
    return select_c_by_validation(panels, cfg.p, tuple(cfg.c_grid or DEFAULT_C_GRID),
                                  cfg.holdout_len, s_ranks=cfg.s_ranks,
                                  init_kwargs=dict(rank_rule=cfg.rank_rule, tau=cfg.tau))


# ---------------------------------------------------------------------------
# output

RESULT_COLUMNS = ("experiment",) + SETTING_COLUMNS + ("method", "replication", "seed",
                                                      "metric", "value")


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def rows_to_csv(rows, timings=False):
    cols = RESULT_COLUMNS + (("seconds",) if timings else ())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in cols])
    return buf.getvalue()


def _dicts_to_csv(items, cols):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for d in items:
        w.writerow({k: _fmt(v) for k, v in d.items()})
    return buf.getvalue()


def write_results(out_dir, cfg, rows, failures, elapsed=None, extra=None):
    """Write results.csv, summary.csv, timings.csv and manifest.json.

    results.csv and summary.csv hold no timings, so identical runs give
    byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    (out / "timings.csv").write_text(rows_to_csv(rows, timings=True), encoding="utf-8")
    summary = summarize(rows)
    cols = ("experiment",) + SETTING_COLUMNS + ("method", "metric", "mean", "n")
    (out / "summary.csv").write_text(_dicts_to_csv(summary, cols), encoding="utf-8")
    manifest = {
        "config": cfg.to_dict(),
        "version": __version__,
        "backend": kernels.BACKEND,
        "numpy": np.__version__,
        "rows": len(rows),
        "failures": failures,
        "elapsed_seconds": elapsed,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                                  default=str) + "\n", encoding="utf-8")
    return out
