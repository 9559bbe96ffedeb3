"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; every criterion prints its
verdict and the measured numbers whether or not it passes.
"""
import json
import os
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from tlvar.baselines import sparse_var_lasso
from tlvar.estimator import (PenaltyConfig, StageOneState, TaskStats, closed_form_D0, ols_loss,
                             ols_loss_gradient, rl_gradients, rl_objective, stage1_fit,
                             stage2_fit)
from tlvar.exceptions import NumericalFailure
from tlvar.harness.cli import main as cli_main
from tlvar.harness.experiments import ExperimentConfig, run_forecast, run_simulation
from tlvar.selection import fit_mlr_var, ols_estimate
from tlvar.tensor import (TuckerFactors, fold, frob_norm, hosvd, matricize, mode_product,
                          orthonormalize, tucker_reconstruct)
from tlvar.var import VarProcess, lag_design, simulate

from conftest import stable_tensor
from test_baselines import _cd_lasso, _kkt

SLACK = 1e-8
REFERENCE_TL_RMSFE = 4.836


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        with capsys.disabled():
            print(f"\n[{verdict}] criterion {n}: {detail}")
        if ok is None:
            pytest.skip(detail)
        assert ok, detail
    return emit


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _monotone(trace):
    t = np.asarray(trace)
    return bool(np.all(np.diff(t) <= SLACK * np.maximum(1.0, np.abs(t[:-1]))))


def _means(rows, **where):
    out = {}
    for r in rows:
        if all(getattr(r, k) == v for k, v in where.items()):
            out.setdefault((r.method, r.h, r.T0, r.K), []).append(r.value)
    return {k: float(np.mean(v)) for k, v in out.items()}


# ---------------------------------------------------------------------------


def test_criterion_1_tensor_core(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = dict(roundtrip=0.0, commute=0.0, hosvd=0.0, norm=0.0)
    n = 250
    for _ in range(n):
        dims = tuple(int(d) for d in rng.integers(1, 7, size=3))
        t = rng.standard_normal(dims)
        for mode in (1, 2, 3):
            worst["roundtrip"] = max(worst["roundtrip"],
                                     _rel(fold(matricize(t, mode), mode, dims), t))
        M1 = rng.standard_normal((int(rng.integers(1, 5)), dims[0]))
        M2 = rng.standard_normal((int(rng.integers(1, 5)), dims[1]))
        ab = mode_product(mode_product(t, M1, 1), M2, 2)
        ba = mode_product(mode_product(t, M2, 2), M1, 1)
        worst["commute"] = max(worst["commute"], _rel(ab, ba))
        # exact multilinear rank: a generic core whose ranks are Tucker-feasible
        r = [int(rng.integers(1, d + 1)) for d in dims]
        r = [min(r[0], r[1] * r[2]), min(r[1], r[0] * r[2]), min(r[2], r[0] * r[1])]
        f = TuckerFactors(rng.standard_normal(r),
                          *(orthonormalize(rng.standard_normal((d, k))) for d, k in zip(dims, r)))
        exact = tucker_reconstruct(f)
        worst["hosvd"] = max(worst["hosvd"], _rel(tucker_reconstruct(hosvd(exact, r)), exact))
        norms = [np.linalg.norm(matricize(t, m)) for m in (1, 2, 3)]
        worst["norm"] = max(worst["norm"],
                            (max(norms) - min(norms)) / norms[0], abs(frob_norm(t) - norms[0]) / norms[0])
    secs = time.perf_counter() - t0
    ok = (worst["roundtrip"] == 0.0 and worst["commute"] <= 1e-12 and worst["hosvd"] <= 1e-8
          and worst["norm"] <= 1e-12 and secs < 10)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(1, ok, f"{n} instances, worst relative errors: {detail}; {secs:.1f}s")


def test_criterion_2_gradients(report):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst, n = 0.0, 20
    for _ in range(n):
        N, p = int(rng.integers(2, 9)), int(rng.integers(1, 4))
        K = int(rng.integers(1, 4))
        T = 3 * N * p
        A = rng.standard_normal((N, N, p))
        X, Y = rng.standard_normal((N * p, T)), rng.standard_normal((N, T))
        fd = _fd(lambda z: ols_loss(z, Y, X), A)
        worst = max(worst, _rel(ols_loss_gradient(A, Y, X), fd))

        ranks = tuple(int(rng.integers(1, d + 1)) for d in (N, N, p))
        panels = [simulate(VarProcess(stable_tensor(rng, N, p)), T, seed=int(rng.integers(2**31)))
                  for _ in range(K)]
        state = StageOneState(rng.standard_normal((N, ranks[0])), rng.standard_normal((N, ranks[1])),
                              rng.standard_normal((p, ranks[2])),
                              rng.standard_normal((K,) + ranks) * 0.3,
                              rng.standard_normal((K, N, N, p)) * 0.1)
        cfg = PenaltyConfig(weights=rng.dirichlet(np.ones(K)), a=rng.uniform(0.5, 2),
                            b=rng.uniform(0.5, 1.5))
        g = rl_gradients(state, panels, cfg)
        for name in ("U", "V", "L", "D"):
            def f(z, name=name):
                parts = {k: getattr(state, k) for k in ("U", "V", "L", "D", "R")}
                parts[name] = z
                return rl_objective(StageOneState(**parts), panels, cfg)
            worst = max(worst, _rel(g[name], _fd(f, getattr(state, name))))
    secs = time.perf_counter() - t0
    report(2, worst <= 1e-5 and secs < 30,
           f"{n} instances (N<=8, p<=3), worst relative gradient error {worst:.1e}; {secs:.1f}s")


def test_criterion_3_oracles(report):
    rng = np.random.default_rng(3)
    errs = dict(closed_form=0.0, mlr_full=0.0, kkt=0.0, cd=0.0)
    for _ in range(10):
        N, p = int(rng.integers(2, 6)), int(rng.integers(1, 3))
        panel = simulate(VarProcess(stable_tensor(rng, N, p)), 60, seed=int(rng.integers(2**31)))
        Y, X = lag_design(panel, p)
        A_ols = ols_estimate(TaskStats.from_panel(panel))
        D = closed_form_D0(Y, X, np.zeros((N, N, p)), np.eye(N), np.eye(N), np.eye(p))
        errs["closed_form"] = max(errs["closed_form"], _rel(D, A_ols))
        errs["mlr_full"] = max(errs["mlr_full"],
                               _rel(fit_mlr_var(panel, (N, N, p), tol=1e-14), A_ols))
    for _ in range(10):
        panel = simulate(VarProcess(stable_tensor(rng, 2, 1)), 50, seed=int(rng.integers(2**31)))
        st = TaskStats.from_panel(panel)
        lam = float(rng.uniform(0.01, 0.3))
        A1 = matricize(sparse_var_lasso(panel, lam=lam, tol=1e-10), 1)
        errs["kkt"] = max(errs["kkt"], _kkt(A1, st, lam))
        errs["cd"] = max(errs["cd"], float(np.abs(A1 - _cd_lasso(st.G, st.C, lam)).max()))
    ok = (errs["closed_form"] <= 1e-8 and errs["mlr_full"] <= 1e-8 and errs["kkt"] <= 1e-6
          and errs["cd"] <= 1e-5)
    report(3, ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


def test_criterion_4_monotone(report):
    rng = np.random.default_rng(4)
    bad, n = [], 50
    for i in range(n):
        K, N, p = int(rng.integers(1, 4)), int(rng.integers(3, 7)), int(rng.integers(1, 3))
        ranks = (int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, p + 1)))
        panels = [simulate(VarProcess(stable_tensor(rng, N, p)), 60, seed=int(rng.integers(2**31)))
                  for _ in range(K)]
        state = StageOneState(orthonormalize(rng.standard_normal((N, ranks[0]))),
                              orthonormalize(rng.standard_normal((N, ranks[1]))),
                              orthonormalize(rng.standard_normal((p, ranks[2]))),
                              rng.standard_normal((K,) + ranks) * 0.3, np.zeros((K, N, N, p)))
        cfg = PenaltyConfig(lambdas=float(rng.uniform(0.01, 1.0)), max_outer=200)
        try:
            s1 = stage1_fit(panels, ranks, cfg, state)
            s2 = stage2_fit(panels[0], s1.U, s1.V, s1.L, float(rng.uniform(0.0, 1.0)))
        except NumericalFailure as exc:
            bad.append((i, str(exc)))
            continue
        if not (_monotone(s1.trace) and _monotone(s2.trace)):
            bad.append((i, "trace increased"))
    report(4, not bad, f"{n - len(bad)}/{n} runs monotone for both stages (slack {SLACK:g})"
           + (f"; first failure {bad[0]}" if bad else ""))


def _sweep(**kw):
    t0 = time.perf_counter()
    rows, failures = run_simulation(ExperimentConfig.from_dict(kw))
    return rows, failures, time.perf_counter() - t0


def test_criterion_5_experiment1(report):
    h_grid = [0.25 * i for i in range(9)]
    rows, failures, secs = _sweep(experiment="sim1", settings=[[5, 10, 3, 3]], p_values=[1],
                                  h_grid=h_grid, T0=100, T_src=300, replications=50,
                                  methods=["tl", "pool", "mlr", "ols"])
    m = _means(rows)
    get = lambda meth, h: m[(meth, h, 100, 5)]  # noqa: E731
    order0 = get("tl", 0.0) < get("mlr", 0.0) < get("ols", 0.0)
    pool2 = get("tl", 2.0) <= get("pool", 2.0)
    rho = spearmanr(h_grid, [get("tl", h) for h in h_grid])[0]
    ok = order0 and pool2 and rho > 0.9 and not failures and secs < 20 * 60
    report(5, ok,
           f"h=0 TL {get('tl', 0.0):.3f} < MLR {get('mlr', 0.0):.3f} < VAR {get('ols', 0.0):.3f}"
           f" [{order0}]; h=2 TL {get('tl', 2.0):.3f} <= Pool {get('pool', 2.0):.3f} [{pool2}];"
           f" Spearman(h, TL) {rho:.3f}; {len(failures)} failures; {secs / 60:.1f} min")


def test_criterion_6_experiment2(report):
    grid = [50, 100, 200, 300]
    rows, failures, secs = _sweep(experiment="sim2", settings=[[5, 10, 3, 3]], p_values=[1],
                                  h_grid=[0.5], T0_grid=grid, T_src=300, replications=50,
                                  methods=["tl", "mlr"])
    m = _means(rows)
    tl = [m[("tl", 0.5, T0, 5)] for T0 in grid]
    decreasing = all(a > b for a, b in zip(tl, tl[1:]))
    beats = tl[0] <= m[("mlr", 0.5, 50, 5)]
    report(6, decreasing and beats and not failures,
           "TL by T0 " + ", ".join(f"{g}: {v:.3f}" for g, v in zip(grid, tl))
           + f" strictly decreasing [{decreasing}];"
           f" T0=50 TL {tl[0]:.3f} <= MLR {m[('mlr', 0.5, 50, 5)]:.3f} [{beats}];"
           f" {len(failures)} failures; {secs / 60:.1f} min")


def test_criterion_7_experiment3(report):
    hs = [0.0, 0.5, 1.0]
    rows, failures, secs = _sweep(experiment="sim3", settings=[[5, 20, 5, 5], [50, 20, 5, 5]],
                                  p_values=[1], h_grid=hs, T0=100, T_src=300, replications=30,
                                  methods=["tl"])
    m = _means(rows)
    pairs = {h: (m[("tl", h, 100, 50)], m[("tl", h, 100, 5)]) for h in hs}
    ok = all(a < b for a, b in pairs.values()) and not failures
    report(7, ok, "; ".join(f"h={h}: K=50 {a:.3f} vs K=5 {b:.3f}" for h, (a, b) in pairs.items())
           + f"; {len(failures)} failures; {secs / 60:.1f} min")


def test_criterion_8_macro_data(report):
    path = os.environ.get("TLVAR_MACRO_CONFIG")
    if not path:
        report(8, None, "macro dataset not supplied; set TLVAR_MACRO_CONFIG to a forecast"
               " config naming its CSVs")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    data.update(experiment="forecast", s_ranks=[3, 5, 2], p=4, c_S=0.5, test_len=20,
                methods=["tl", "pool", "mlr"])
    rows, _ = run_forecast(ExperimentConfig.from_dict(data))
    rmsfe = {r.method: r.value for r in rows if r.metric == "rmsfe"}
    tl = rmsfe.get("tl", np.inf)
    ok = (tl < rmsfe.get("pool", -np.inf) and tl < rmsfe.get("mlr", -np.inf)
          and abs(tl - REFERENCE_TL_RMSFE) <= 0.15 * REFERENCE_TL_RMSFE)
    report(8, ok, f"RMSFE {rmsfe}; reference TL {REFERENCE_TL_RMSFE} +-15%")


def test_criterion_8_pipeline_on_synthetic_csv(tmp_path, report):
    # the data path runs end to end with the macro settings on stand-in files
    rng = np.random.default_rng(8)
    files = []
    for k in range(4):
        y = simulate(VarProcess(stable_tensor(rng, 6, 4, 0.4)), 140, seed=k).Y
        levels = 100 * np.exp(np.cumsum(0.01 * y, axis=1))
        lines = ["t," + ",".join(f"x{i}" for i in range(6))]
        lines += [f"{t}," + ",".join(f"{v:.10g}" for v in levels[:, t])
                  for t in range(levels.shape[1])]
        (tmp_path / f"c{k}.csv").write_text("\n".join(lines) + "\n")
        files.append(str(tmp_path / f"c{k}.csv"))
    cfg = ExperimentConfig.from_dict(dict(
        experiment="forecast", target=files[0], sources=files[1:], codes=[3] * 6,
        s_ranks=[3, 5, 2], p=4, c_S=0.5, test_len=20, methods=["tl", "pool", "mlr"]))
    rows, failures = run_forecast(cfg)
    got = sorted({(r.method, r.metric) for r in rows if r.metric in ("rmsfe", "mafe")})
    ok = len(got) == 6 and not failures and all(np.isfinite(r.value) for r in rows)
    report("8 (pipeline only)", ok,
           f"macro settings ran end to end on synthetic CSVs: {len(got)} metric cells,"
           f" {len(failures)} failures; dataset orderings not asserted without the data")


def test_criterion_9_determinism(tmp_path, report):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps(dict(experiment="sim1", settings=[[3, 5, 2, 2]], p_values=[1, 4],
                                   h_grid=[0.0, 1.0], replications=3, T0=60, T_src=100,
                                   methods=["tl", "pool", "mlr", "ols"], seed=17)))
    outs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 2)):
        code = cli_main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name),
                         "--threads", str(threads)])
        outs.append((code, (tmp_path / name / "results.csv").read_bytes()))
    same = all(c == 0 for c, _ in outs) and len({b for _, b in outs}) == 1
    report(9, same, f"three runs (one with 2 workers) produced byte-identical results.csv"
           f" of {len(outs[0][1])} bytes" if same else "results.csv differed between runs")
