import numpy as np
import pytest

from tlvar.baselines import (BaselineSpec, initial_var, ols_var, pool_var, select_sparse_lambda,
                             sparse_var_lasso, tl_var)
from tlvar.estimator import (PenaltyConfig, TaskStats, full_objective, ols_loss_gradient,
                             stage2_fit)
from tlvar.exceptions import ArgumentError, ConditioningError
from tlvar.selection import initialize_all, lambda_schedule
from tlvar.tensor import matricize, orthonormalize
from tlvar.var import Panel, SimDesign, VarProcess, generate_design, lag_design, simulate

from conftest import stable_tensor


def _cd_lasso(G, C, lam, sweeps=20000, tol=1e-14):
    # independent coordinate-descent oracle, one response row at a time
    A = np.zeros_like(C)
    for i in range(C.shape[0]):
        a = A[i]
        for _ in range(sweeps):
            old = a.copy()
            for j in range(len(a)):
                r = C[i, j] - G[j] @ a + G[j, j] * a[j]
                a[j] = np.sign(r) * max(abs(r) - lam, 0.0) / G[j, j]
            if np.max(np.abs(a - old)) < tol:
                break
    return A


def _kkt(A1, st, lam):
    M = A1 @ st.G - st.C
    zero = A1 == 0
    r = np.where(zero, np.maximum(np.abs(M) - lam, 0), np.abs(M + lam * np.sign(A1)))
    return r.max()


def test_ols_var_noiseless(rng):
    A = stable_tensor(rng, 3, 2)
    X = rng.standard_normal((6, 40))
    st = TaskStats.from_arrays(matricize(A, 1) @ X, X, 2)
    np.testing.assert_allclose(ols_var(st), A, atol=1e-8)


def test_ols_var_scalar_slope(rng):
    y = simulate(VarProcess(np.full((1, 1, 1), 0.6)), 300, seed=2).Y[0]
    slope = np.sum(y[1:] * y[:-1]) / np.sum(y[:-1] ** 2)
    assert ols_var(Panel(y[None], p=1))[0, 0, 0] == pytest.approx(slope, rel=1e-12)


def test_ols_var_normal_equations(rng):
    panel = simulate(VarProcess(stable_tensor(rng, 4, 2)), 100, seed=3)
    Y, X = lag_design(panel)
    assert np.abs(ols_loss_gradient(ols_var(panel), Y, X)).max() < 1e-8


def test_ols_var_short_sample(rng):
    panel = simulate(VarProcess(stable_tensor(rng, 5, 3)), 10, seed=3)
    with pytest.raises(ConditioningError):
        ols_var(panel)


def test_sparse_zero_penalty_is_ols(rng):
    panel = simulate(VarProcess(stable_tensor(rng, 3, 2)), 200, seed=4)
    np.testing.assert_allclose(sparse_var_lasso(panel, lam=0.0), ols_var(panel), atol=1e-6)


def test_sparse_null_threshold(rng):
    panel = simulate(VarProcess(stable_tensor(rng, 3, 2)), 100, seed=5)
    st = TaskStats.from_panel(panel)
    lam = np.abs(st.C).max()
    assert not np.any(sparse_var_lasso(st, lam=lam))
    assert np.any(sparse_var_lasso(st, lam=0.9 * lam))


@pytest.mark.parametrize("lam", [0.01, 0.05, 0.2])
def test_sparse_matches_coordinate_descent(rng, lam):
    panel = simulate(VarProcess(stable_tensor(rng, 2, 1, 0.7)), 60, seed=6)
    st = TaskStats.from_panel(panel)
    A = sparse_var_lasso(st, lam=lam)
    np.testing.assert_allclose(matricize(A, 1), _cd_lasso(st.G, st.C, lam), atol=1e-5)
    assert _kkt(matricize(A, 1), st, lam) <= 1e-6


def test_sparse_kkt_larger_problem(rng):
    st = TaskStats.from_panel(simulate(VarProcess(stable_tensor(rng, 6, 3)), 120, seed=7))
    for lam in (0.02, 0.1):
        assert _kkt(matricize(sparse_var_lasso(st, lam=lam), 1), st, lam) <= 1e-6


def test_sparse_path_monotone(rng):
    st = TaskStats.from_panel(simulate(VarProcess(stable_tensor(rng, 5, 2)), 150, seed=8))
    nnz = [int(np.count_nonzero(sparse_var_lasso(st, lam=lam)))
           for lam in np.linspace(0.0, np.abs(st.C).max(), 15)]
    violations = sum(b > a for a, b in zip(nnz, nnz[1:]))
    assert violations <= 1
    assert nnz[-1] == 0


def test_sparse_errors(rng):
    st = TaskStats.from_panel(simulate(VarProcess(stable_tensor(rng, 2, 1)), 30, seed=9))
    with pytest.raises(ArgumentError):
        sparse_var_lasso(st, lam=-0.1)


def test_select_sparse_lambda(rng):
    panel = simulate(VarProcess(stable_tensor(rng, 4, 2)), 120, seed=10)
    lam = select_sparse_lambda(panel, 2, (0.01, 0.1, 5.0), holdout_len=20)
    assert lam in (0.01, 0.1, 5.0)
    assert select_sparse_lambda(panel, 2, (0.3,), holdout_len=20) == 0.3


def test_baseline_spec_validation():
    assert BaselineSpec("tl").transfer and not BaselineSpec("ols").transfer
    with pytest.raises(ArgumentError):
        BaselineSpec("ridge")
    with pytest.raises(ArgumentError):
        BaselineSpec("sparse", {"lam": -1})
    with pytest.raises(ArgumentError):
        BaselineSpec("mlr", {"ranks": (2, 2)})


# ---------------------------------------------------------------------------
# transfer comparators


@pytest.fixture(scope="module")
def exact_design():
    design = SimDesign(K=4, N=6, p=1, s1=3, s2=3, h=0.0, seed=21)
    target, sources, truth = generate_design(design)
    sims = [simulate(s, 200, seed=[21, k]) for k, s in enumerate(sources)]
    return design, target, sims, truth


def test_pool_matches_large_lambda_stage2(exact_design):
    design, target, sources, _ = exact_design
    tgt = simulate(target, 100, seed=[21, 99])
    fit = pool_var(sources, tgt, s_ranks=design.ranks)
    big = stage2_fit(tgt, fit.U_hat, fit.V_hat, fit.L_hat, 1e8)
    np.testing.assert_allclose(fit.A0, big.A0, atol=1e-6)
    assert not np.any(fit.R0) and not np.any(fit.stage1.state.R)
    for mode, s in zip((1, 2, 3), design.ranks):
        assert np.linalg.matrix_rank(matricize(fit.A0, mode), tol=1e-10) <= s


def test_pool_rotation_invariance(exact_design):
    design, target, sources, _ = exact_design
    tgt = simulate(target, 100, seed=[21, 98])
    fit = pool_var(sources, tgt, s_ranks=design.ranks)
    rng = np.random.default_rng(0)
    O1, O2 = (orthonormalize(rng.standard_normal((3, 3))) for _ in range(2))
    rot = stage2_fit(tgt, fit.U_hat @ O1, fit.V_hat @ O2, fit.L_hat, np.inf)
    np.testing.assert_allclose(rot.A0, fit.A0, atol=1e-10)


def test_initial_equals_tl_when_init_is_exact(rng):
    N, p, K = 6, 1, 4
    design = SimDesign(K=K, N=N, p=p, s1=3, s2=3, h=0.0, seed=4)
    target, sources, _ = generate_design(design)
    stats = []
    for s in sources:
        X = rng.standard_normal((N, 300))
        stats.append(TaskStats.from_arrays(matricize(s.A, 1) @ X, X, p))
    tgt = simulate(target, 100, seed=5)
    init = initialize_all(stats, s_ranks=design.ranks)
    a = initial_var(stats, tgt, init=init)
    b = tl_var(stats, tgt, init=init)
    np.testing.assert_allclose(a.A0, b.A0, atol=1e-8)


def test_tl_stage1_descends_from_initializer():
    design = SimDesign(K=4, N=6, p=1, s1=3, s2=3, h=0.5, seed=22)
    target, sources, _ = generate_design(design)
    stats = [TaskStats.from_panel(simulate(s, 150, seed=[22, k])) for k, s in enumerate(sources)]
    tgt = simulate(target, 100, seed=[22, 99])
    init = initialize_all(stats, s_ranks=design.ranks)
    fit = tl_var(stats, tgt, init=init, c_S=1.0)
    sched = lambda_schedule(1.0, 1.0, 6, 1, 4, [s.T for s in stats], tgt.T)
    cfg = PenaltyConfig(lambdas=np.array(sched.lambdas), weights=init.weights)
    start = full_objective(init.stage_one_state(), stats, cfg)
    assert fit.stage1.trace[0] == pytest.approx(start, rel=1e-12)
    assert full_objective(fit.stage1.state, stats, cfg) <= start
