"""Initialization of Stage I, rank selection and hyperparameter selection."""
from dataclasses import dataclass
import logging
import math
import warnings

import numpy as np

from .estimator import PenaltyConfig, StageOneState, TaskStats, _as_stats, stage1_fit
from .exceptions import ArgumentError, ConditioningError, SelectionError
from .tensor import (TuckerFactors, fold, hosvd, matricize, mode_product,
                     polar_factors, tucker_reconstruct)
from .var import lag_design

logger = logging.getLogger(__name__)

__all__ = [
    "InitBundle",
    "LambdaSchedule",
    "ols_estimate",
    "fit_mlr_var",
    "mlr_als",
    "ridge_ratio_rank",
    "select_ranks_ridge_ratio",
    "feasible_ranks",
    "aggregate_subspaces",
    "select_common_ranks",
    "initialize_all",
    "weights_optimal",
    "weights_simple",
    "lambda_schedule",
    "select_c_by_validation",
    "DEFAULT_C_GRID",
]

DEFAULT_C_GRID = tuple(0.25 * i for i in range(1, 9))
DEFAULT_TAU = 0.75
COND_LIMIT = 1e12


def _solve_spd(M, rhs, what):
    M = (M + M.T) / 2
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 0 or ev[-1] / ev[0] > COND_LIMIT:
        raise ConditioningError(f"singular {what} subproblem (eigenvalues {ev[0]:.3g}..{ev[-1]:.3g})")
    return np.linalg.solve(M, rhs)


def ols_estimate(stats, allow_singular=False):
    """Unrestricted least-squares coefficient tensor from task statistics.

    With ``allow_singular`` a rank-deficient Gram matrix falls back to the
    minimum-norm solution (with a warning) instead of raising.
    """
    G, C = stats.G, stats.C
    ev = np.linalg.eigvalsh((G + G.T) / 2)
    if ev[0] <= 0 or ev[-1] / ev[0] > COND_LIMIT:
        if not allow_singular:
            raise ConditioningError(
                f"X X' is singular or ill-conditioned (T={stats.T}, Np={G.shape[0]})")
        warnings.warn(
            f"T={stats.T} is too small for Np={G.shape[0]}; using the minimum-norm "
            "least-squares solution", RuntimeWarning, stacklevel=2)
        A1 = C @ np.linalg.pinv(G, rcond=1e-10, hermitian=True)
    else:
        A1 = np.linalg.solve(G, C.T).T
    return fold(A1, 1, (stats.N, stats.N, stats.p))


def _loss_factors(stats, U, V, L, D1):
    return stats.loss(U @ D1 @ np.kron(L, V).T)


def mlr_als(stats, ranks, max_iter=100, tol=1e-8):
    """Alternating least squares for the multilinear low-rank VAR.

    Returns ``(TuckerFactors, losses)``; factors are orthonormal.
    """
    N, p = stats.N, stats.p
    r1, r2, r3 = (int(r) for r in ranks)
    if not (1 <= r1 <= N and 1 <= r2 <= N and 1 <= r3 <= p):
        raise ArgumentError(f"ranks {ranks} infeasible for N={N}, p={p}")
    if feasible_ranks((r1, r2, r3)) != (r1, r2, r3):
        raise ArgumentError(f"ranks {ranks} violate r_i <= r_j r_k")
    if stats.T < N * p:
        warnings.warn(f"T={stats.T} < Np={N * p}; the low-rank fit may be poorly determined",
                      RuntimeWarning, stacklevel=2)
    init = hosvd(ols_estimate(stats, allow_singular=True), (r1, r2, r3))
    U, V, L = init.U, init.V, init.L
    D = init.core
    G, C = stats.G, stats.C
    G4 = G.reshape(p, N, p, N)  # [lag, var, lag', var']
    C3 = C.reshape(N, p, N)  # [response, lag, var]
    losses = [_loss_factors(stats, U, V, L, matricize(D, 1))]
    for _ in range(max_iter):
        # response factor
        W = matricize(D, 1) @ np.kron(L, V).T
        U = _solve_spd(W @ G @ W.T, W @ C.T, "response-factor").T
        U, H = polar_factors(U)
        D = mode_product(D, H, 1)
        # predictor factor
        Hq = mode_product(mode_product(D, U, 1), L, 3)  # (N, r2, p)
        gram = np.einsum("ibl,ljmk,icm->jbkc", Hq, G4, Hq, optimize=True).reshape(N * r2, N * r2)
        rhs = np.einsum("ibl,ilj->jb", Hq, C3).reshape(-1)
        V = _solve_spd(gram, rhs, "predictor-factor").reshape(N, r2)
        V, H = polar_factors(V)
        D = mode_product(D, H, 2)
        # temporal factor
        J = mode_product(mode_product(D, U, 1), V, 2)  # (N, N, r3)
        gram = np.einsum("ijc,ljmk,ikd->lcmd", J, G4, J, optimize=True).reshape(p * r3, p * r3)
        rhs = np.einsum("ijc,ilj->lc", J, C3).reshape(-1)
        L = _solve_spd(gram, rhs, "temporal-factor").reshape(p, r3)
        L, H = polar_factors(L)
        D = mode_product(D, H, 3)
        # core
        B = np.kron(L, V)
        D1 = _solve_spd(B.T @ G @ B, (U.T @ C @ B).T, "core").T
        D = fold(D1, 1, (r1, r2, r3))
        losses.append(_loss_factors(stats, U, V, L, D1))
        if abs(losses[-2] - losses[-1]) <= tol * max(abs(losses[-1]), 1e-300):
            break
    return TuckerFactors(D, U, V, L, orthonormal=True), losses


def fit_mlr_var(panel, ranks, max_iter=100, tol=1e-8, p=None):
    """Multilinear low-rank VAR fit with Tucker ranks at most ``ranks``.

    ``panel`` may be a :class:`~tlvar.var.Panel` or precomputed
    :class:`~tlvar.estimator.TaskStats`.
    """
    stats = _as_stats([panel], p)[0]
    factors, _ = mlr_als(stats, ranks, max_iter=max_iter, tol=tol)
    return tucker_reconstruct(factors)


def ridge_ratio_rank(sigmas, r_max, ridge):
    """``argmin_i (s_{i+1} + ridge) / (s_i + ridge)`` over ``1 <= i <= r_max``.

    Only indices with a successor singular value are candidates, so a full
    rank is never selected; ties go to the smallest index.
    """
    s = np.asarray(sigmas, dtype=float)
    if s.size == 0:
        raise SelectionError("no singular values")
    upper = min(int(r_max), s.size - 1)
    if upper < 1:
        return 1
    ratios = (s[1:upper + 1] + ridge) / (s[:upper] + ridge)
    return int(np.argmin(ratios)) + 1


def select_ranks_ridge_ratio(panel, p=None, r_max=None, ridge=None, c_ridge=0.01):
    """Per-mode Tucker ranks of the OLS estimate by the ridge-type ratio.

    The default ridge for mode j is ``c_ridge * sigma_1 * sqrt(N p / T)``, with
    ``sigma_1`` the top singular value of the mode-j unfolding.  The default
    ``r_max`` is half the mode dimension, rounded up: the smallest singular
    values of a square noisy unfolding (p = 1) are close to zero and would
    otherwise produce a spurious cliff near full rank.
    """
    stats = _as_stats([panel], p)[0]
    N, p = stats.N, stats.p
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        A = ols_estimate(stats, allow_singular=True)
    if not np.any(A):
        raise SelectionError("OLS estimate is identically zero")
    if r_max is None:
        r_max = tuple(max(1, math.ceil(d / 2)) for d in (N, N, p))
    out = []
    for mode in (1, 2, 3):
        s = np.linalg.svd(matricize(A, mode), compute_uv=False)
        rid = c_ridge * s[0] * math.sqrt(N * p / stats.T) if ridge is None else ridge
        rm = r_max[mode - 1] if np.iterable(r_max) else r_max
        out.append(ridge_ratio_rank(s, rm, rid))
    return feasible_ranks(out)


def feasible_ranks(ranks):
    """Lower ranks until each is at most the product of the other two.

    Tucker ranks of any tensor satisfy this, and the alternating fit is
    singular otherwise.
    """
    r = [int(x) for x in ranks]
    changed = True
    while changed:
        changed = False
        for j in range(3):
            cap = r[(j + 1) % 3] * r[(j + 2) % 3]
            if r[j] > cap:
                r[j] = cap
                changed = True
    return tuple(r)


def aggregate_subspaces(factors, weights=None):
    """Eigen-decomposition of ``sum_k w_k F_k F_k'``, eigenvalues descending."""
    if not factors:
        raise ArgumentError("no factors to aggregate")
    n = factors[0].shape[0]
    K = len(factors)
    w = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (K,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-10:
        raise ArgumentError("weights must lie on the simplex")
    S = np.zeros((n, n))
    for wk, F in zip(w, factors):
        F = np.atleast_2d(F)
        if F.shape[0] != n:
            raise ArgumentError("factors have inconsistent row dimensions")
        S += wk * (F @ F.T)
    vals, vecs = np.linalg.eigh((S + S.T) / 2)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def select_common_ranks(eigvals, mode="threshold", tau=DEFAULT_TAU):
    """Number of significant eigenvalues of an aggregated projection.

    ``"threshold"`` counts eigenvalues above ``tau`` (at least one is kept);
    ``"elbow"`` maximizes the discrete second difference
    ``l_i - 2 l_{i+1} + l_{i+2}`` over i, smallest index on ties.
    """
    lam = np.asarray(eigvals, dtype=float)
    if lam.size == 0:
        raise SelectionError("no eigenvalues given")
    if mode == "threshold":
        return max(1, int(np.sum(lam > tau)))
    if mode == "elbow":
        if lam.size < 3:
            return 1
        second = lam[:-2] - 2 * lam[1:-1] + lam[2:]
        return int(np.argmax(second)) + 1
    raise ArgumentError(f"unknown rank rule {mode!r}")


@dataclass
class InitBundle:
    """Stage I starting point built from per-source low-rank fits."""

    U0: np.ndarray
    V0: np.ndarray
    L0: np.ndarray
    s_ranks: tuple
    D0_init: np.ndarray  # (K, s1, s2, s3)
    eigvals_u: np.ndarray
    eigvals_v: np.ndarray
    eigvals_l: np.ndarray
    task_ranks: list
    fitted: list
    weights: np.ndarray

    def stage_one_state(self):
        K = self.D0_init.shape[0]
        N, p = self.U0.shape[0], self.L0.shape[0]
        return StageOneState(self.U0.copy(), self.V0.copy(), self.L0.copy(),
                             self.D0_init.copy(), np.zeros((K, N, N, p)))


def initialize_all(sources, p=None, r_max=None, weights=None, s_ranks=None,
                   rank_rule="threshold", tau=DEFAULT_TAU, task_ranks=None,
                   max_iter=100, tol=1e-8):
    """Source fits, subspace extraction and weighted subspace aggregation.

    Parameters
    ----------
    sources : list of Panel or TaskStats
    s_ranks : tuple, optional
        Common ranks; selected from the aggregated eigenvalues when omitted.
    task_ranks : tuple or list of tuples, optional
        Per-source Tucker ranks; chosen by the ridge-type ratio when omitted.
    """
    stats = _as_stats(sources, p)
    K = len(stats)
    N, p = stats[0].N, stats[0].p
    w = weights_simple([s.T for s in stats]) if weights is None else np.asarray(weights, float)
    if task_ranks is None:
        ranks = [select_ranks_ridge_ratio(s, r_max=r_max) for s in stats]
    elif np.ndim(task_ranks) == 1:
        ranks = [tuple(task_ranks)] * K
    else:
        ranks = [tuple(r) for r in task_ranks]
    fitted, Us, Vs, Ls = [], [], [], []
    for s, r in zip(stats, ranks):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fac, _ = mlr_als(s, r, max_iter=max_iter, tol=tol)
        A = tucker_reconstruct(fac)
        fitted.append(A)
        h = hosvd(A, r)
        Us.append(h.U)
        Vs.append(h.V)
        Ls.append(h.L)
    eu, vu = aggregate_subspaces(Us, w)
    ev, vv = aggregate_subspaces(Vs, w)
    el, vl = aggregate_subspaces(Ls, w)
    if s_ranks is None:
        s_ranks = (select_common_ranks(eu, rank_rule, tau),
                   select_common_ranks(ev, rank_rule, tau),
                   select_common_ranks(el, rank_rule, tau))
    s1, s2, s3 = (int(x) for x in s_ranks)
    if not (1 <= s1 <= N and 1 <= s2 <= N and 1 <= s3 <= p):
        raise ArgumentError(f"common ranks {s_ranks} infeasible for N={N}, p={p}")
    U0, V0, L0 = vu[:, :s1], vv[:, :s2], vl[:, :s3]
    D = np.stack([
        mode_product(mode_product(mode_product(A, U0.T, 1), V0.T, 2), L0.T, 3)
        for A in fitted
    ])
    return InitBundle(U0, V0, L0, (s1, s2, s3), D, eu, ev, el, ranks, fitted, w)


def weights_optimal(T, sigma_max):
    """Weights proportional to ``T_k / lambda_max(Sigma_k)``."""
    T = np.asarray(T, dtype=float)
    sig = np.asarray(sigma_max, dtype=float)
    if T.shape != sig.shape or T.size == 0:
        raise ArgumentError("T and sigma_max must be nonempty and equally long")
    if np.any(T <= 0) or np.any(sig <= 0):
        raise ArgumentError("sample sizes and variances must be positive")
    r = T / sig
    return r / r.sum()


def weights_simple(T):
    """Weights proportional to sample size."""
    return weights_optimal(T, np.ones(len(T)))


@dataclass(frozen=True)
class LambdaSchedule:
    c_S: float
    c_T: float
    lambdas: tuple
    lambda0: float


def lambda_schedule(c_S, c_T, N, p, K, T, T0):
    """Regularization levels ``lambda_k`` for the sources and ``lambda_0`` for the target."""
    if c_S < 0 or c_T < 0 or N < 1 or p < 1 or K < 1 or T0 < 1:
        raise ArgumentError("lambda schedule inputs must be positive")
    T = [int(t) for t in np.atleast_1d(T)]
    lam = tuple(c_S * math.sqrt((N * N * p + N * math.log(N * K)) / t) for t in T)
    lam0 = c_T * math.sqrt((N * N * p + N * math.log(N)) / T0)
    return LambdaSchedule(float(c_S), float(c_T), lam, lam0)


def select_c_by_validation(sources, p=None, c_grid=DEFAULT_C_GRID, holdout_len=20,
                           s_ranks=None, weights=None, cfg=None, init_kwargs=None):
    """Choose ``c_S`` by one-step forecasts over each source's holdout.

    Representations are fitted once per grid value on the training prefixes
    (all but the last ``holdout_len`` observations); each source's holdout is
    then forecast with its fitted tensor ``[[D_k; U, V, L]] + R_k``.

    Returns
    -------
    best_c : float
    table : list of (c, rmsfe)
    """
    c_grid = [float(c) for c in c_grid]
    if not c_grid:
        raise SelectionError("empty grid")
    p = p or sources[0].p
    if holdout_len < 1 or any(holdout_len >= s.T for s in sources):
        raise SelectionError("holdout longer than a source sample")
    train = [s.head(s.Y.shape[1] - holdout_len) for s in sources]
    train_stats = [TaskStats.from_panel(s, p) for s in train]
    init = initialize_all(train_stats, s_ranks=s_ranks, weights=weights, **(init_kwargs or {}))
    N, K = train_stats[0].N, len(train_stats)
    tests = []
    for s in sources:
        Y, X = lag_design(s, p)
        tests.append((Y[:, -holdout_len:], X[:, -holdout_len:]))
    base = cfg or PenaltyConfig()
    table = []
    for c in c_grid:
        sched = lambda_schedule(c, c, N, p, K, [s.T for s in train_stats], 1)
        run = PenaltyConfig(lambdas=np.array(sched.lambdas), weights=init.weights, a=base.a,
                            b=base.b, max_outer=base.max_outer, max_inner=base.max_inner,
                            tol=base.tol)
        res = stage1_fit(train_stats, init.s_ranks, run, init.stage_one_state())
        sq, n = 0.0, 0
        for k, (Y, X) in enumerate(tests):
            E = Y - matricize(res.task_tensor(k), 1) @ X
            sq += float(np.sum(E * E))
            n += Y.shape[1]
        table.append((c, math.sqrt(sq / n)))
        logger.info("validation c=%.3f rmsfe=%.6f", c, table[-1][1])
    best = min(table, key=lambda row: (row[1], row[0]))[0]
    return best, table
