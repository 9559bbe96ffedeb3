"""Two-stage transfer-learning estimator for VAR transition tensors.

Stage I learns shared factor matrices ``U`` (response), ``V`` (predictor) and
``L`` (temporal) from the source tasks by alternating a Frobenius proximal
gradient step on the per-task deviations ``R_k`` with gradient descent on the
balanced low-rank loss.  Stage II transfers the learned factors to the target
series by alternating a proximal step on ``R_0`` with the closed-form core
``D_0``.

Internally every task is reduced to its sufficient statistics
``G = X X' / T``, ``C = Y X' / T`` and ``|Y|^2 / (2 T)``, so iteration cost does
not grow with the sample size.  Tensors enter and leave the public functions
with shape ``(N, N, p)``; per-task batches are stacked along a leading axis.
"""
from dataclasses import dataclass, field, replace
import logging

import numpy as np

from .exceptions import ArgumentError, ConditioningError, NumericalFailure
from .tensor import as_tensor, fold, lambda_max, matricize, polar_factors
from .var import Panel, lag_design

logger = logging.getLogger(__name__)

__all__ = [
    "TaskStats",
    "PenaltyConfig",
    "StageOneState",
    "StageOneResult",
    "TransferFit",
    "ols_loss",
    "ols_loss_gradient",
    "prox_frobenius",
    "step_size",
    "prox_update_R",
    "rl_objective",
    "rl_gradients",
    "full_objective",
    "stage1_fit",
    "closed_form_D0",
    "stage2_fit",
]

MONOTONE_SLACK = 1e-8
COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# data reduction


@dataclass(frozen=True)
class TaskStats:
    """Sufficient statistics of one task's least-squares loss."""

    G: np.ndarray  # X X' / T, (Np, Np)
    C: np.ndarray  # Y X' / T, (N, Np)
    yy: float  # |Y|_F^2 / (2T)
    T: int
    N: int
    p: int
    task_id: str = "task"

    @classmethod
    def from_arrays(cls, Y, X, p, task_id="task"):
        Y = np.asarray(Y, dtype=float)
        X = np.asarray(X, dtype=float)
        T = Y.shape[1]
        if X.shape[1] != T or X.shape[0] != Y.shape[0] * p:
            raise ArgumentError(f"design shapes {Y.shape} and {X.shape} are inconsistent")
        return cls(X @ X.T / T, Y @ X.T / T, float(np.sum(Y * Y)) / (2 * T), T, Y.shape[0], p, task_id)

    @classmethod
    def from_panel(cls, panel, p=None):
        if p is None:
            p = panel.p
        if not p:
            raise ArgumentError("VAR order must be given")
        Y, X = lag_design(panel, p)
        return cls.from_arrays(Y, X, p, panel.task_id)

    def loss(self, A1):
        """Loss at a mode-1 unfolded coefficient matrix."""
        return self.yy - float(np.sum(A1 * self.C)) + 0.5 * float(np.sum((A1 @ self.G) * A1))

    def gradient(self, A1):
        return A1 @ self.G - self.C

    @property
    def lipschitz(self):
        return lambda_max(self.G)


def _as_stats(items, p=None):
    out = []
    for it in items:
        if isinstance(it, TaskStats):
            out.append(it)
        elif isinstance(it, Panel):
            out.append(TaskStats.from_panel(it, p))
        else:
            raise ArgumentError(f"expected Panel or TaskStats, got {type(it).__name__}")
    if not out:
        raise ArgumentError("at least one task is required")
    N, q = out[0].N, out[0].p
    for s in out:
        if s.N != N or s.p != q:
            raise ArgumentError("all tasks must share N and p")
    return out


# ---------------------------------------------------------------------------
# elementary pieces


def _check_ols_shapes(A, Y, X):
    A = as_tensor(A)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, N2, p = A.shape
    if N != N2 or Y.shape[0] != N or X.shape[0] != N * p or X.shape[1] != Y.shape[1]:
        raise ArgumentError(
            f"inconsistent shapes: A {A.shape}, Y {Y.shape}, X {X.shape}"
        )
    if Y.shape[1] < 1:
        raise ArgumentError("need at least one observation")
    return A, Y, X


def ols_loss(A, Y, X):
    """Least-squares loss ``|Y - A_(1) X|_F^2 / (2T)``."""
    A, Y, X = _check_ols_shapes(A, Y, X)
    resid = Y - matricize(A, 1) @ X
    return float(np.sum(resid * resid)) / (2 * Y.shape[1])


def ols_loss_gradient(A, Y, X):
    """Gradient of :func:`ols_loss` as a tensor shaped like ``A``."""
    A, Y, X = _check_ols_shapes(A, Y, X)
    resid = Y - matricize(A, 1) @ X
    return fold(-(resid @ X.T) / Y.shape[1], 1, A.shape)


def prox_frobenius(A, c):
    """Proximal map of ``c |.|_F``: ``(1 - c/|A|_F)_+ A``."""
    if c < 0:
        raise ArgumentError("prox threshold must be nonnegative")
    A = np.asarray(A, dtype=float)
    if c == 0:
        return A.copy()
    nrm = np.linalg.norm(A)
    if nrm <= c:
        return np.zeros_like(A)
    return (1.0 - c / nrm) * A


def step_size(X, T):
    """Inverse Lipschitz constant ``T / lambda_max(X X')``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.any(X):
        raise ArgumentError("design matrix is zero")
    return T / lambda_max(X @ X.T)


def prox_update_R(R, low_rank_part, Y, X, eta, lam):
    """One proximal gradient step on the deviation tensor ``R``."""
    if eta < 0 or lam < 0:
        raise ArgumentError("eta and lambda must be nonnegative")
    R = as_tensor(R)
    low_rank_part = as_tensor(low_rank_part)
    if R.shape != low_rank_part.shape:
        raise ArgumentError("R and the low-rank part differ in shape")
    grad = ols_loss_gradient(low_rank_part + R, Y, X)
    return np.asfortranarray(prox_frobenius(R - eta * grad, eta * lam))


# ---------------------------------------------------------------------------
# configuration and state


@dataclass
class PenaltyConfig:
    """Tuning of both stages.

    ``lambdas`` and ``weights`` are per source task; ``eta`` defaults to the
    inverse Lipschitz constant of each task's loss.
    """

    lambdas: np.ndarray = None
    weights: np.ndarray = None
    a: float = 1.0
    b: float = 1.0
    eta: np.ndarray = None
    max_outer: int = 200
    max_inner: int = 50
    tol: float = 1e-6

    def resolved(self, stats):
        K = len(stats)
        lam = np.zeros(K) if self.lambdas is None else np.broadcast_to(
            np.asarray(self.lambdas, dtype=float), (K,)).copy()
        w = np.full(K, 1.0 / K) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (K,):
            raise ArgumentError(f"expected {K} weights, got {w.shape}")
        if np.any(lam < 0):
            raise ArgumentError("regularization parameters must be nonnegative")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ArgumentError("weights must lie on the simplex")
        if self.a <= 0 or self.b <= 0:
            raise ArgumentError("a and b must be positive")
        if self.eta is None:
            eta = np.array([1.0 / s.lipschitz for s in stats])
        else:
            eta = np.broadcast_to(np.asarray(self.eta, dtype=float), (K,)).copy()
        if np.any(eta <= 0):
            raise ArgumentError("step sizes must be positive")
        return replace(self, lambdas=lam, weights=w, eta=eta)


@dataclass
class StageOneState:
    """Iterate of the Stage I algorithm.

    ``D`` has shape (K, s1, s2, s3) and ``R`` shape (K, N, N, p).
    """

    U: np.ndarray
    V: np.ndarray
    L: np.ndarray
    D: np.ndarray
    R: np.ndarray
    iteration: int = 0

    @property
    def K(self):
        return self.D.shape[0]

    @property
    def ranks(self):
        return self.D.shape[1:]

    def low_rank(self, k):
        """Tensor ``[[D_k; U, V, L]]``."""
        A1 = self.U @ _unfold1(self.D)[k] @ np.kron(self.L, self.V).T
        return fold(A1, 1, (self.U.shape[0], self.V.shape[0], self.L.shape[0]))

    def tensor(self, k):
        return self.low_rank(k) + self.R[k]

    def copy(self):
        return StageOneState(self.U.copy(), self.V.copy(), self.L.copy(),
                             self.D.copy(), self.R.copy(), self.iteration)


def _unfold1(batch):
    # (K, a, b, c) -> (K, a, b*c) with the b index running fastest
    K, a, b, c = batch.shape
    return np.ascontiguousarray(batch.transpose(0, 1, 3, 2)).reshape(K, a, c * b)


def _fold1(batch1, dims):
    K = batch1.shape[0]
    a, b, c = dims
    return batch1.reshape(K, a, c, b).transpose(0, 1, 3, 2).copy()


def _check_state(state, stats):
    N, p = stats[0].N, stats[0].p
    K = len(stats)
    s1, s2, s3 = state.U.shape[1], state.V.shape[1], state.L.shape[1]
    if state.U.shape[0] != N or state.V.shape[0] != N or state.L.shape[0] != p:
        raise ArgumentError("factor matrices do not match the data dimensions")
    if state.D.shape != (K, s1, s2, s3):
        raise ArgumentError(f"cores have shape {state.D.shape}, expected {(K, s1, s2, s3)}")
    if state.R.shape != (K, N, N, p):
        raise ArgumentError(f"deviations have shape {state.R.shape}, expected {(K, N, N, p)}")


class _Batch:
    """Stacked statistics for vectorized evaluation across tasks."""

    def __init__(self, stats):
        self.G = np.stack([s.G for s in stats])
        self.C = np.stack([s.C for s in stats])
        self.yy = np.array([s.yy for s in stats])
        self.N, self.p = stats[0].N, stats[0].p

    def losses(self, A1):
        AG = A1 @ self.G
        return self.yy - np.einsum("kij,kij->k", A1, self.C) + 0.5 * np.einsum("kij,kij->k", AG, A1), AG


def _reg(X, a, b):
    E = X.T @ X - b * b * np.eye(X.shape[1])
    return 0.25 * a * float(np.sum(E * E)), a * (X @ E)


def _rl_eval(U, V, L, D1, R1, batch, w, a, b, grad=True):
    """Regularized low-rank objective and (optionally) its gradient blocks."""
    B = np.kron(L, V)
    UD = U @ D1
    A1 = UD @ B.T + R1
    losses, AG = batch.losses(A1)
    ru, gu = _reg(U, a, b)
    rv, gv = _reg(V, a, b)
    rl, gl = _reg(L, a, b)
    obj = float(w @ losses) + ru + rv + rl
    if not grad:
        return obj, losses
    M = AG - batch.C
    MB = M @ B
    gD1 = w[:, None, None] * (U.T @ MB)
    gU = np.einsum("k,kna,kra->nr", w, MB, D1) + gu
    gB = np.einsum("k,knq,kna->qa", w, M, UD)
    p, N = L.shape[0], V.shape[0]
    s2, s3 = V.shape[1], L.shape[1]
    gB4 = gB.reshape(p, N, s3, s2)
    gV = np.einsum("ljcb,lc->jb", gB4, L) + gv
    gL = np.einsum("ljcb,jb->lc", gB4, V) + gl
    return obj, losses, (gU, gV, gL, gD1)


def rl_objective(state, panels, cfg, p=None):
    """Weighted source loss at ``[[D_k; U, V, L]] + R_k`` plus the balancing penalty

    ``(a/4)(|U'U - b^2 I|^2 + |V'V - b^2 I|^2 + |L'L - b^2 I|^2)``.
    """
    stats = _as_stats(panels, p)
    _check_state(state, stats)
    cfg = cfg.resolved(stats)
    obj, _ = _rl_eval(state.U, state.V, state.L, _unfold1(state.D), _unfold1(state.R),
                      _Batch(stats), np.asarray(cfg.weights, float), cfg.a, cfg.b, grad=False)
    return obj


def rl_gradients(state, panels, cfg, p=None):
    """Gradients of :func:`rl_objective` with respect to U, V, L and every D_k.

    Returns a dict with keys ``"U"``, ``"V"``, ``"L"`` and ``"D"`` (stacked, same
    shape as ``state.D``).
    """
    stats = _as_stats(panels, p)
    _check_state(state, stats)
    cfg = cfg.resolved(stats)
    _, _, (gU, gV, gL, gD1) = _rl_eval(
        state.U, state.V, state.L, _unfold1(state.D), _unfold1(state.R),
        _Batch(stats), np.asarray(cfg.weights, float), cfg.a, cfg.b)
    return {"U": gU, "V": gV, "L": gL, "D": _fold1(gD1, state.D.shape[1:])}


def full_objective(state, panels, cfg, p=None):
    """Penalized Stage I objective ``sum_k w_k [loss_k + lambda_k |R_k|_F]``."""
    stats = _as_stats(panels, p)
    _check_state(state, stats)
    cfg = cfg.resolved(stats)
    batch = _Batch(stats)
    B = np.kron(state.L, state.V)
    A1 = state.U @ _unfold1(state.D) @ B.T + _unfold1(state.R)
    losses, _ = batch.losses(A1)
    norms = np.sqrt(np.sum(state.R.reshape(state.K, -1) ** 2, axis=1))
    return float(cfg.weights @ (losses + cfg.lambdas * norms))


# ---------------------------------------------------------------------------
# Stage I


@dataclass
class StageOneResult:
    """Orthonormal shared factors and the final Stage I iterate."""

    U: np.ndarray
    V: np.ndarray
    L: np.ndarray
    state: StageOneState
    trace: list
    converged: bool

    def task_tensor(self, k):
        return self.state.tensor(k)


def _rebalance(U, V, L, D1, b):
    """Rescale factors to ``b`` times orthonormal without changing any tensor."""
    qu, hu = polar_factors(U)
    qv, hv = polar_factors(V)
    ql, hl = polar_factors(L)
    D1 = (hu / b) @ D1 @ np.kron(hl / b, hv / b).T
    return b * qu, b * qv, b * ql, D1


def _descend(U, V, L, D1, R1, batch, w, a, b, max_inner, rel_tol, step0=1.0):
    """Backtracking gradient descent on the balanced low-rank objective."""
    # per-task core blocks scaled by 1/w_k so small weights do not stall them
    scale = np.where(w > 0, 1.0 / np.where(w > 0, w, 1.0), 0.0)[:, None, None]
    obj, _, (gU, gV, gL, gD) = _rl_eval(U, V, L, D1, R1, batch, w, a, b)
    t = step0
    for _ in range(max_inner):
        dD = -scale * gD
        slope = float(np.sum(gD * dD)) - (np.sum(gU * gU) + np.sum(gV * gV) + np.sum(gL * gL))
        if slope >= 0 or not np.isfinite(slope):
            break
        t = min(2.0 * t, 1e6)
        for _ in range(60):
            cand = (U - t * gU, V - t * gV, L - t * gL, D1 + t * dD)
            new, _ = _rl_eval(*cand, R1, batch, w, a, b, grad=False)
            if np.isfinite(new) and new <= obj + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        decrease = obj - new
        U, V, L, D1 = cand
        obj, _, (gU, gV, gL, gD) = _rl_eval(U, V, L, D1, R1, batch, w, a, b)
        if decrease <= rel_tol * max(abs(obj), 1e-300):
            break
    return U, V, L, D1, t


def stage1_fit(sources, ranks, cfg, init, p=None, pool=False):
    """Stage I representation learning.

    Parameters
    ----------
    sources : list of Panel or TaskStats
    ranks : (s1, s2, s3)
    cfg : PenaltyConfig
    init : StageOneState
        Starting point; deviations are usually zero.
    pool : bool
        Freeze every deviation at zero (the exact-transfer limit).

    Returns
    -------
    StageOneResult
        Factors are orthonormal and the cores are counter-rotated so each
        ``[[D_k; U, V, L]]`` is unchanged by the final orthonormalization.
    """
    stats = _as_stats(sources, p)
    cfg = cfg.resolved(stats)
    _check_state(init, stats)
    if tuple(init.ranks) != tuple(ranks):
        raise ArgumentError(f"initial cores have ranks {init.ranks}, expected {tuple(ranks)}")
    batch = _Batch(stats)
    K = len(stats)
    w, lam, eta = cfg.weights, cfg.lambdas, cfg.eta
    U, V, L = init.U.copy(), init.V.copy(), init.L.copy()
    D1 = _unfold1(init.D)
    R1 = np.zeros((K, batch.N, batch.N * batch.p)) if pool else _unfold1(init.R)

    def objective(U, V, L, D1, R1):
        losses, AG = batch.losses(U @ D1 @ np.kron(L, V).T + R1)
        norms = np.sqrt(np.einsum("kij,kij->k", R1, R1))
        return float(w @ (losses + lam * norms)), AG

    F, AG = objective(U, V, L, D1, R1)
    trace = [F]
    converged = False
    step = 1.0
    it = 0
    for it in range(1, cfg.max_outer + 1):
        if not pool:
            M = AG - batch.C
            Z = R1 - eta[:, None, None] * M
            nz = np.sqrt(np.einsum("kij,kij->k", Z, Z))
            thr = eta * lam
            shrink = np.where(nz > thr, 1.0 - thr / np.where(nz > 0, nz, 1.0), 0.0)
            R1 = shrink[:, None, None] * Z
        U, V, L, D1 = _rebalance(U, V, L, D1, cfg.b)
        U, V, L, D1, step = _descend(U, V, L, D1, R1, batch, w, cfg.a, cfg.b,
                                     cfg.max_inner, cfg.tol * 1e-2, step)
        F_new, AG = objective(U, V, L, D1, R1)
        trace.append(F_new)
        if not np.isfinite(F_new) or F_new > F + MONOTONE_SLACK * max(1.0, abs(F)):
            raise NumericalFailure(
                f"stage I objective increased from {F:.10g} to {F_new:.10g}", trace)
        change = abs(F - F_new)
        F = F_new
        if change <= cfg.tol * max(abs(F), 1e-300):
            converged = True
            break
    qu, hu = polar_factors(U)
    qv, hv = polar_factors(V)
    ql, hl = polar_factors(L)
    D1 = hu @ D1 @ np.kron(hl, hv).T
    s1, s2, s3 = ranks
    state = StageOneState(qu, qv, ql, _fold1(D1, (s1, s2, s3)),
                          _fold1(R1, (batch.N, batch.N, batch.p)), it)
    return StageOneResult(qu, qv, ql, state, trace, converged)


# ---------------------------------------------------------------------------
# Stage II


@dataclass
class TransferFit:
    """Output of the two-stage procedure for the target task."""

    U_hat: np.ndarray
    V_hat: np.ndarray
    L_hat: np.ndarray
    D0: np.ndarray
    R0: np.ndarray
    A0: np.ndarray
    trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    stage1: StageOneResult = None

    def coef(self):
        """Mode-1 unfolding ``(A_1, ..., A_p)`` of the target transition tensor."""
        return matricize(self.A0, 1)


def _closed_form_D1(U, B, G, C, R1):
    BGB = B.T @ G @ B
    BGB = (BGB + BGB.T) / 2
    ev = np.linalg.eigvalsh(BGB)
    if ev[0] <= 0 or ev[-1] / ev[0] > COND_LIMIT:
        raise ConditioningError(
            "projected Gram matrix is singular or ill-conditioned "
            f"(eigenvalues {ev[0]:.3g}..{ev[-1]:.3g}); target sample too short or ranks too large"
        )
    rhs = U.T @ (C - R1 @ G) @ B
    return np.linalg.solve(BGB, rhs.T).T


def closed_form_D0(Y0, X0, R0, U_hat, V_hat, L_hat):
    """Exact minimizer over the core of ``loss_0([[D; U, V, L]] + R0)``.

    Assumes ``U_hat`` has orthonormal columns.
    """
    R0 = as_tensor(R0)
    Y0 = np.asarray(Y0, dtype=float)
    X0 = np.asarray(X0, dtype=float)
    _check_ols_shapes(R0, Y0, X0)
    B = np.kron(L_hat, V_hat)
    T = Y0.shape[1]
    D1 = _closed_form_D1(U_hat, B, X0 @ X0.T / T, Y0 @ X0.T / T, matricize(R0, 1))
    return fold(D1, 1, (U_hat.shape[1], V_hat.shape[1], L_hat.shape[1]))


def stage2_fit(target, U_hat, V_hat, L_hat, lambda0, cfg=None, p=None, pool=False):
    """Stage II transfer to the target task.

    Alternates a proximal gradient step on ``R_0`` (step ``1/lambda_max(G_0)``)
    with the closed-form core update.  ``pool=True`` (or an infinite
    ``lambda0``) keeps ``R_0 = 0`` and returns the projected regression fit.
    """
    cfg = cfg or PenaltyConfig()
    st = _as_stats([target], p)[0]
    if lambda0 < 0:
        raise ArgumentError("lambda0 must be nonnegative")
    pool = pool or np.isinf(lambda0)
    U, V, L = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (U_hat, V_hat, L_hat))
    N, p_ = st.N, st.p
    if U.shape[0] != N or V.shape[0] != N or L.shape[0] != p_:
        raise ArgumentError("representations do not match the target dimensions")
    B = np.kron(L, V)
    R1 = np.zeros((N, N * p_))
    D1 = _closed_form_D1(U, B, st.G, st.C, R1)
    A1 = U @ D1 @ B.T
    lam = 0.0 if pool else float(lambda0)
    F = st.loss(A1)
    trace = [F]
    converged = pool
    it = 0
    if not pool:
        eta = 1.0 / st.lipschitz
        for it in range(1, cfg.max_outer + 1):
            Z = R1 - eta * st.gradient(A1)
            nz = np.linalg.norm(Z)
            R1 = (1.0 - eta * lam / nz) * Z if nz > eta * lam else np.zeros_like(Z)
            D1 = _closed_form_D1(U, B, st.G, st.C, R1)
            A1 = U @ D1 @ B.T + R1
            F_new = st.loss(A1) + lam * np.linalg.norm(R1)
            trace.append(F_new)
            if not np.isfinite(F_new) or F_new > F + MONOTONE_SLACK * max(1.0, abs(F)):
                raise NumericalFailure(
                    f"stage II objective increased from {F:.10g} to {F_new:.10g}", trace)
            change = abs(F - F_new)
            F = F_new
            if change <= cfg.tol * max(abs(F), 1e-300):
                converged = True
                break
    dims = (N, N, p_)
    s = (U.shape[1], V.shape[1], L.shape[1])
    D0 = fold(D1, 1, s)
    R0 = fold(R1, 1, dims)
    A0 = fold(U @ D1 @ B.T, 1, dims) + R0
    return TransferFit(U, V, L, D0, R0, np.asfortranarray(A0), trace, it, converged)
