"""Comparator estimators and the end-to-end transfer pipeline."""
from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .estimator import PenaltyConfig, _as_stats, stage1_fit, stage2_fit
from .exceptions import ArgumentError, NumericalFailure
from .selection import (fit_mlr_var, initialize_all, lambda_schedule, ols_estimate)
from .tensor import fold, lambda_max
from .var import lag_design

__all__ = [
    "BaselineSpec",
    "ols_var",
    "mlr_var",
    "sparse_var_lasso",
    "select_sparse_lambda",
    "tl_var",
    "pool_var",
    "initial_var",
    "SPARSE_GRID",
    "DEFAULT_C",
]

SPARSE_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_C = 1.0
KINDS = ("ols", "mlr", "pool", "initial", "sparse", "tl")


@dataclass(frozen=True)
class BaselineSpec:
    """Estimator name plus its parameters.

    Recognized parameters: ``ranks`` (mlr, and common ranks for the transfer
    methods), ``lam`` or ``grid`` (sparse), ``c_S``/``c_T`` (tl).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown method {self.kind!r}; expected one of {KINDS}")
        if self.kind == "sparse":
            lam = self.params.get("lam")
            grid = self.params.get("grid", SPARSE_GRID)
            if lam is not None and lam < 0:
                raise ArgumentError("lasso penalty must be nonnegative")
            if lam is None and (len(grid) == 0 or min(grid) < 0):
                raise ArgumentError("lasso grid must be nonempty and nonnegative")
        ranks = self.params.get("ranks")
        if ranks is not None and (len(ranks) != 3 or min(ranks) < 1):
            raise ArgumentError(f"invalid ranks {ranks}")

    @property
    def transfer(self):
        return self.kind in ("pool", "initial", "tl")


def ols_var(panel, p=None):
    """Unrestricted least squares VAR(p); raises ConditioningError when ``T < Np``."""
    return ols_estimate(_as_stats([panel], p)[0])


def mlr_var(panel, ranks, p=None, **kwargs):
    """Multilinear low-rank VAR; thin alias of :func:`tlvar.selection.fit_mlr_var`."""
    return fit_mlr_var(panel, ranks, p=p, **kwargs)


def sparse_var_lasso(panel, p=None, lam=0.1, tol=1e-7, max_iter=100000, A0=None):
    """Entrywise lasso VAR by accelerated proximal gradient.

    Minimizes ``(1/2T)||Y - A_(1) X||^2 + lam ||A||_1`` with step
    ``1/lambda_max(X X'/T)`` and stops once the KKT residual is below ``tol``.
    """
    st = _as_stats([panel], p)[0]
    if lam < 0:
        raise ArgumentError("lasso penalty must be nonnegative")
    L = lambda_max(st.G)
    if L <= 0:
        raise ArgumentError("design matrix is identically zero")
    start = np.zeros_like(st.C) if A0 is None else np.ascontiguousarray(A0, dtype=float)
    A1, it, kkt = kernels.lasso_fista(np.ascontiguousarray(st.G), np.ascontiguousarray(st.C),
                                      float(lam), 1.0 / L, start, int(max_iter), float(tol), 10)
    if not np.all(np.isfinite(A1)):
        raise NumericalFailure("lasso iterates diverged", [])
    if kkt > max(tol, 1e-6):
        raise NumericalFailure(f"lasso KKT residual {kkt:.3g} after {it} iterations", [])
    return fold(A1, 1, (st.N, st.N, st.p))


def select_sparse_lambda(panel, p=None, grid=SPARSE_GRID, holdout_len=20):
    """Pick the lasso penalty minimizing one-step error on the last ``holdout_len`` points.

    Fits use the data before the holdout; ties go to the larger penalty.
    """
    p = p or panel.p
    if not grid:
        raise ArgumentError("empty lasso grid")
    Y, X = lag_design(panel, p)
    if holdout_len < 1 or holdout_len >= Y.shape[1]:
        raise ArgumentError("holdout longer than the sample")
    train = panel.head(panel.Y.shape[1] - holdout_len).with_order(p)
    Yh, Xh = Y[:, -holdout_len:], X[:, -holdout_len:]
    scores = []
    for lam in grid:
        A1 = sparse_var_lasso(train, p, lam).reshape(panel.N, -1, order="F")
        E = Yh - A1 @ Xh
        scores.append((float(np.mean(E * E)), -lam))
    return -min(scores)[1]


def _schedule(stats0, stats, c_S, c_T):
    N, p = stats0.N, stats0.p
    return lambda_schedule(c_S, c_T, N, p, len(stats), [s.T for s in stats], stats0.T)


def tl_var(sources, target, p=None, s_ranks=None, c_S=DEFAULT_C, c_T=None, weights=None,
           cfg=None, init=None, stage1=None, **init_kwargs):
    """Two-stage transfer estimate of the target transition tensor.

    Parameters
    ----------
    sources, target : Panel or TaskStats
    s_ranks : tuple, optional
        Common ranks; selected during initialization when omitted.
    c_S, c_T : float
        Constants of the regularization schedule; ``c_T`` defaults to ``c_S``.
    init : InitBundle, optional
        Reuse a previous initialization.
    stage1 : StageOneResult, optional
        Reuse fitted representations and only redo the target stage.
    """
    stats = _as_stats(sources, p)
    st0 = _as_stats([target], stats[0].p)[0]
    c_T = c_S if c_T is None else c_T
    sched = _schedule(st0, stats, c_S, c_T)
    base = cfg or PenaltyConfig()
    if stage1 is None:
        if init is None:
            init = initialize_all(stats, s_ranks=s_ranks, weights=weights, **init_kwargs)
        run = PenaltyConfig(lambdas=np.array(sched.lambdas), weights=init.weights, a=base.a,
                            b=base.b, max_outer=base.max_outer, max_inner=base.max_inner,
                            tol=base.tol)
        stage1 = stage1_fit(stats, init.s_ranks, run, init.stage_one_state())
    fit = stage2_fit(st0, stage1.U, stage1.V, stage1.L, sched.lambda0, base)
    fit.stage1 = stage1
    return fit


def pool_var(sources, target, p=None, s_ranks=None, weights=None, cfg=None, init=None,
             stage1=None, **init_kwargs):
    """Exact transfer: every deviation, including the target's, is held at zero."""
    stats = _as_stats(sources, p)
    st0 = _as_stats([target], stats[0].p)[0]
    base = cfg or PenaltyConfig()
    if stage1 is None:
        if init is None:
            init = initialize_all(stats, s_ranks=s_ranks, weights=weights, **init_kwargs)
        run = PenaltyConfig(weights=init.weights, a=base.a, b=base.b, max_outer=base.max_outer,
                            max_inner=base.max_inner, tol=base.tol)
        stage1 = stage1_fit(stats, init.s_ranks, run, init.stage_one_state(), pool=True)
    fit = stage2_fit(st0, stage1.U, stage1.V, stage1.L, math.inf, base, pool=True)
    fit.stage1 = stage1
    return fit


def initial_var(sources, target, p=None, s_ranks=None, c_T=DEFAULT_C, weights=None, cfg=None,
                init=None, **init_kwargs):
    """Transfer with the initialized representations, skipping Stage I."""
    stats = _as_stats(sources, p)
    st0 = _as_stats([target], stats[0].p)[0]
    if init is None:
        init = initialize_all(stats, s_ranks=s_ranks, weights=weights, **init_kwargs)
    sched = _schedule(st0, stats, c_T, c_T)
    return stage2_fit(st0, init.U0, init.V0, init.L0, sched.lambda0, cfg)
