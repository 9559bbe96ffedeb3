"""VAR(p) processes: stationarity, simulation, lag designs and the simulation DGP."""
from dataclasses import dataclass, field
import logging

import numpy as np

from . import kernels
from .exceptions import ArgumentError, GenerationError, NonStationaryError
from .tensor import TuckerFactors, as_tensor, fold, matricize, orthonormalize, tucker_reconstruct

logger = logging.getLogger(__name__)

__all__ = [
    "VarProcess",
    "Panel",
    "SimDesign",
    "SimTruth",
    "companion_matrix",
    "spectral_radius",
    "is_stationary",
    "simulate",
    "lag_design",
    "random_orthonormal",
    "generate_design",
    "make_rng",
]

DEFAULT_BURN_IN = 200


def make_rng(seed):
    """Build a ``numpy.random.Generator`` from an int, a sequence of ints or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class VarProcess:
    """VAR(p) process with transition tensor ``A`` of shape (N, N, p)."""

    A: np.ndarray
    noise_cov: np.ndarray = None

    def __post_init__(self):
        A = as_tensor(self.A)
        if A.shape[0] != A.shape[1]:
            raise ArgumentError(f"transition tensor must be N x N x p, got {A.shape}")
        N = A.shape[0]
        cov = np.eye(N) if self.noise_cov is None else np.asarray(self.noise_cov, dtype=float)
        if cov.shape != (N, N):
            raise ArgumentError("noise covariance has the wrong shape")
        if np.max(np.abs(cov - cov.T)) > 1e-12:
            raise ArgumentError("noise covariance is not symmetric")
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise ArgumentError("noise covariance is not positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "noise_cov", cov)

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.A.shape[2]


@dataclass(frozen=True)
class Panel:
    """Observed series of one task.

    ``Y`` has one column per time point.  The first ``p`` columns are presample
    values, so the effective sample size is ``T = Y.shape[1] - p``.
    """

    Y: np.ndarray
    task_id: str = "task"
    p: int = 0
    variables: tuple = field(default=None, compare=False)

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if Y.ndim != 2:
            raise ArgumentError("panel data must be a matrix")
        if Y.shape[1] < self.p:
            raise ArgumentError("panel shorter than its presample")
        object.__setattr__(self, "Y", Y)

    @property
    def N(self):
        return self.Y.shape[0]

    @property
    def T(self):
        return self.Y.shape[1] - self.p

    def with_order(self, p):
        return Panel(self.Y, self.task_id, p, self.variables)

    def head(self, n_cols):
        """Panel restricted to its first ``n_cols`` columns."""
        return Panel(self.Y[:, :n_cols], self.task_id, self.p, self.variables)


@dataclass(frozen=True)
class SimDesign:
    """Settings for the three-step coefficient generator."""

    K: int
    N: int
    p: int
    s1: int
    s2: int
    s3: int = None
    h: float = 0.0
    T0: int = 100
    T_src: int = 300
    seed: int = 0

    def __post_init__(self):
        s3 = self.s3
        if s3 is None:
            s3 = 1 if self.p == 1 else 3
            object.__setattr__(self, "s3", s3)
        if self.h < 0:
            raise ArgumentError("h must be nonnegative")
        if self.K < 1:
            raise ArgumentError("K must be positive")
        if not (2 <= self.s1 <= self.N and 2 <= self.s2 <= self.N):
            raise ArgumentError("s1, s2 must lie in [2, N]")
        if self.p == 1:
            if s3 != 1:
                raise ArgumentError("s3 must be 1 when p = 1")
        elif not (2 <= s3 <= self.p):
            raise ArgumentError("s3 must lie in [2, p] when p > 1")

    @property
    def ranks(self):
        return (self.s1, self.s2, self.s3)


@dataclass(frozen=True)
class SimTruth:
    """Ground truth of one generated design: shared factors plus per-task pieces.

    Index 0 of every per-task list is the target.
    """

    U: np.ndarray
    V: np.ndarray
    L: np.ndarray
    factors: list  # TuckerFactors per task, on the picked columns
    cores: list  # D_k expressed in the shared (U, V, L) basis
    deviations: list  # R_k
    rejections: int = 0


def companion_matrix(A):
    """Np x Np block companion matrix of a VAR(p) transition tensor."""
    A = as_tensor(A)
    N, _, p = A.shape
    comp = np.zeros((N * p, N * p))
    comp[:N, :] = matricize(A, 1)
    if p > 1:
        comp[N:, :-N] = np.eye(N * (p - 1))
    return comp


def spectral_radius(A):
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(A)))))


def is_stationary(A, margin=0.0):
    return spectral_radius(A) < 1.0 - margin


def simulate(proc, T, burn_in=DEFAULT_BURN_IN, seed=0):
    """Simulate ``burn_in + T + p`` steps from a zero state and keep the last ``T + p``.

    Returns a :class:`Panel` with ``p`` presample columns.
    """
    if T < 1:
        raise ArgumentError("T must be at least 1")
    if not is_stationary(proc.A):
        raise NonStationaryError(
            f"refusing to simulate a process with spectral radius {spectral_radius(proc.A):.4f}"
        )
    rng = make_rng(seed)
    N, p = proc.N, proc.p
    n = burn_in + T + p
    chol = np.linalg.cholesky(proc.noise_cov)
    noise = rng.standard_normal((n, N)) @ chol.T
    path = kernels.var_recursion(np.ascontiguousarray(matricize(proc.A, 1)), noise, p)
    return Panel(np.ascontiguousarray(path[burn_in:].T), p=p)


def lag_design(panel, p=None):
    """Response and lagged-predictor matrices.

    Returns
    -------
    Y : ndarray (N, T)
    X : ndarray (N p, T)
        column t stacks y_{t-1}, ..., y_{t-p}.
    """
    p = panel.p if p is None else int(p)
    if p < 1:
        raise ArgumentError("order p must be at least 1")
    data = panel.Y
    n = data.shape[1]
    T = n - p
    if T < 1:
        raise ArgumentError(f"panel with {n} columns is too short for order {p}")
    Y = data[:, p:]
    X = np.vstack([data[:, p - j:n - j] for j in range(1, p + 1)])
    return np.array(Y), X


def random_orthonormal(rng, rows, cols):
    """Random orthonormal ``rows x cols`` matrix (orthonormalized Gaussian)."""
    return orthonormalize(rng.standard_normal((rows, cols)))


def _project_out(R, U, V, L, suppress_temporal):
    # Remove components of each unfolding lying in the shared column spaces.
    dims = R.shape
    R = fold(matricize(R, 1) - U @ (U.T @ matricize(R, 1)), 1, dims)
    R = fold(matricize(R, 2) - V @ (V.T @ matricize(R, 2)), 2, dims)
    if not suppress_temporal:
        R = fold(matricize(R, 3) - L @ (L.T @ matricize(R, 3)), 3, dims)
    return R


def _draw_task(rng, design, U, V, L):
    N, p = design.N, design.p
    temporal = p > 1
    r3 = 2 if temporal else 1
    cu = np.sort(rng.choice(design.s1, size=2, replace=False))
    cv = np.sort(rng.choice(design.s2, size=2, replace=False))
    cl = np.sort(rng.choice(design.s3, size=2, replace=False)) if temporal else np.array([0])
    diag = rng.uniform(0.5, 0.8, size=2)
    diag /= np.linalg.norm(diag)
    S = np.zeros((2, 2, r3), order="F")
    for i in range(2):
        S[i, i, min(i, r3 - 1)] = diag[i]
    O1 = random_orthonormal(rng, 2, 2)
    O2 = random_orthonormal(rng, 2, 2)
    O3 = random_orthonormal(rng, r3, r3) if temporal else np.ones((1, 1))
    Dk = tucker_reconstruct(TuckerFactors(S, O1, O2, O3))
    low = TuckerFactors(Dk, U[:, cu], V[:, cv], L[:, cl])
    # core of the same tensor in the shared basis
    shared = np.zeros((design.s1, design.s2, design.s3), order="F")
    shared[np.ix_(cu, cv, cl)] = Dk
    R = np.asfortranarray(rng.standard_normal((N, N, p)))
    R = _project_out(R, U, V, L, suppress_temporal=not temporal)
    nrm = np.linalg.norm(R)
    R = R * (design.h / nrm) if design.h > 0 and nrm > 0 else np.zeros_like(R)
    return low, shared, R, S


def generate_design(design, max_attempts=1000):
    """Draw target and source processes by the three-step procedure.

    Shared orthonormal U (N x s1), V (N x s2), L (p x s3) are drawn once.  Each
    task then picks two columns of each, builds a unit-norm super-diagonal core
    rotated by random 2 x 2 orthonormal matrices, and adds a deviation tensor
    orthogonal to the shared spaces with Frobenius norm ``h``.  For ``p = 1``
    the temporal factor is the scalar 1 and the mode-3 constraint is dropped.
    Non-stationary draws are rejected and redrawn per task.

    Returns
    -------
    target : VarProcess
    sources : list of VarProcess
    truth : SimTruth
    """
    rng = make_rng([int(design.seed), 0])
    U = random_orthonormal(rng, design.N, design.s1)
    V = random_orthonormal(rng, design.N, design.s2)
    L = random_orthonormal(rng, design.p, design.s3) if design.p > 1 else np.ones((1, 1))
    procs, factors, cores, devs = [], [], [], []
    rejections = 0
    for k in range(design.K + 1):
        for _ in range(max_attempts):
            low, shared, R, _ = _draw_task(rng, design, U, V, L)
            A = tucker_reconstruct(low) + R
            if is_stationary(A):
                break
            rejections += 1
        else:
            raise GenerationError(
                f"no stationary draw for task {k} after {max_attempts} attempts"
            )
        procs.append(VarProcess(A))
        factors.append(low)
        cores.append(shared)
        devs.append(R)
    if rejections:
        logger.info("generate_design rejected %d non-stationary draws", rejections)
    truth = SimTruth(U, V, L, factors, cores, devs, rejections)
    return procs[0], procs[1:], truth
