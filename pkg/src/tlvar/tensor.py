"""Dense third-order tensor algebra.

Tensors are plain ``numpy.ndarray`` objects of shape ``(d1, d2, d3)`` stored in
Fortran (mode-1-fastest) order, so that the mode-1 unfolding is a zero-copy
reshape.  Unfoldings follow the Kolda-Bader convention: entry
``(i1, i2, i3)`` of a tensor lands in column ``j = sum_{k != s} i_k J_k`` of the
mode-``s`` unfolding, where ``J_k`` is the product of the dimensions of the
non-``s`` modes preceding ``k``.  With this convention, for a VAR transition
tensor ``A`` of shape ``(N, N, p)`` the mode-1 unfolding is ``(A_1, ..., A_p)``
and ``<A, Z_t> = A_(1) vec(Z_t)``.

Modes are numbered 1, 2, 3 throughout, matching the usual mathematical notation.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import ArgumentError, NumericalRankError

__all__ = [
    "TuckerFactors",
    "as_tensor",
    "matricize",
    "fold",
    "mode_product",
    "tucker_reconstruct",
    "hosvd",
    "truncated_svd",
    "orthonormalize",
    "polar_factors",
    "sin_theta_distance",
    "lambda_max",
    "frob_norm",
]


def as_tensor(t):
    """Return ``t`` as a Fortran-ordered float64 array with exactly three axes."""
    t = np.asarray(t, dtype=float)
    if t.ndim != 3:
        raise ArgumentError(f"expected a third-order tensor, got shape {t.shape}")
    return np.asfortranarray(t)


def _check_mode(mode):
    if mode not in (1, 2, 3):
        raise ArgumentError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def matricize(t, mode):
    """Mode-``mode`` unfolding of a third-order tensor.

    Parameters
    ----------
    t : array_like, shape (d1, d2, d3)
    mode : {1, 2, 3}

    Returns
    -------
    ndarray, shape (d_mode, prod of the other two dims)
    """
    ax = _check_mode(mode)
    t = as_tensor(t)
    return np.reshape(np.moveaxis(t, ax, 0), (t.shape[ax], -1), order="F")


def fold(m, mode, dims):
    """Inverse of :func:`matricize`."""
    ax = _check_mode(mode)
    m = np.asarray(m, dtype=float)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ArgumentError(f"dims must be three positive integers, got {dims}")
    rest = [d for i, d in enumerate(dims) if i != ax]
    if m.shape != (dims[ax], rest[0] * rest[1]):
        raise ArgumentError(
            f"cannot fold a {m.shape} matrix along mode {mode} into dims {dims}"
        )
    full = np.reshape(m, (dims[ax], rest[0], rest[1]), order="F")
    return np.asfortranarray(np.moveaxis(full, 0, ax))


def mode_product(t, m, mode):
    """Mode-``mode`` product ``t x_mode m``; ``m`` has shape (q, d_mode)."""
    ax = _check_mode(mode)
    t = as_tensor(t)
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[1] != t.shape[ax]:
        raise ArgumentError(
            f"matrix of shape {m.shape} cannot multiply mode {mode} of a tensor "
            f"with dims {t.shape}"
        )
    out = np.tensordot(m, t, axes=(1, ax))
    return np.asfortranarray(np.moveaxis(out, 0, ax))


@dataclass(frozen=True)
class TuckerFactors:
    """Tucker decomposition ``[[core; U, V, L]]``."""

    core: np.ndarray
    U: np.ndarray
    V: np.ndarray
    L: np.ndarray
    orthonormal: bool = False

    def __post_init__(self):
        core = as_tensor(self.core)
        mats = [np.atleast_2d(np.asarray(x, dtype=float)) for x in (self.U, self.V, self.L)]
        for j, (f, r) in enumerate(zip(mats, core.shape), start=1):
            if f.shape[1] != r:
                raise ArgumentError(
                    f"factor {j} has {f.shape[1]} columns but core mode {j} has size {r}"
                )
            if f.shape[0] < r:
                raise ArgumentError(f"factor {j} has more columns than rows")
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "U", mats[0])
        object.__setattr__(self, "V", mats[1])
        object.__setattr__(self, "L", mats[2])

    @property
    def ranks(self):
        return self.core.shape

    @property
    def dims(self):
        return (self.U.shape[0], self.V.shape[0], self.L.shape[0])

    def full(self):
        return tucker_reconstruct(self)


def tucker_reconstruct(f):
    """Return ``core x_1 U x_2 V x_3 L``."""
    t = mode_product(f.core, f.U, 1)
    t = mode_product(t, f.V, 2)
    return mode_product(t, f.L, 3)


def _fix_signs(u, v=None):
    # Largest-magnitude entry of each left singular vector made nonnegative.
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    if v is not None:
        v = v * signs
    return u, v, signs


def truncated_svd(m, r):
    """Rank-``r`` truncated SVD with a deterministic sign convention.

    Returns
    -------
    U : ndarray (rows, r)
    s : ndarray (r,) descending, nonnegative
    V : ndarray (cols, r)
        so that ``m ~= U @ diag(s) @ V.T``.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2:
        raise ArgumentError("truncated_svd expects a matrix")
    r = int(r)
    if not 1 <= r <= min(m.shape):
        raise ArgumentError(f"rank {r} out of range for a {m.shape} matrix")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    u, v, _ = _fix_signs(u[:, :r], vt[:r].T)
    return u, s[:r].copy(), v


def hosvd(t, ranks):
    """Truncated higher-order SVD.

    Factor ``j`` holds the top ``ranks[j]`` left singular vectors of the mode-j
    unfolding; the core is ``t x_1 U' x_2 V' x_3 L'``.
    """
    t = as_tensor(t)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 3:
        raise ArgumentError("ranks must have three entries")
    for j, (r, d) in enumerate(zip(ranks, t.shape), start=1):
        if not 1 <= r <= d:
            raise ArgumentError(f"rank {r} out of range for mode {j} of size {d}")
    factors = [truncated_svd(matricize(t, j), r)[0] for j, r in zip((1, 2, 3), ranks)]
    core = t
    for j, f in zip((1, 2, 3), factors):
        core = mode_product(core, f.T, j)
    return TuckerFactors(core, *factors, orthonormal=True)


def polar_factors(m, rtol=1e-12):
    """Polar decomposition ``m = Q H`` with ``Q`` orthonormal, ``H`` symmetric PD.

    Raises
    ------
    NumericalRankError
        If ``m`` is numerically rank deficient.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[1] > m.shape[0]:
        raise NumericalRankError("more columns than rows; cannot orthonormalize")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[-1] <= rtol * max(s[0], np.finfo(float).tiny):
        raise NumericalRankError(
            f"matrix is numerically rank deficient (singular values {s})"
        )
    q = u @ vt
    h = (vt.T * s) @ vt
    return q, h


def orthonormalize(m):
    """Orthonormal basis of ``span(m)``: the polar factor of ``m``.

    This is the orthonormal matrix closest to ``m`` in Frobenius norm, so an
    already orthonormal input is returned unchanged (``2 I`` maps to ``I``).
    """
    return polar_factors(m)[0]


def sin_theta_distance(a, b, atol=1e-8):
    """Largest sine of the principal angles between ``span(a)`` and ``span(b)``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.ndim == 2 and a.shape[0] == 1 and b.shape[0] > 1:
        a = a.T
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    for name, x in (("first", a), ("second", b)):
        err = np.max(np.abs(x.T @ x - np.eye(x.shape[1])))
        if err > atol:
            raise ArgumentError(f"{name} argument is not orthonormal (error {err:.2e})")
    resid = a - b @ (b.T @ a)
    val = np.linalg.norm(resid, 2)
    return float(min(max(val, 0.0), 1.0))


def lambda_max(m, tol=1e-8, max_iter=10_000):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Iterates until the Rayleigh quotient changes by less than ``tol`` relative.
    Falls back to a dense eigensolver if the iteration stalls, which only
    happens when the two leading eigenvalues nearly coincide.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if m.shape != (n, n):
        raise ArgumentError("lambda_max expects a square matrix")
    if not np.any(m):
        return 0.0
    # fixed start vector keeps results reproducible
    x = np.linspace(1.0, 2.0, n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = m @ x
        new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            break
        x = y / ny
        if abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    return float(np.linalg.eigvalsh((m + m.T) / 2)[-1])


def frob_norm(t):
    return float(np.sqrt(np.sum(np.square(t))))
