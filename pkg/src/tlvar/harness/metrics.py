"""Estimation and forecast error metrics."""
import numpy as np

from ..exceptions import ArgumentError

__all__ = ["rmse_tensor", "rmsfe", "mafe"]


def rmse_tensor(estimate, truth):
    """Frobenius distance between an estimated and a true transition tensor."""
    a = np.asarray(estimate, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()))


def _errors(errors):
    e = np.asarray(errors, dtype=float)
    if e.ndim == 1:
        e = e[None, :]
    if e.ndim != 2 or e.size == 0:
        raise ArgumentError("expected a nonempty (origins, N) error array")
    return e


def rmsfe(errors):
    """``sqrt(mean_t ||e_t||^2)`` over forecast origins; rows of ``errors`` are origins."""
    e = _errors(errors)
    return float(np.sqrt(np.mean(np.sum(e * e, axis=1))))


def mafe(errors):
    """Mean absolute error over all (origin, variable) pairs."""
    return float(np.mean(np.abs(_errors(errors))))
