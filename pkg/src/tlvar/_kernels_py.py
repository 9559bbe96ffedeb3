"""Pure-Python reference versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

BACKEND = "python"


def var_recursion(coef, noise, p):
    coef = np.ascontiguousarray(coef, dtype=float)
    noise = np.ascontiguousarray(noise, dtype=float)
    n, N = noise.shape
    if coef.shape != (N, N * p):
        raise ValueError("coefficient shape does not match noise dimension and order")
    y = noise.copy()
    blocks = [coef[:, j * N:(j + 1) * N] for j in range(p)]
    for t in range(1, n):
        acc = y[t]
        for j in range(min(p, t)):
            acc += blocks[j] @ y[t - 1 - j]
    return y


def _soft(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def _kkt(a, m, lam):
    r = np.where(a == 0.0, np.maximum(np.abs(m) - lam, 0.0), np.abs(m + lam * np.sign(a)))
    return float(r.max()) if r.size else 0.0


def lasso_fista(G, C, lam, step, A0, max_iter, tol, check_every):
    G = np.asarray(G, dtype=float)
    C = np.asarray(C, dtype=float)
    x = np.array(A0, dtype=float)
    y = x.copy()
    t_k = 1.0
    thr = step * lam
    kkt = np.inf
    it = 0
    while it < max_iter:
        it += 1
        x_old = x
        x = _soft(y - step * (y @ G - C), thr)
        if np.sum((y - x) * (x - x_old)) > 0.0:
            t_k = 1.0
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k)) / 2.0
        y = x + ((t_k - 1.0) / t_next) * (x - x_old)
        t_k = t_next
        if it % check_every == 0 or it == max_iter:
            kkt = _kkt(x, x @ G - C, lam)
            if kkt <= tol:
                break
    return x, it, kkt
