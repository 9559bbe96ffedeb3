# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  Semantics must match ``tlvar._kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt
from scipy.linalg.cython_blas cimport dgemm, dgemv

cnp.import_array()

BACKEND = "compiled"


def var_recursion(double[:, ::1] coef, double[:, ::1] noise, int p):
    """y[t] = noise[t] + sum_{j=1..p} A_j y[t-j], zero state before t = 0.

    ``coef`` is the (N, N*p) mode-1 unfolding (A_1, ..., A_p); ``noise`` is
    time-major with shape (n, N).  Returns the (n, N) trajectory.
    """
    cdef Py_ssize_t n = noise.shape[0]
    cdef int N = <int>noise.shape[1]
    if coef.shape[0] != N or coef.shape[1] != N * p:
        raise ValueError("coefficient shape does not match noise dimension and order")
    out_arr = np.empty((n, N), dtype=np.float64)
    cdef double[:, ::1] y = out_arr
    # coef is row-major (N, Np) == column-major (Np, N); gemv with 'T' gives coef @ x
    cdef char trans = b'T'
    cdef int inc = 1
    cdef int lda = N * p
    cdef double one = 1.0
    cdef int m_rows = N * p
    cdef int n_cols = N
    cdef Py_ssize_t t, j, i
    cdef int lags
    cdef double[::1] window = np.zeros(N * p, dtype=np.float64)
    for t in range(n):
        for i in range(N):
            y[t, i] = noise[t, i]
        lags = p if t >= p else <int>t
        if lags == 0:
            continue
        # stack y[t-1], ..., y[t-lags] into the lag window; missing lags stay zero
        for j in range(lags):
            for i in range(N):
                window[j * N + i] = y[t - 1 - j, i]
        for j in range(lags, p):
            for i in range(N):
                window[j * N + i] = 0.0
        dgemv(&trans, &m_rows, &n_cols, &one, &coef[0, 0], &lda,
              &window[0], &inc, &one, &y[t, 0], &inc)
    return out_arr


cdef inline double _soft(double x, double thr) nogil:
    if x > thr:
        return x - thr
    if x < -thr:
        return x + thr
    return 0.0


cdef void _grad(double[:, ::1] A, double[:, ::1] G, double[:, ::1] C,
                double[:, ::1] out) nogil:
    # out = A @ G - C for row-major A (N, q), symmetric G (q, q)
    cdef int q = <int>G.shape[0]
    cdef int N = <int>A.shape[0]
    cdef char nn = b'N'
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef Py_ssize_t i, k
    dgemm(&nn, &nn, &q, &N, &q, &one, &G[0, 0], &q, &A[0, 0], &q,
          &zero, &out[0, 0], &q)
    for i in range(N):
        for k in range(q):
            out[i, k] -= C[i, k]


cdef double _kkt(double[:, ::1] A, double[:, ::1] M, double lam) nogil:
    cdef Py_ssize_t i, k
    cdef double worst = 0.0
    cdef double r
    for i in range(A.shape[0]):
        for k in range(A.shape[1]):
            if A[i, k] == 0.0:
                r = fabs(M[i, k]) - lam
                if r < 0.0:
                    r = 0.0
            elif A[i, k] > 0.0:
                r = fabs(M[i, k] + lam)
            else:
                r = fabs(M[i, k] - lam)
            if r > worst:
                worst = r
    return worst


def lasso_fista(double[:, ::1] G, double[:, ::1] C, double lam, double step,
                double[:, ::1] A0, int max_iter, double tol, int check_every):
    """FISTA with gradient restart for 0.5 tr(A G A') - tr(A C') + lam |A|_1.

    Returns ``(A, n_iter, kkt_residual)``.
    """
    cdef Py_ssize_t N = C.shape[0]
    cdef Py_ssize_t q = C.shape[1]
    x_arr = np.array(A0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] x_old = np.array(x_arr, copy=True)
    cdef double[:, ::1] yv = np.array(x_arr, copy=True)
    cdef double[:, ::1] M = np.empty((N, q), dtype=np.float64)
    cdef double t_k = 1.0
    cdef double t_next, beta, thr, restart, kkt
    cdef Py_ssize_t i, k
    cdef int it = 0
    thr = step * lam
    kkt = 1e300
    with nogil:
        while it < max_iter:
            it += 1
            _grad(yv, G, C, M)
            restart = 0.0
            for i in range(N):
                for k in range(q):
                    x_old[i, k] = x[i, k]
                    x[i, k] = _soft(yv[i, k] - step * M[i, k], thr)
                    restart += (yv[i, k] - x[i, k]) * (x[i, k] - x_old[i, k])
            if restart > 0.0:
                t_k = 1.0
            t_next = (1.0 + sqrt(1.0 + 4.0 * t_k * t_k)) / 2.0
            beta = (t_k - 1.0) / t_next
            t_k = t_next
            for i in range(N):
                for k in range(q):
                    yv[i, k] = x[i, k] + beta * (x[i, k] - x_old[i, k])
            if it % check_every == 0 or it == max_iter:
                _grad(x, G, C, M)
                kkt = _kkt(x, M, lam)
                if kkt <= tol:
                    break
    return x_arr, it, kkt
