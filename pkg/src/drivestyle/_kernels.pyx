# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled HMM message-passing and table-count kernels.

Same contracts as ``_kernels_py``; loops release the GIL so independent
chains can run on threads.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY, isfinite

cnp.import_array()


def forward_loglik(trans, init, log_emit):
    cdef const double[:, ::1] A = np.ascontiguousarray(trans, dtype=np.float64)
    cdef const double[::1] pi0 = np.ascontiguousarray(init, dtype=np.float64)
    cdef const double[:, ::1] le = np.ascontiguousarray(log_emit, dtype=np.float64)
    cdef Py_ssize_t T = le.shape[0], K = le.shape[1], t, i, j
    cdef double[::1] a = np.empty(K)
    cdef double[::1] p = np.empty(K)
    cdef double m, c, total = 0.0
    cdef bint failed = False
    with nogil:
        m = le[0, 0]
        for j in range(1, K):
            if le[0, j] > m:
                m = le[0, j]
        c = 0.0
        for j in range(K):
            a[j] = pi0[j] * exp(le[0, j] - m)
            c += a[j]
        if not c > 0:
            failed = True
        else:
            total += log(c) + m
            for j in range(K):
                a[j] /= c
            for t in range(1, T):
                for j in range(K):
                    p[j] = 0.0
                for i in range(K):
                    for j in range(K):
                        p[j] += a[i] * A[i, j]
                m = le[t, 0]
                for j in range(1, K):
                    if le[t, j] > m:
                        m = le[t, j]
                c = 0.0
                for j in range(K):
                    a[j] = p[j] * exp(le[t, j] - m)
                    c += a[j]
                if not c > 0:
                    failed = True
                    break
                total += log(c) + m
                for j in range(K):
                    a[j] /= c
    if failed:
        return -np.inf
    return total


def backward_messages(trans, log_emit):
    cdef const double[:, ::1] A = np.ascontiguousarray(trans, dtype=np.float64)
    cdef const double[:, ::1] le = np.ascontiguousarray(log_emit, dtype=np.float64)
    cdef Py_ssize_t T = le.shape[0], K = le.shape[1], t, i, j
    out_arr = np.zeros((T, K))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] w = np.empty(K)
    cdef double[::1] s = np.empty(K)
    cdef double m, v, smax, acc
    with nogil:
        for t in range(T - 2, -1, -1):
            m = -INFINITY
            for j in range(K):
                v = le[t + 1, j] + out[t + 1, j]
                if v > m:
                    m = v
            if not isfinite(m):
                for i in range(K):
                    out[t, i] = -INFINITY
                continue
            for j in range(K):
                w[j] = exp(le[t + 1, j] + out[t + 1, j] - m)
            smax = 0.0
            for i in range(K):
                acc = 0.0
                for j in range(K):
                    acc += A[i, j] * w[j]
                s[i] = acc
                if acc > smax:
                    smax = acc
            if not smax > 0:
                for i in range(K):
                    out[t, i] = -INFINITY
                continue
            for i in range(K):
                out[t, i] = log(s[i] / smax)
    return out_arr


cdef inline Py_ssize_t _pick(double[::1] w, Py_ssize_t K, double u) noexcept nogil:
    cdef double total = 0.0, x, cum = 0.0
    cdef Py_ssize_t j, last = -1
    for j in range(K):
        total += w[j]
        if w[j] > 0:
            last = j
    if not (total > 0 and isfinite(total)):
        return -1
    x = u * total
    for j in range(K):
        cum += w[j]
        if cum > x:
            return j
    return last


def sample_forward(trans, init, log_emit, log_back, uniforms):
    cdef const double[:, ::1] A = np.ascontiguousarray(trans, dtype=np.float64)
    cdef const double[::1] pi0 = np.ascontiguousarray(init, dtype=np.float64)
    cdef const double[:, ::1] le = np.ascontiguousarray(log_emit, dtype=np.float64)
    cdef const double[:, ::1] lb = np.ascontiguousarray(log_back, dtype=np.float64)
    cdef const double[::1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t T = le.shape[0], K = le.shape[1], t, j, pick, prev = -1
    labels_arr = np.empty(T, dtype=np.int64)
    cdef long long[::1] labels = labels_arr
    cdef double[::1] w = np.empty(K)
    cdef double m, v
    cdef Py_ssize_t failed_at = -1
    with nogil:
        for t in range(T):
            m = -INFINITY
            for j in range(K):
                v = le[t, j] + lb[t, j]
                if v > m:
                    m = v
            for j in range(K):
                if isfinite(m):
                    v = exp(le[t, j] + lb[t, j] - m)
                else:
                    v = 0.0
                if prev < 0:
                    w[j] = pi0[j] * v
                else:
                    w[j] = A[prev, j] * v
            pick = _pick(w, K, u[t])
            if pick < 0:
                failed_at = t
                break
            labels[t] = pick
            prev = pick
    if failed_at >= 0:
        raise FloatingPointError(f"no state has positive posterior mass at t={failed_at}")
    return labels_arr


def crt_counts(counts, conc, uniforms):
    cdef const long long[:, ::1] n = np.ascontiguousarray(counts, dtype=np.int64)
    cdef const double[:, ::1] c = np.ascontiguousarray(conc, dtype=np.float64)
    cdef const double[::1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t R = n.shape[0], C = n.shape[1], i, j, k, pos = 0
    out_arr = np.zeros((R, C), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    cdef double ck
    cdef long long tables
    with nogil:
        for i in range(R):
            for j in range(C):
                ck = c[i, j]
                tables = 0
                for k in range(n[i, j]):
                    if k == 0:
                        tables += 1
                    elif u[pos] < ck / (<double>k + ck):
                        tables += 1
                    pos += 1
                out[i, j] = tables
    return out_arr
