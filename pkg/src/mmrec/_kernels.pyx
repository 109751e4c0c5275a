# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, isfinite, NAN

cnp.import_array()

NAME = "cython"

ctypedef cnp.int64_t i64


cdef inline double _logloss(double y, double label) nogil:
    cdef double m = y if y > 0 else 0.0
    return m - label * y + log1p(exp(-fabs(y)))


cdef inline double _sigmoid(double y) nogil:
    cdef double e
    if y >= 0:
        return 1.0 / (1.0 + exp(-y))
    e = exp(y)
    return e / (1.0 + e)


def fm_predict(double w0, const double[::1] w, const double[:, ::1] V,
               const i64[::1] indptr, const i64[::1] indices, const double[::1] values):
    cdef Py_ssize_t n = indptr.shape[0] - 1, h = V.shape[1]
    cdef Py_ssize_t k, p, f, j
    cdef double y, x, s, sq, v
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for k in range(n):
            y = w0
            for p in range(indptr[k], indptr[k + 1]):
                y += w[indices[p]] * values[p]
            for f in range(h):
                s = 0.0
                sq = 0.0
                for p in range(indptr[k], indptr[k + 1]):
                    v = V[indices[p], f] * values[p]
                    s += v
                    sq += v * v
                y += 0.5 * (s * s - sq)
            o[k] = y
    return out


def fm_sgd_epoch(double[::1] w0, double[::1] w, double[:, ::1] V,
                 const i64[::1] indptr, const i64[::1] indices, const double[::1] values,
                 const double[::1] labels, const i64[::1] order, double lr, double l2):
    cdef Py_ssize_t h = V.shape[1]
    cdef Py_ssize_t t, k, p, f, j
    cdef double y, x, v, sq, g, label, total = 0.0, vif
    s_buf = np.empty(h)
    cdef double[::1] s = s_buf
    with nogil:
        for t in range(order.shape[0]):
            k = order[t]
            y = w0[0]
            for p in range(indptr[k], indptr[k + 1]):
                y += w[indices[p]] * values[p]
            for f in range(h):
                s[f] = 0.0
                sq = 0.0
                for p in range(indptr[k], indptr[k + 1]):
                    v = V[indices[p], f] * values[p]
                    s[f] += v
                    sq += v * v
                y += 0.5 * (s[f] * s[f] - sq)
            if not isfinite(y):
                total = NAN
                break
            label = labels[k]
            total += _logloss(y, label)
            g = _sigmoid(y) - label
            w0[0] -= lr * g
            for p in range(indptr[k], indptr[k + 1]):
                j = indices[p]
                x = values[p]
                w[j] -= lr * (g * x + l2 * w[j])
                for f in range(h):
                    vif = V[j, f]
                    V[j, f] = vif - lr * (g * (x * s[f] - vif * x * x) + l2 * vif)
    return total


def sim_sgd_epoch(double[:, ::1] P, double[:, ::1] O, double[:, ::1] M, const double[:, ::1] codes,
                  double[:, ::1] A, double[::1] z, double beta,
                  const i64[::1] inst_users, const i64[::1] inst_items, const double[::1] labels,
                  const i64[::1] hist_indptr, const i64[::1] hist_items, const i64[::1] order,
                  double lr, double l2):
    cdef Py_ssize_t d = P.shape[1], na = A.shape[0], D = codes.shape[1]
    cdef Py_ssize_t maxlen = 0, u, t, k, i, j, jj, n, q, r, c, a
    cdef double s, g, m, lse, label, acc, total = 0.0, ln2 = log(2.0), tmp

    for u in range(hist_indptr.shape[0] - 1):
        if hist_indptr[u + 1] - hist_indptr[u] > maxlen:
            maxlen = hist_indptr[u + 1] - hist_indptr[u]
    maxlen += 1

    Q_b = np.empty((maxlen, d)); pre_b = np.empty((maxlen, na))
    e_b = np.empty(maxlen); w_b = np.empty(maxlen); dot_b = np.empty(maxlen); de_b = np.empty(maxlen)
    hist_b = np.empty(maxlen, dtype=np.int64)
    dQ_b = np.empty((maxlen, d)); dA_b = np.empty((na, 2 * d)); dz_b = np.empty(na)
    dM_b = np.empty((D, d)); dP_b = np.empty(d); AP_b = np.empty(na); colsum_b = np.empty(na)
    cdef double[:, ::1] Q = Q_b, pre = pre_b, dQ = dQ_b, dA = dA_b, dM = dM_b
    cdef double[::1] e = e_b, wts = w_b, dots = dot_b, de = de_b, dz = dz_b, dP = dP_b
    cdef double[::1] AP = AP_b, colsum = colsum_b
    cdef i64[::1] hist = hist_b

    with nogil:
        for t in range(order.shape[0]):
            k = order[t]
            u = inst_users[k]
            i = inst_items[k]
            label = labels[k]
            n = 0
            for jj in range(hist_indptr[u], hist_indptr[u + 1]):
                if hist_items[jj] != i:
                    hist[n] = hist_items[jj]
                    n += 1
            if n == 0:
                total += ln2
                continue

            # forward
            for a in range(na):
                acc = 0.0
                for c in range(d):
                    acc = acc + A[a, c] * P[i, c]
                AP[a] = acc
            m = -1e300
            for q in range(n):
                j = hist[q]
                for c in range(d):
                    acc = O[j, c]
                    for r in range(D):
                        acc = acc + codes[j, r] * M[r, c]
                    Q[q, c] = acc
                e[q] = 0.0
                for a in range(na):
                    acc = AP[a]
                    for c in range(d):
                        acc = acc + A[a, d + c] * Q[q, c]
                    pre[q, a] = acc
                    if acc > 0:
                        e[q] += z[a] * acc
                if e[q] > m:
                    m = e[q]
            acc = 0.0
            for q in range(n):
                acc = acc + exp(e[q] - m)
            lse = m + log(acc)
            s = 0.0
            for q in range(n):
                wts[q] = exp(e[q] - beta * lse)
                acc = 0.0
                for c in range(d):
                    acc = acc + Q[q, c] * P[i, c]
                dots[q] = acc
                s += wts[q] * acc
            if not isfinite(s):
                total = NAN
                break
            total += _logloss(s, label)
            g = _sigmoid(s) - label

            # backward
            for q in range(n):
                de[q] = g * (wts[q] * dots[q] - beta * s * exp(e[q] - lse))
            for a in range(na):
                colsum[a] = 0.0
                dz[a] = 0.0
                for c in range(2 * d):
                    dA[a, c] = 0.0
            for c in range(d):
                dP[c] = 0.0
            for q in range(n):
                for c in range(d):
                    dP[c] += g * wts[q] * Q[q, c]
                    dQ[q, c] = g * wts[q] * P[i, c]
                for a in range(na):
                    if pre[q, a] > 0:
                        tmp = de[q] * z[a]
                        colsum[a] += tmp
                        dz[a] += de[q] * pre[q, a]
                        for c in range(d):
                            dQ[q, c] += tmp * A[a, d + c]
                            dA[a, d + c] += tmp * Q[q, c]
            for a in range(na):
                for c in range(d):
                    dP[c] += colsum[a] * A[a, c]
                    dA[a, c] = colsum[a] * P[i, c]
            for r in range(D):
                for c in range(d):
                    acc = 0.0
                    for q in range(n):
                        acc = acc + codes[hist[q], r] * dQ[q, c]
                    dM[r, c] = acc

            # update
            for c in range(d):
                P[i, c] -= lr * (dP[c] + l2 * P[i, c])
            for q in range(n):
                j = hist[q]
                for c in range(d):
                    O[j, c] -= lr * (dQ[q, c] + l2 * O[j, c])
            for r in range(D):
                for c in range(d):
                    M[r, c] -= lr * (dM[r, c] + l2 * M[r, c])
            for a in range(na):
                for c in range(2 * d):
                    A[a, c] -= lr * (dA[a, c] + l2 * A[a, c])
                z[a] -= lr * (dz[a] + l2 * z[a])
    return total
