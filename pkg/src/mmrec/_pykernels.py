"""Pure numpy implementations of the training kernels.

Signatures mirror the compiled ``_kernels`` extension exactly; parameters
are updated in place and the summed per-instance logistic loss of the
online pass is returned (``nan`` on a non-finite intermediate).
"""

import math

import numpy as np

NAME = "python"


def _logloss(y, label):
    # log(1 + exp(-y)) for label 1, log(1 + exp(y)) for label 0
    return max(y, 0.0) - label * y + math.log1p(math.exp(-abs(y)))


def _sigmoid(y):
    if y >= 0:
        return 1.0 / (1.0 + math.exp(-y))
    e = math.exp(y)
    return e / (1.0 + e)


def fm_predict(w0, w, V, indptr, indices, values):
    out = np.empty(indptr.size - 1)
    for k in range(out.size):
        idx = indices[indptr[k]:indptr[k + 1]]
        x = values[indptr[k]:indptr[k + 1]]
        Vx = V[idx] * x[:, None]
        s = Vx.sum(axis=0)
        out[k] = w0 + w[idx] @ x + 0.5 * (s @ s - np.sum(Vx * Vx))
    return out


def fm_sgd_epoch(w0, w, V, indptr, indices, values, labels, order, lr, l2):
    total = 0.0
    for k in order:
        a, b = indptr[k], indptr[k + 1]
        idx = indices[a:b]
        x = values[a:b]
        Vi = V[idx]
        Vx = Vi * x[:, None]
        s = Vx.sum(axis=0)
        y = w0[0] + w[idx] @ x + 0.5 * (s @ s - np.sum(Vx * Vx))
        if not math.isfinite(y):
            return math.nan
        label = labels[k]
        total += _logloss(y, label)
        g = _sigmoid(y) - label
        w0[0] -= lr * g
        w[idx] -= lr * (g * x + l2 * w[idx])
        V[idx] = Vi - lr * (g * (x[:, None] * s[None, :] - Vi * (x * x)[:, None]) + l2 * Vi)
    return total


def sim_forward(Pi, Qh, A, z, beta):
    """Score of one target against a (non-empty) history block ``Qh``.

    Returns the intermediates needed for backprop.
    """
    d = Pi.size
    pre = A[:, :d] @ Pi + Qh @ A[:, d:].T  # (n, a)
    mask = pre > 0
    e = (pre * mask) @ z
    m = e.max()
    lse = m + math.log(np.exp(e - m).sum())
    wts = np.exp(e - beta * lse)
    dots = Qh @ Pi
    s = float(wts @ dots)
    return s, (pre, mask, e, lse, wts, dots)


def sim_backward(Pi, Qh, A, z, beta, s, cache, g):
    """Gradients of ``g * s`` w.r.t. ``Pi``, ``Qh``, ``A`` and ``z``."""
    d = Pi.size
    pre, mask, e, lse, wts, dots = cache
    p = np.exp(e - lse)
    de = g * (wts * dots - beta * s * p)  # (n,)
    zm = mask * z[None, :]  # (n, a)
    dz_e = de[:, None] * zm  # dL/dpre
    dPi = g * (wts @ Qh) + (dz_e.sum(axis=0) @ A[:, :d])
    dQh = g * wts[:, None] * Pi[None, :] + dz_e @ A[:, d:]
    dA = np.empty_like(A)
    dA[:, :d] = np.outer(dz_e.sum(axis=0), Pi)
    dA[:, d:] = dz_e.T @ Qh
    dz = de @ (pre * mask)
    return dPi, dQh, dA, dz


def sim_sgd_epoch(P, O, M, codes, A, z, beta, inst_users, inst_items, labels, hist_indptr, hist_items, order, lr, l2):
    total = 0.0
    ln2 = math.log(2.0)
    for k in order:
        u, i, label = inst_users[k], inst_items[k], labels[k]
        h = hist_items[hist_indptr[u]:hist_indptr[u + 1]]
        h = h[h != i]
        if h.size == 0:
            total += ln2
            continue
        Pi = P[i].copy()
        Qh = codes[h] @ M + O[h]
        s, cache = sim_forward(Pi, Qh, A, z, beta)
        if not math.isfinite(s):
            return math.nan
        total += _logloss(s, label)
        g = _sigmoid(s) - label
        dPi, dQh, dA, dz = sim_backward(Pi, Qh, A, z, beta, s, cache, g)
        dM = codes[h].T @ dQh
        P[i] -= lr * (dPi + l2 * Pi)
        O[h] -= lr * (dQh + l2 * O[h])
        M -= lr * (dM + l2 * M)
        A -= lr * (dA + l2 * A)
        z -= lr * (dz + l2 * z)
    return total
