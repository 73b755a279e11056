"""Hot loops: attention, loss/gradients over a dataset, dual coordinate ascent.

Each kernel has a numba implementation and a pure-numpy one.  The numpy
path is used when numba is missing or ``TFDYN_DISABLE_NUMBA`` is set to a
non-empty value other than ``0``.  Both paths reduce in the same order
(length groups ascending, examples lexicographic, positions left to right)
so they agree to rounding; each path on its own is bit-reproducible.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover
    numba = None

_flag = os.environ.get("TFDYN_DISABLE_NUMBA", "").strip()
USE_NUMBA = numba is not None and _flag in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"


def _softplus_neg(z):
    # log(1 + exp(-z)) without overflow
    if z >= 0.0:
        return math.log1p(math.exp(-z))
    return -z + math.log1p(math.exp(z))


def _j_prime(z):
    # -1 / (1 + exp(z))
    if z >= 0.0:
        e = math.exp(-z)
        return -e / (1.0 + e)
    return -1.0 / (1.0 + math.exp(z))


# ---------------------------------------------------------------- numpy path

def attention_numpy(idx, lengths, W, lam):
    n, width = idx.shape
    phi = np.zeros((n, width))
    for L in np.unique(lengths):
        rows = np.nonzero(lengths == L)[0]
        I = idx[rows, :L]
        s = W[I, I[:, -1:]] / lam
        s = np.exp(s - s.max(axis=1, keepdims=True))
        phi[rows, :L] = s / s.sum(axis=1, keepdims=True)
    return phi


def _signed_add(vals, index, shape):
    # positive and negative terms summed apart, then combined: mirrored
    # contributions of equal magnitude cancel exactly
    pos = np.zeros(shape)
    neg = np.zeros(shape)
    m = vals >= 0
    np.add.at(pos, tuple(ix[m] for ix in index), vals[m])
    np.add.at(neg, tuple(ix[~m] for ix in index), vals[~m])
    return pos + neg


def loss_and_grads_numpy(idx, lengths, labels, weights, group_starts, u, W, lam):
    d = u.shape[0]
    n_groups = group_starts.shape[0] - 1
    loss_groups = np.zeros(n_groups)
    gu = np.zeros(d)
    gW = np.zeros((d, d))
    for g in range(n_groups):
        a, b = group_starts[g], group_starts[g + 1]
        L = lengths[a]
        I = idx[a:b, :L]
        last = I[:, -1]
        s = W[I, last[:, None]] / lam
        e = np.exp(s - s.max(axis=1, keepdims=True))
        phi = e / e.sum(axis=1, keepdims=True)
        tok = u[I]
        T = np.zeros(b - a)
        for l in range(L):
            T += phi[:, l] * tok[:, l]
        z = labels[a:b] * T
        lsum = 0.0
        for zi in z:
            lsum += _softplus_neg(zi)
        c = np.array([_j_prime(zi) for zi in z]) * labels[a:b]
        rows, cols = I.ravel(), np.repeat(last, L)
        cu = (c[:, None] * phi).ravel()
        cW = (c[:, None] * phi * (tok - T[:, None])).ravel()
        tu = _signed_add(cu, (rows,), (d,))
        tW = _signed_add(cW, (rows, cols), (d, d))
        wgt = weights[a]
        loss_groups[g] = wgt * lsum
        gu += wgt * tu
        gW += (wgt / lam) * tW
    return loss_groups, gu, gW


def dca_sweeps_numpy(V, y, sqn, alpha, w, n_sweeps):
    n = V.shape[0]
    for _ in range(n_sweeps):
        for i in range(n):
            if sqn[i] == 0.0:
                continue
            g = 1.0 - y[i] * float(V[i] @ w)
            new = alpha[i] + g / sqn[i]
            if new < 0.0:
                new = 0.0
            delta = new - alpha[i]
            if delta != 0.0:
                alpha[i] = new
                w += (delta * y[i]) * V[i]


# ---------------------------------------------------------------- numba path

if numba is not None:
    _softplus_neg_nb = njit(cache=True)(_softplus_neg)
    _j_prime_nb = njit(cache=True)(_j_prime)

    @njit(cache=True)
    def _attention_nb(idx, lengths, W, lam):
        n, width = idx.shape
        phi = np.zeros((n, width))
        for i in range(n):
            L = lengths[i]
            last = idx[i, L - 1]
            m = -np.inf
            for l in range(L):
                s = W[idx[i, l], last] / lam
                phi[i, l] = s
                if s > m:
                    m = s
            z = 0.0
            for l in range(L):
                phi[i, l] = math.exp(phi[i, l] - m)
                z += phi[i, l]
            for l in range(L):
                phi[i, l] /= z
        return phi

    @njit(cache=True)
    def _loss_and_grads_nb(idx, lengths, labels, weights, group_starts, u, W, lam):
        d = u.shape[0]
        width = idx.shape[1]
        n_groups = group_starts.shape[0] - 1
        loss_groups = np.zeros(n_groups)
        gu = np.zeros(d)
        gW = np.zeros((d, d))
        # per-group sums kept by sign so that mirrored terms cancel exactly
        tu_p = np.zeros(d)
        tu_n = np.zeros(d)
        tW_p = np.zeros((d, d))
        tW_n = np.zeros((d, d))
        phi = np.empty(width)
        for g in range(n_groups):
            a = group_starts[g]
            b = group_starts[g + 1]
            tu_p[:] = 0.0
            tu_n[:] = 0.0
            tW_p[:] = 0.0
            tW_n[:] = 0.0
            lsum = 0.0
            for i in range(a, b):
                L = lengths[i]
                last = idx[i, L - 1]
                m = -np.inf
                for l in range(L):
                    s = W[idx[i, l], last] / lam
                    phi[l] = s
                    if s > m:
                        m = s
                z = 0.0
                for l in range(L):
                    phi[l] = math.exp(phi[l] - m)
                    z += phi[l]
                T = 0.0
                for l in range(L):
                    phi[l] /= z
                    T += phi[l] * u[idx[i, l]]
                y = labels[i]
                lsum += _softplus_neg_nb(y * T)
                c = _j_prime_nb(y * T) * y
                for l in range(L):
                    k = idx[i, l]
                    v = c * phi[l]
                    if v >= 0.0:
                        tu_p[k] += v
                    else:
                        tu_n[k] += v
                    v = c * phi[l] * (u[k] - T)
                    if v >= 0.0:
                        tW_p[k, last] += v
                    else:
                        tW_n[k, last] += v
            wgt = weights[a]
            loss_groups[g] = wgt * lsum
            f = wgt / lam
            for k in range(d):
                gu[k] += wgt * (tu_p[k] + tu_n[k])
                for j in range(d):
                    gW[k, j] += f * (tW_p[k, j] + tW_n[k, j])
        return loss_groups, gu, gW

    @njit(cache=True)
    def _dca_sweeps_nb(V, y, sqn, alpha, w, n_sweeps):
        n, d = V.shape
        for _ in range(n_sweeps):
            for i in range(n):
                if sqn[i] == 0.0:
                    continue
                dot = 0.0
                for k in range(d):
                    dot += V[i, k] * w[k]
                new = alpha[i] + (1.0 - y[i] * dot) / sqn[i]
                if new < 0.0:
                    new = 0.0
                delta = new - alpha[i]
                if delta != 0.0:
                    alpha[i] = new
                    f = delta * y[i]
                    for k in range(d):
                        w[k] += f * V[i, k]

    def attention_numba(idx, lengths, W, lam):
        return _attention_nb(idx, lengths, W, float(lam))

    def loss_and_grads_numba(idx, lengths, labels, weights, group_starts, u, W, lam):
        return _loss_and_grads_nb(idx, lengths, labels, weights, group_starts, u, W, float(lam))

    def dca_sweeps_numba(V, y, sqn, alpha, w, n_sweeps):
        _dca_sweeps_nb(V, y, sqn, alpha, w, int(n_sweeps))


if USE_NUMBA:
    attention = attention_numba
    loss_and_grads = loss_and_grads_numba
    dca_sweeps = dca_sweeps_numba
else:
    attention = attention_numpy
    loss_and_grads = loss_and_grads_numpy
    dca_sweeps = dca_sweeps_numpy
