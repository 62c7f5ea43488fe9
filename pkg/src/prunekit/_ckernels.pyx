# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused per-token encoder and EL2N kernels.

Same contracts as ``_kernels_py``; each token's MLP, layer norm and their
backward pass run in one cache-resident loop instead of many numpy passes.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, sqrt

cnp.import_array()

cdef double VAR_FLOOR = 1e-300


def encoder_forward(const double[:, ::1] emb, const double[:, ::1] w,
                    const double[::1] b, const cnp.int64_t[:, :] tokens,
                    mask_in):
    cdef const unsigned char[:, :] mask = np.ascontiguousarray(mask_in).view(np.uint8)
    cdef Py_ssize_t B = tokens.shape[0], M = tokens.shape[1]
    cdef Py_ssize_t D = emb.shape[1], H = w.shape[1]
    a_arr = np.zeros((B, M, H))
    h_arr = np.zeros((B, M, H))
    s_arr = np.zeros((B, M))
    cdef double[:, :, ::1] a = a_arr
    cdef double[:, :, ::1] h = h_arr
    cdef double[:, ::1] inv = s_arr
    cdef Py_ssize_t i, m, j, k
    cdef cnp.int64_t t
    cdef double mu, var, c, s, xk
    for i in range(B):
        for m in range(M):
            if not mask[i, m]:
                continue
            t = tokens[i, m]
            for j in range(H):
                a[i, m, j] = b[j]
            for k in range(D):
                xk = emb[t, k]
                for j in range(H):
                    a[i, m, j] += xk * w[k, j]
            mu = 0.0
            for j in range(H):
                a[i, m, j] = tanh(a[i, m, j])
                mu += a[i, m, j]
            mu /= H
            var = 0.0
            for j in range(H):
                c = a[i, m, j] - mu
                var += c * c
            var /= H
            if var < VAR_FLOOR:
                var = VAR_FLOOR
            s = 1.0 / sqrt(var)
            inv[i, m] = s
            for j in range(H):
                h[i, m, j] = (a[i, m, j] - mu) * s
    return a_arr, h_arr, s_arr


def encoder_backward(const double[:, ::1] emb, const double[:, ::1] w,
                     const cnp.int64_t[:, :] tokens, mask_in,
                     const double[:, :, ::1] a, const double[:, :, ::1] h,
                     const double[:, ::1] inv, dh_in):
    cdef const unsigned char[:, :] mask = np.ascontiguousarray(mask_in).view(np.uint8)
    cdef const double[:, :, ::1] dh = np.ascontiguousarray(dh_in, dtype=np.float64)
    cdef Py_ssize_t B = tokens.shape[0], M = tokens.shape[1]
    cdef Py_ssize_t D = emb.shape[1], H = w.shape[1]
    d_emb_arr = np.zeros((emb.shape[0], D))
    d_w_arr = np.zeros((D, H))
    d_b_arr = np.zeros(H)
    dz_arr = np.empty(H)
    cdef double[:, ::1] d_emb = d_emb_arr
    cdef double[:, ::1] d_w = d_w_arr
    cdef double[::1] d_b = d_b_arr
    cdef double[::1] dz = dz_arr
    cdef Py_ssize_t i, m, j, k
    cdef cnp.int64_t t
    cdef double gm, ghm, s, xk, acc, aj
    for i in range(B):
        for m in range(M):
            if not mask[i, m]:
                continue
            t = tokens[i, m]
            gm = 0.0
            ghm = 0.0
            for j in range(H):
                gm += dh[i, m, j]
                ghm += dh[i, m, j] * h[i, m, j]
            gm /= H
            ghm /= H
            s = inv[i, m]
            for j in range(H):
                aj = a[i, m, j]
                dz[j] = s * (dh[i, m, j] - gm - h[i, m, j] * ghm) * (1.0 - aj * aj)
                d_b[j] += dz[j]
            for k in range(D):
                xk = emb[t, k]
                acc = 0.0
                for j in range(H):
                    d_w[k, j] += xk * dz[j]
                    acc += dz[j] * w[k, j]
                d_emb[t, k] += acc
    return d_emb_arr, d_w_arr, d_b_arr


def el2n_components(const double[:, ::1] intent_probs, const cnp.int64_t[:] intents,
                    const double[:, :, ::1] slot_probs, const cnp.int64_t[:, :] slots,
                    mask_in):
    cdef const unsigned char[:, :] mask = np.ascontiguousarray(mask_in).view(np.uint8)
    cdef Py_ssize_t N = intent_probs.shape[0], K = intent_probs.shape[1]
    cdef Py_ssize_t M = slot_probs.shape[1], S = slot_probs.shape[2]
    ci_arr = np.empty(N)
    cs_arr = np.empty(N)
    cdef double[::1] ci = ci_arr
    cdef double[::1] cs = cs_arr
    cdef Py_ssize_t i, m, c
    cdef double acc, e, tok
    for i in range(N):
        acc = 0.0
        for c in range(K):
            e = intent_probs[i, c] - (1.0 if c == intents[i] else 0.0)
            acc += e * e
        ci[i] = sqrt(acc)
        acc = 0.0
        for m in range(M):
            if not mask[i, m]:
                continue
            tok = 0.0
            for c in range(S):
                e = slot_probs[i, m, c] - (1.0 if c == slots[i, m] else 0.0)
                tok += e * e
            acc += tok
        cs[i] = sqrt(acc)
    return ci_arr, cs_arr
