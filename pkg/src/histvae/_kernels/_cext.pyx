# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused GRU cell and masked softmax.

Mirrors histvae._kernels.numpy_backend. Matrix products and the two
transcendental blocks stay on numpy (its BLAS and SIMD tanh outperform
scalar libm calls); everything pointwise in between is fused into single C
passes, which removes the stack of temporaries and per-call overhead that
dominates at molecule-sized shapes.
"""
import numpy as np

from libc.math cimport exp as cexp, INFINITY

ctypedef fused floating:
    float
    double


cdef int _gru_fwd_pre_rz(floating[:, ::1] gi, floating[:, ::1] gh,
                         floating[::1] bx, floating[::1] bh,
                         floating[:, ::1] pre_rz) except -1 nogil:
    # pre_rz = 0.5 * (gi + gh + bx + bh) over the reset/update gate block;
    # the 0.5 feeds the tanh-based sigmoid
    cdef Py_ssize_t i, j
    cdef Py_ssize_t B = pre_rz.shape[0], W = pre_rz.shape[1]
    for i in range(B):
        for j in range(W):
            pre_rz[i, j] = <floating>0.5 * (gi[i, j] + gh[i, j] + bx[j] + bh[j])
    return 0


cdef int _gru_fwd_pre_n(floating[:, ::1] gi, floating[:, ::1] gh,
                        floating[::1] bx, floating[::1] bh,
                        floating[:, ::1] rz_tanh,
                        floating[:, ::1] r, floating[:, ::1] z,
                        floating[:, ::1] gh_n, floating[:, ::1] pre_n) except -1 nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t B = r.shape[0], H = r.shape[1]
    cdef floating rr
    for i in range(B):
        for j in range(H):
            rr = <floating>0.5 * (<floating>1.0 + rz_tanh[i, j])
            r[i, j] = rr
            z[i, j] = <floating>0.5 * (<floating>1.0 + rz_tanh[i, H + j])
            gh_n[i, j] = gh[i, 2 * H + j] + bh[2 * H + j]
            pre_n[i, j] = gi[i, 2 * H + j] + bx[2 * H + j] + rr * gh_n[i, j]
    return 0


cdef int _gru_fwd_out(floating[:, ::1] z, floating[:, ::1] n,
                      floating[:, ::1] h, floating[:, ::1] out) except -1 nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t B = h.shape[0], H = h.shape[1]
    for i in range(B):
        for j in range(H):
            out[i, j] = (<floating>1.0 - z[i, j]) * n[i, j] + z[i, j] * h[i, j]
    return 0


cdef int _gru_gates_bwd(floating[:, ::1] g, floating[:, ::1] h,
                        floating[:, ::1] r, floating[:, ::1] z, floating[:, ::1] n,
                        floating[:, ::1] gh_n,
                        floating[:, ::1] dgi, floating[:, ::1] dgh,
                        floating[::1] dbx, floating[::1] dbh,
                        floating[:, ::1] dh) except -1 nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t B = h.shape[0], H = h.shape[1]
    cdef floating go, dz, dn, dpre_n, dr, dpre_r, dpre_z, dghn
    for j in range(3 * H):
        dbx[j] = 0.0
        dbh[j] = 0.0
    for i in range(B):
        for j in range(H):
            go = g[i, j]
            dz = go * (h[i, j] - n[i, j])
            dn = go * (<floating>1.0 - z[i, j])
            dh[i, j] = go * z[i, j]
            dpre_n = dn * (<floating>1.0 - n[i, j] * n[i, j])
            dghn = dpre_n * r[i, j]
            dr = dpre_n * gh_n[i, j]
            dpre_r = dr * r[i, j] * (<floating>1.0 - r[i, j])
            dpre_z = dz * z[i, j] * (<floating>1.0 - z[i, j])
            dgi[i, j] = dpre_r
            dgi[i, H + j] = dpre_z
            dgi[i, 2 * H + j] = dpre_n
            dgh[i, j] = dpre_r
            dgh[i, H + j] = dpre_z
            dgh[i, 2 * H + j] = dghn
            dbx[j] += dpre_r
            dbx[H + j] += dpre_z
            dbx[2 * H + j] += dpre_n
            dbh[j] += dpre_r
            dbh[H + j] += dpre_z
            dbh[2 * H + j] += dghn
    return 0


cdef int _masked_softmax_fwd_impl(floating[:, ::1] logits, floating[:, ::1] mask,
                                  floating[:, ::1] out) except -1:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t rows = logits.shape[0], cols = logits.shape[1]
    cdef floating mx, total
    cdef bint any_unmasked
    for i in range(rows):
        any_unmasked = False
        mx = -INFINITY
        for j in range(cols):
            if mask[i, j] > 0:
                any_unmasked = True
                if logits[i, j] > mx:
                    mx = logits[i, j]
        if not any_unmasked:
            raise ValueError("masked softmax over an all-masked row")
        total = 0.0
        for j in range(cols):
            if mask[i, j] > 0:
                out[i, j] = cexp(logits[i, j] - mx)
                total += out[i, j]
            else:
                out[i, j] = 0.0
        for j in range(cols):
            out[i, j] /= total
    return 0


cdef int _masked_softmax_bwd_impl(floating[:, ::1] probs, floating[:, ::1] g,
                                  floating[:, ::1] out) except -1 nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t rows = probs.shape[0], cols = probs.shape[1]
    cdef floating dot
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += g[i, j] * probs[i, j]
        for j in range(cols):
            out[i, j] = probs[i, j] * (g[i, j] - dot)
    return 0


def gru_cell_fwd(x, h, wx, wh, bx, bh):
    B, H = h.shape
    dtype = x.dtype
    gi = np.matmul(x, wx)
    gh = np.matmul(h, wh)
    pre_rz = np.empty((B, 2 * H), dtype=dtype)
    r = np.empty((B, H), dtype=dtype)
    z = np.empty((B, H), dtype=dtype)
    gh_n = np.empty((B, H), dtype=dtype)
    pre_n = np.empty((B, H), dtype=dtype)
    out = np.empty((B, H), dtype=dtype)
    if dtype == np.float32:
        _gru_fwd_pre_rz[float](gi, gh, bx, bh, pre_rz)
        rz_tanh = np.tanh(pre_rz)
        _gru_fwd_pre_n[float](gi, gh, bx, bh, rz_tanh, r, z, gh_n, pre_n)
        n = np.tanh(pre_n)
        _gru_fwd_out[float](z, n, h, out)
    else:
        _gru_fwd_pre_rz[double](gi, gh, bx, bh, pre_rz)
        rz_tanh = np.tanh(pre_rz)
        _gru_fwd_pre_n[double](gi, gh, bx, bh, rz_tanh, r, z, gh_n, pre_n)
        n = np.tanh(pre_n)
        _gru_fwd_out[double](z, n, h, out)
    return out, (x, h, r, z, n, gh_n)


def gru_cell_bwd(cache, wx, wh, grad_out):
    x, h, r, z, n, gh_n = cache
    B = x.shape[0]
    H = h.shape[1]
    dtype = x.dtype
    grad_out = np.ascontiguousarray(grad_out, dtype=dtype)
    gh_n = np.ascontiguousarray(gh_n)  # numpy-backend caches hold a slice view
    dgi = np.empty((B, 3 * H), dtype=dtype)
    dgh = np.empty((B, 3 * H), dtype=dtype)
    dh = np.empty_like(h)
    dbx = np.empty(3 * H, dtype=dtype)
    dbh = np.empty(3 * H, dtype=dtype)
    if dtype == np.float32:
        _gru_gates_bwd[float](grad_out, h, r, z, n, gh_n, dgi, dgh, dbx, dbh, dh)
    else:
        _gru_gates_bwd[double](grad_out, h, r, z, n, gh_n, dgi, dgh, dbx, dbh, dh)
    dx = np.matmul(dgi, wx.T)
    dwx = np.matmul(x.T, dgi)
    dwh = np.matmul(h.T, dgh)
    dh += np.matmul(dgh, wh.T)
    return dx, dh, dwx, dwh, dbx, dbh


def masked_softmax_fwd(logits, mask):
    shape = logits.shape
    # positive indexing: wraparound is compiled out module-wide
    last = shape[len(shape) - 1]
    l2 = np.ascontiguousarray(logits.reshape(-1, last))
    m2 = np.ascontiguousarray(mask.reshape(-1, last), dtype=l2.dtype)
    out = np.empty_like(l2)
    if l2.dtype == np.float32:
        _masked_softmax_fwd_impl[float](l2, m2, out)
    else:
        _masked_softmax_fwd_impl[double](l2, m2, out)
    return out.reshape(shape)


def masked_softmax_bwd(probs, mask, grad_out):
    shape = probs.shape
    last = shape[len(shape) - 1]
    p2 = np.ascontiguousarray(probs.reshape(-1, last))
    g2 = np.ascontiguousarray(grad_out.reshape(-1, last), dtype=p2.dtype)
    out = np.empty_like(p2)
    if p2.dtype == np.float32:
        _masked_softmax_bwd_impl[float](p2, g2, out)
    else:
        _masked_softmax_bwd_impl[double](p2, g2, out)
    return out.reshape(shape)
