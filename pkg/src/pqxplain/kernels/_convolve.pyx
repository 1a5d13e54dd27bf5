# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of ``pqxplain.kernels.reference``.

Same contracts, OpenMP-parallel over disjoint output slices (batch rows
for the forward/input passes, filters for the weight pass), so results
are bitwise independent of the thread count. Inner loops run along the
time axis to vectorize.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange

cnp.import_array()


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w, double[::1] b):
    cdef Py_ssize_t batch = x.shape[0], ch = x.shape[1], t_in = x.shape[2]
    cdef Py_ssize_t n_f = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t t_out = t_in - k + 1
    out_arr = np.empty((batch, n_f, t_out), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, f, c, t, j
    cdef double wv, bias
    for i in prange(batch, nogil=True, schedule='static'):
        for f in range(n_f):
            bias = b[f]
            for t in range(t_out):
                out[i, f, t] = bias
            for c in range(ch):
                for j in range(k):
                    wv = w[f, c, j]
                    for t in range(t_out):
                        out[i, f, t] += wv * x[i, c, t + j]
    return out_arr


def conv1d_backward_input(double[:, :, ::1] grad_out, double[:, :, ::1] w, Py_ssize_t t_in):
    cdef Py_ssize_t batch = grad_out.shape[0], n_f = grad_out.shape[1], t_out = grad_out.shape[2]
    cdef Py_ssize_t ch = w.shape[1], k = w.shape[2]
    dx_arr = np.zeros((batch, ch, t_in), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, f, c, o, j
    cdef double wv
    for i in prange(batch, nogil=True, schedule='static'):
        for c in range(ch):
            for f in range(n_f):
                for j in range(k):
                    wv = w[f, c, j]
                    for o in range(t_out):
                        dx[i, c, o + j] += wv * grad_out[i, f, o]
    return dx_arr


def conv1d_backward_weights(double[:, :, ::1] x, double[:, :, ::1] grad_out, Py_ssize_t k):
    cdef Py_ssize_t batch = x.shape[0], ch = x.shape[1]
    cdef Py_ssize_t n_f = grad_out.shape[1], t_out = grad_out.shape[2]
    dw_arr = np.zeros((n_f, ch, k), dtype=np.float64)
    db_arr = np.zeros(n_f, dtype=np.float64)
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t i, f, c, t, j, t4
    cdef double a0, a1, a2, a3, bs
    # Parallel over filters: each f owns dw[f] and db[f]; batch and time
    # accumulate in fixed order within a filter.
    for f in prange(n_f, nogil=True, schedule='static'):
        for i in range(batch):
            bs = 0.0
            for t in range(t_out):
                bs = bs + grad_out[i, f, t]
            db[f] += bs
            for c in range(ch):
                for j in range(k):
                    # 4-lane dot product of grad_out[i,f,:] and x[i,c,j:j+t_out]
                    a0 = 0.0; a1 = 0.0; a2 = 0.0; a3 = 0.0
                    t4 = t_out - (t_out % 4)
                    for t in range(0, t4, 4):
                        a0 = a0 + grad_out[i, f, t] * x[i, c, t + j]
                        a1 = a1 + grad_out[i, f, t + 1] * x[i, c, t + 1 + j]
                        a2 = a2 + grad_out[i, f, t + 2] * x[i, c, t + 2 + j]
                        a3 = a3 + grad_out[i, f, t + 3] * x[i, c, t + 3 + j]
                    for t in range(t4, t_out):
                        a0 = a0 + grad_out[i, f, t] * x[i, c, t + j]
                    dw[f, c, j] += (a0 + a1) + (a2 + a3)
    return dw_arr, db_arr


def maxpool1d_forward(double[:, :, ::1] x, Py_ssize_t k):
    cdef Py_ssize_t batch = x.shape[0], ch = x.shape[1], t_in = x.shape[2]
    cdef Py_ssize_t t_out = t_in - k + 1
    out_arr = np.empty((batch, ch, t_out), dtype=np.float64)
    idx_arr = np.empty((batch, ch, t_out), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t i, c, t, j, best_j
    cdef double best
    for i in prange(batch, nogil=True, schedule='static'):
        for c in range(ch):
            for t in range(t_out):
                best = x[i, c, t]
                best_j = t
                for j in range(1, k):
                    if x[i, c, t + j] > best:
                        best = x[i, c, t + j]
                        best_j = t + j
                out[i, c, t] = best
                idx[i, c, t] = best_j
    return out_arr, idx_arr


def maxpool1d_backward(double[:, :, ::1] grad_out, cnp.int64_t[:, :, ::1] idx, Py_ssize_t t_in):
    cdef Py_ssize_t batch = grad_out.shape[0], ch = grad_out.shape[1], t_out = grad_out.shape[2]
    dx_arr = np.zeros((batch, ch, t_in), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, c, t
    for i in prange(batch, nogil=True, schedule='static'):
        for c in range(ch):
            for t in range(t_out):
                dx[i, c, idx[i, c, t]] += grad_out[i, c, t]
    return dx_arr
