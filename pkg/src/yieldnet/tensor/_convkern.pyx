# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution gather/scatter kernels (hot-path backend).

Same contract as yieldnet.tensor._conv_np: im2col extracts patches into a
matrix for a BLAS matmul, col2im scatters patch gradients back. Only the
memory movement is compiled; the matrix products stay in BLAS upstream.
"""

import numpy as np

NAME = "compiled"


def im2col(x_arr, int kh, int kw, int stride, pads, int oh, int ow):
    cdef double[:, :, :, ::1] x = x_arr
    cdef int pt = pads[0]
    cdef int pl = pads[2]
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t h = x.shape[1]
    cdef Py_ssize_t w = x.shape[2]
    cdef Py_ssize_t c = x.shape[3]
    out_arr = np.zeros((n * oh * ow, kh * kw * c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, oi, oj, ki, kj, ch, ih, iw, row, base
    for i in range(n):
        for oi in range(oh):
            for oj in range(ow):
                row = (i * oh + oi) * ow + oj
                for ki in range(kh):
                    ih = oi * stride - pt + ki
                    if ih < 0 or ih >= h:
                        continue
                    for kj in range(kw):
                        iw = oj * stride - pl + kj
                        if iw < 0 or iw >= w:
                            continue
                        base = (ki * kw + kj) * c
                        for ch in range(c):
                            out[row, base + ch] = x[i, ih, iw, ch]
    return out_arr


def col2im(cols_arr, xshape, int kh, int kw, int stride, pads, int oh, int ow):
    cdef double[:, ::1] cols = cols_arr
    cdef int pt = pads[0]
    cdef int pl = pads[2]
    cdef Py_ssize_t n = xshape[0]
    cdef Py_ssize_t h = xshape[1]
    cdef Py_ssize_t w = xshape[2]
    cdef Py_ssize_t c = xshape[3]
    dx_arr = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, oi, oj, ki, kj, ch, ih, iw, row, base
    # Kernel offsets form the outer accumulation loops to mirror the numpy
    # backend's slice-add ordering as closely as possible.
    for ki in range(kh):
        for kj in range(kw):
            base = (ki * kw + kj) * c
            for i in range(n):
                for oi in range(oh):
                    ih = oi * stride - pt + ki
                    if ih < 0 or ih >= h:
                        continue
                    for oj in range(ow):
                        iw = oj * stride - pl + kj
                        if iw < 0 or iw >= w:
                            continue
                        row = (i * oh + oi) * ow + oj
                        for ch in range(c):
                            dx[i, ih, iw, ch] += cols[row, base + ch]
    return dx_arr
