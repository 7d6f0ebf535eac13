# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: same-padded strided conv forward/backward.

Direct loops over batch, output position, filter offset, and channels;
padding is virtual (out-of-range taps are skipped). The innermost loops
run over the contiguous channel axis. Matches the numpy reference
kernels up to floating-point summation order.
"""

import numpy as np


ctypedef fused floating:
    float
    double


def forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
            int stride, tuple pads, floating[:, :, :, ::1] out):
    cdef Py_ssize_t n_batch = x.shape[0], h = x.shape[1], width = x.shape[2]
    cdef Py_ssize_t n_in = x.shape[3], n_out = w.shape[3]
    cdef Py_ssize_t f = w.shape[0], g = w.shape[1]
    cdef Py_ssize_t y = out.shape[1], z = out.shape[2]
    cdef int pad_top = pads[0], pad_left = pads[2]
    cdef Py_ssize_t n, oy, oz, df, dg, i, o, iy, iz
    cdef floating xv
    with nogil:
        for n in range(n_batch):
            for oy in range(y):
                for df in range(f):
                    iy = oy * stride - pad_top + df
                    if iy < 0 or iy >= h:
                        continue
                    for oz in range(z):
                        for dg in range(g):
                            iz = oz * stride - pad_left + dg
                            if iz < 0 or iz >= width:
                                continue
                            for i in range(n_in):
                                xv = x[n, iy, iz, i]
                                if xv == 0:
                                    continue
                                for o in range(n_out):
                                    out[n, oy, oz, o] += xv * w[df, dg, i, o]


def backward_input(floating[:, :, :, ::1] dy, floating[:, :, :, ::1] w,
                   int stride, tuple pads, floating[:, :, :, ::1] dx):
    cdef Py_ssize_t n_batch = dx.shape[0], h = dx.shape[1], width = dx.shape[2]
    cdef Py_ssize_t n_in = dx.shape[3], n_out = w.shape[3]
    cdef Py_ssize_t f = w.shape[0], g = w.shape[1]
    cdef Py_ssize_t y = dy.shape[1], z = dy.shape[2]
    cdef int pad_top = pads[0], pad_left = pads[2]
    cdef Py_ssize_t n, oy, oz, df, dg, i, o, iy, iz
    cdef floating acc
    with nogil:
        for n in range(n_batch):
            for oy in range(y):
                for df in range(f):
                    iy = oy * stride - pad_top + df
                    if iy < 0 or iy >= h:
                        continue
                    for oz in range(z):
                        for dg in range(g):
                            iz = oz * stride - pad_left + dg
                            if iz < 0 or iz >= width:
                                continue
                            for i in range(n_in):
                                acc = 0
                                for o in range(n_out):
                                    acc += dy[n, oy, oz, o] * w[df, dg, i, o]
                                dx[n, iy, iz, i] += acc


def backward_weights(floating[:, :, :, ::1] x, floating[:, :, :, ::1] dy,
                     int stride, tuple pads, floating[:, :, :, ::1] dw):
    cdef Py_ssize_t n_batch = x.shape[0], h = x.shape[1], width = x.shape[2]
    cdef Py_ssize_t n_in = x.shape[3], n_out = dw.shape[3]
    cdef Py_ssize_t f = dw.shape[0], g = dw.shape[1]
    cdef Py_ssize_t y = dy.shape[1], z = dy.shape[2]
    cdef int pad_top = pads[0], pad_left = pads[2]
    cdef Py_ssize_t n, oy, oz, df, dg, i, o, iy, iz
    cdef floating xv
    with nogil:
        for n in range(n_batch):
            for oy in range(y):
                for df in range(f):
                    iy = oy * stride - pad_top + df
                    if iy < 0 or iy >= h:
                        continue
                    for oz in range(z):
                        for dg in range(g):
                            iz = oz * stride - pad_left + dg
                            if iz < 0 or iz >= width:
                                continue
                            for i in range(n_in):
                                xv = x[n, iy, iz, i]
                                if xv == 0:
                                    continue
                                for o in range(n_out):
                                    dw[df, dg, i, o] += xv * dy[n, oy, oz, o]
