"""Numpy reference kernels: same-padded strided conv forward/backward.

Implemented as shift-and-add over filter offsets, so each offset is one
batched matmul. Accumulates in the caller-provided output array.
"""

import numpy as np


def forward(x, w, stride, pads, out):
    f, g = w.shape[0], w.shape[1]
    pt, pb, pl, pr = pads
    y, z = out.shape[1], out.shape[2]
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    for df in range(f):
        for dg in range(g):
            patch = xp[:, df : df + (y - 1) * stride + 1 : stride,
                       dg : dg + (z - 1) * stride + 1 : stride, :]
            out += patch @ w[df, dg]


def backward_input(dy, w, stride, pads, dx):
    f, g = w.shape[0], w.shape[1]
    pt, pb, pl, pr = pads
    n, h, width, _ = dx.shape
    y, z = dy.shape[1], dy.shape[2]
    dxp = np.zeros((n, h + pt + pb, width + pl + pr, dx.shape[3]), dtype=dx.dtype)
    for df in range(f):
        for dg in range(g):
            dxp[:, df : df + (y - 1) * stride + 1 : stride,
                dg : dg + (z - 1) * stride + 1 : stride, :] += dy @ w[df, dg].T
    dx += dxp[:, pt : pt + h, pl : pl + width, :]


def backward_weights(x, dy, stride, pads, dw):
    f, g = dw.shape[0], dw.shape[1]
    pt, pb, pl, pr = pads
    y, z = dy.shape[1], dy.shape[2]
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    for df in range(f):
        for dg in range(g):
            patch = xp[:, df : df + (y - 1) * stride + 1 : stride,
                       dg : dg + (z - 1) * stride + 1 : stride, :]
            dw[df, dg] += np.tensordot(patch, dy, axes=([0, 1, 2], [0, 1, 2]))
