"""Compiled convolution kernels.

Sequential direct loops: accumulation order is fixed so repeated runs
produce bit-identical results.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def conv2d_forward(xp, w, stride):
    n_, cin, hp, wp = xp.shape
    cout, _, kh, kw = w.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((n_, cout, oh, ow), dtype=np.float64)
    for n in range(n_):
        for co in range(cout):
            for y in range(oh):
                for x in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[n, ci, y * stride + i, x * stride + j] * w[co, ci, i, j]
                    out[n, co, y, x] = acc
    return out


@njit(cache=True)
def conv2d_grad_weights(grad_y, xp, kh, kw, stride):
    n_, cout, oh, ow = grad_y.shape
    cin = xp.shape[1]
    gw = np.zeros((cout, cin, kh, kw), dtype=np.float64)
    for n in range(n_):
        for co in range(cout):
            for y in range(oh):
                for x in range(ow):
                    g = grad_y[n, co, y, x]
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                gw[co, ci, i, j] += xp[n, ci, y * stride + i, x * stride + j] * g
    return gw


@njit(cache=True)
def conv2d_grad_input(grad_y, w, stride, hp, wp):
    n_, cout, oh, ow = grad_y.shape
    cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    gx = np.zeros((n_, cin, hp, wp), dtype=np.float64)
    for n in range(n_):
        for co in range(cout):
            for y in range(oh):
                for x in range(ow):
                    g = grad_y[n, co, y, x]
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                gx[n, ci, y * stride + i, x * stride + j] += w[co, ci, i, j] * g
    return gx
