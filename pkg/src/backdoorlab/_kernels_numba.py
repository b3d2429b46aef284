"""Numba-jitted conv kernels (direct loops over NHWC tensors).

Loop order keeps the output-channel axis innermost so the accumulator
vectorizes; batch loops use prange and parallelize when numba threads
are available.  Kernels are dtype-generic: float32 in the training path,
float64 in the gradient-check oracles.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, fastmath=True, parallel=True)
def _conv3x3(xp, w, out, stride):
    B, Ho, Wo, K = out.shape
    C = xp.shape[3]
    for b in prange(B):
        for i in range(Ho):
            for j in range(Wo):
                ii = i * stride
                jj = j * stride
                acc = np.zeros(K, dtype=xp.dtype)
                for u in range(3):
                    for v in range(3):
                        for c in range(C):
                            xv = xp[b, ii + u, jj + v, c]
                            for k in range(K):
                                acc[k] += xv * w[u, v, c, k]
                out[b, i, j, :] = acc


@njit(cache=True, fastmath=True, parallel=True)
def _conv3x3_input_grad(dy, w, dxp, stride):
    B, Ho, Wo, K = dy.shape
    C = dxp.shape[3]
    for b in prange(B):
        for i in range(Ho):
            for j in range(Wo):
                ii = i * stride
                jj = j * stride
                for u in range(3):
                    for v in range(3):
                        for c in range(C):
                            s = dy[b, i, j, 0] * w[u, v, c, 0]
                            for k in range(1, K):
                                s += dy[b, i, j, k] * w[u, v, c, k]
                            dxp[b, ii + u, jj + v, c] += s


@njit(cache=True, fastmath=True)
def _conv3x3_weight_grad(xp, dy, dw, stride):
    # serial: all batches accumulate into the same dw
    B, Ho, Wo, K = dy.shape
    C = xp.shape[3]
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                ii = i * stride
                jj = j * stride
                for u in range(3):
                    for v in range(3):
                        for c in range(C):
                            xv = xp[b, ii + u, jj + v, c]
                            for k in range(K):
                                dw[u, v, c, k] += xv * dy[b, i, j, k]


def conv3x3(xp, w, stride=1):
    B, Hp, Wp, C = xp.shape
    K = w.shape[3]
    Ho = (Hp - 3) // stride + 1
    Wo = (Wp - 3) // stride + 1
    out = np.empty((B, Ho, Wo, K), dtype=xp.dtype)
    _conv3x3(xp, w, out, stride)
    return out


def conv3x3_input_grad(dy, w, xp_shape, stride=1):
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    _conv3x3_input_grad(dy, w, dxp, stride)
    return dxp


def conv3x3_weight_grad(xp, dy, stride=1):
    C = xp.shape[3]
    K = dy.shape[3]
    dw = np.zeros((3, 3, C, K), dtype=xp.dtype)
    _conv3x3_weight_grad(xp, dy, dw, stride)
    return dw
