"""Pure-numpy conv kernels (shifted-matmul formulation).

A 3x3 convolution over a zero-padded NHWC tensor is expressed as nine
shifted GEMMs, one per kernel tap, which keeps all heavy lifting inside
BLAS.  These are the reference implementations for the numba kernels and
the fallback backend when numba is unavailable.
"""

import numpy as np


def conv3x3(xp, w, stride=1):
    """3x3 convolution. xp: padded (B,Hp,Wp,C), w: (3,3,C,K) -> (B,Ho,Wo,K)."""
    B, Hp, Wp, C = xp.shape
    K = w.shape[3]
    Ho = (Hp - 3) // stride + 1
    Wo = (Wp - 3) // stride + 1
    out = np.zeros((B * Ho * Wo, K), dtype=xp.dtype)
    for u in range(3):
        for v in range(3):
            xs = xp[:, u:u + (Ho - 1) * stride + 1:stride,
                    v:v + (Wo - 1) * stride + 1:stride, :]
            out += xs.reshape(-1, C) @ w[u, v]
    return out.reshape(B, Ho, Wo, K)


def conv3x3_input_grad(dy, w, xp_shape, stride=1):
    """Gradient w.r.t. the padded input. dy: (B,Ho,Wo,K) -> (B,Hp,Wp,C)."""
    B, Ho, Wo, K = dy.shape
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    dyf = dy.reshape(-1, K)
    for u in range(3):
        for v in range(3):
            g = (dyf @ w[u, v].T).reshape(B, Ho, Wo, -1)
            dxp[:, u:u + (Ho - 1) * stride + 1:stride,
                v:v + (Wo - 1) * stride + 1:stride, :] += g
    return dxp


def conv3x3_weight_grad(xp, dy, stride=1):
    """Gradient w.r.t. the kernel. Returns (3,3,C,K)."""
    B, Ho, Wo, K = dy.shape
    C = xp.shape[3]
    dw = np.empty((3, 3, C, K), dtype=xp.dtype)
    dyf = dy.reshape(-1, K)
    for u in range(3):
        for v in range(3):
            xs = xp[:, u:u + (Ho - 1) * stride + 1:stride,
                    v:v + (Wo - 1) * stride + 1:stride, :]
            dw[u, v] = xs.reshape(-1, C).T @ dyf
    return dw
