"""Tensor primitives on ``(C, H, W)`` arrays, each with a hand-written backward.

Forward functions return ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns input/parameter grads.
Convolution is cross-correlation with zero "same" padding ``(k - 1) // 2``.
"""

from __future__ import annotations

import numpy as np

LEAK = 0.01
BETA_MIN = 1e-6


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """``x``: (C, H, W); ``w``: (O, C, k, k); returns (O, ceil(H/s), ceil(W/s))."""
    C, H, W = x.shape
    O, Cw, k, k2 = w.shape
    if Cw != C or k != k2:
        raise ValueError(f"kernel {w.shape} does not fit input with {C} channels")
    pad = (k - 1) // 2
    Ho, Wo = -(-H // stride), -(-W // stride)
    xp = np.pad(x, ((0, 0), (pad, pad + stride), (pad, pad + stride))) if pad or stride > 1 else x
    out = np.empty((O, Ho * Wo), dtype=x.dtype)
    out[:] = b[:, None]
    for i in range(k):
        for j in range(k):
            patch = xp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
            out += w[:, :, i, j] @ patch.reshape(C, -1)
    return out.reshape(O, Ho, Wo), (x, w, stride)


def conv2d_backward(dy: np.ndarray, cache):
    x, w, stride = cache
    C, H, W = x.shape
    O, _, k, _ = w.shape
    pad = (k - 1) // 2
    _, Ho, Wo = dy.shape
    xp = np.pad(x, ((0, 0), (pad, pad + stride), (pad, pad + stride)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    g = dy.reshape(O, -1)
    for i in range(k):
        for j in range(k):
            sl = (slice(None), slice(i, i + stride * Ho, stride), slice(j, j + stride * Wo, stride))
            dw[:, :, i, j] = g @ xp[sl].reshape(C, -1).T
            dxp[sl] += (w[:, :, i, j].T @ g).reshape(C, Ho, Wo)
    dx = dxp[:, pad:pad + H, pad:pad + W]
    return dx, dw, g.sum(axis=1)


def depth_to_space(x: np.ndarray, factor: int = 2) -> np.ndarray:
    """Pixel shuffle: channel ``c * f^2 + dy * f + dx`` lands at ``(c, f*h + dy, f*w + dx)``."""
    C4, H, W = x.shape
    f = factor
    C = C4 // (f * f)
    if C * f * f != C4:
        raise ValueError(f"{C4} channels cannot be shuffled by factor {f}")
    return x.reshape(C, f, f, H, W).transpose(0, 3, 1, 4, 2).reshape(C, H * f, W * f)


def space_to_depth(x: np.ndarray, factor: int = 2) -> np.ndarray:
    C, Hf, Wf = x.shape
    f = factor
    H, W = Hf // f, Wf // f
    return x.reshape(C, H, f, W, f).transpose(0, 2, 4, 1, 3).reshape(C * f * f, H, W)


def leaky_relu(x: np.ndarray):
    return np.where(x > 0, x, LEAK * x), x


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dy, LEAK * dy)


def gdn(x: np.ndarray, beta: np.ndarray, gamma: np.ndarray, inverse: bool = False):
    """``x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``; ``inverse`` multiplies instead."""
    if np.any(beta <= 0):
        raise ValueError("GDN beta must be positive")
    C = x.shape[0]
    x2 = (x * x).reshape(C, -1)
    norm = np.sqrt(beta[:, None] + gamma @ x2).reshape(x.shape)
    y = x * norm if inverse else x / norm
    return y, (x, gamma, norm, inverse)


def gdn_backward(dy: np.ndarray, cache):
    x, gamma, norm, inverse = cache
    C = x.shape[0]
    if inverse:
        # y = x * n, n = sqrt(u); dy/du = x / (2 n)
        dx = dy * norm
        du = dy * x / (2.0 * norm)
    else:
        # y = x / n; dy/du = -x / (2 n^3)
        dx = dy / norm
        du = -dy * x / (2.0 * norm ** 3)
    du2 = du.reshape(C, -1)
    x2 = (x * x).reshape(C, -1)
    dbeta = du2.sum(axis=1)
    dgamma = du2 @ x2.T
    dx = dx + (2.0 * x.reshape(C, -1) * (gamma.T @ du2)).reshape(x.shape)
    return dx, dbeta, dgamma


def masked_kernel(w: np.ndarray) -> np.ndarray:
    """Zero the center and every later raster position of a square kernel."""
    k = w.shape[-1]
    mask = np.zeros((k, k), dtype=w.dtype)
    centre = k // 2
    mask[:centre, :] = 1
    mask[centre, :centre] = 1
    return w * mask
