"""Pure-numpy fallback for the convolution kernels (im2col + matmul)."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x, k):
    # [N, C, H, W] -> [N, C*k*k, H*W]
    p = k // 2
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # [N, C, H, W, k, k]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, h * w)


def conv2d_forward(x, w):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    cols = _im2col(x, k)
    out = np.matmul(w.reshape(o, c * k * k), cols)
    return out.reshape(n, o, h, wd)


def conv2d_grad_input(g, w):
    n, o, h, wd = g.shape
    _, c, k, _ = w.shape
    p = k // 2
    gcols = np.matmul(w.reshape(o, c * k * k).T, g.reshape(n, o, h * wd))
    gcols = gcols.reshape(n, c, k, k, h, wd)
    gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    for u in range(k):
        for v in range(k):
            gxp[:, :, u:u + h, v:v + wd] += gcols[:, :, u, v]
    return np.ascontiguousarray(gxp[:, :, p:p + h, p:p + wd])


def conv2d_grad_weight(x, g, k):
    n, c, h, wd = x.shape
    o = g.shape[1]
    cols = _im2col(x, k)
    gw = np.zeros((o, c * k * k))
    for i in range(n):
        gw += g[i].reshape(o, h * wd) @ cols[i].T
    return gw.reshape(o, c, k, k)
