"""Pure-numpy depthwise 3x3 kernels (fallback when the extension is absent).

All arrays are float64, channel-first ``[c, h, w]``; zero padding of one pixel.
"""
import numpy as np


def dwconv3x3_forward(x, w):
    c, h, wd = x.shape
    xp = np.zeros((c, h + 2, wd + 2))
    xp[:, 1:-1, 1:-1] = x
    out = np.zeros((c, h, wd))
    for a in range(3):
        for b in range(3):
            out += w[:, a, b, None, None] * xp[:, a:a + h, b:b + wd]
    return out


def dwconv3x3_grad_input(g, w):
    c, h, wd = g.shape
    gp = np.zeros((c, h + 2, wd + 2))
    gp[:, 1:-1, 1:-1] = g
    gx = np.zeros((c, h, wd))
    # x[i, j] feeds out[i - a + 1, j - b + 1] through w[a, b]
    for a in range(3):
        for b in range(3):
            gx += w[:, a, b, None, None] * gp[:, 2 - a:2 - a + h, 2 - b:2 - b + wd]
    return gx


def dwconv3x3_grad_weight(g, x):
    c, h, wd = x.shape
    xp = np.zeros((c, h + 2, wd + 2))
    xp[:, 1:-1, 1:-1] = x
    gw = np.empty((c, 3, 3))
    for a in range(3):
        for b in range(3):
            gw[:, a, b] = np.einsum("chw,chw->c", g, xp[:, a:a + h, b:b + wd])
    return gw
