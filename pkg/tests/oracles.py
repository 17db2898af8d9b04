"""Reference implementations that share no code with the package.

Everything here is plain numpy: a direct (shifted-sum) convolution instead of
im2col, hand-written energies, and central differences. Tests compare the
package's autodiff against these.
"""

from __future__ import annotations

import struct

import numpy as np


def blocks_from_flat(layout, flat):
    out, start = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape))
        out[name] = np.asarray(flat[start:start + size], dtype=np.float64).reshape(shape)
        start += size
    assert start == len(flat)
    return out


def conv_same(x, w, b):
    # sum of the nine shifted copies of the zero-padded input, each weighted by one kernel tap
    n, c, h, wd = x.shape
    xp = np.zeros((n, c, h + 2, wd + 2))
    xp[:, :, 1:-1, 1:-1] = x
    shifted = np.stack([xp[:, :, di:di + h, dj:dj + wd] for di in range(3) for dj in range(3)])
    taps = w.reshape(w.shape[0], c, 9)
    out = np.tensordot(shifted, taps, axes=([0, 2], [2, 1]))  # n, h, w, o
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None]


def maxpool(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def logits(kind, widths, layout, flat, x):
    p = blocks_from_flat(layout, flat)
    n = len(x)
    if kind.startswith("convnet"):
        h = x
        for i in range(len(widths)):
            h = maxpool(np.maximum(conv_same(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"]), 0))
        return h.reshape(n, -1) @ p["fc.weight"] + p["fc.bias"]
    h = x.reshape(n, -1)
    depth = len(widths) + 1
    for i in range(depth):
        h = h @ p[f"fc{i}.weight"] + p[f"fc{i}.bias"]
        if i < depth - 1:
            h = np.maximum(h, 0)
    return h


def log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def energy_value(kind, z, y, gamma=2.0, margin=1.0):
    n, c = z.shape
    logp = log_softmax(z)[np.arange(n), y]
    if kind == "cross_entropy":
        return -logp.mean()
    if kind == "focal":
        return -(((1 - np.exp(logp)) ** gamma) * logp).mean()
    hinge = np.maximum(0.0, margin - (z[np.arange(n), y][:, None] - z))
    hinge[np.arange(n), y] = 0.0
    return hinge.sum() / (n * c)


def central_diff(f, x, eps=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        v = flat[i]
        flat[i] = v + eps
        hi = f(x)
        flat[i] = v - eps
        lo = f(x)
        flat[i] = v
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def gradient_error(analytic, numeric, rel_floor=1e-3):
    """Max entrywise relative error; entries far below the gradient's scale
    are measured against ``rel_floor * max|g|`` (central differences carry
    ~1e-10 absolute roundoff, meaningless relative to a 1e-7 entry)."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    assert a.shape == n.shape
    scale = max(np.abs(a).max(initial=0), np.abs(n).max(initial=0))
    if scale == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), rel_floor * scale)
    return float((np.abs(a - n) / denom).max())


def descent_loop(theta0, grad_fn, rate, steps):
    theta = np.array(theta0, dtype=np.float64)
    for _ in range(steps):
        theta = theta - rate * grad_fn(theta)
    return theta


def idx_bytes(array, dtype_code=0x08):
    """IDX file written field by field with ``struct``."""
    array = np.asarray(array, dtype=np.uint8)
    head = struct.pack(">BBBB", 0, 0, dtype_code, array.ndim)
    head += b"".join(struct.pack(">I", d) for d in array.shape)
    return head + array.tobytes()
