"""Forward/backward primitives on channels-last (B, H, W, C) arrays.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes the upstream gradient and that cache.
"""

import numpy as np

_OFFSETS = [(dy, dx) for dy in range(3) for dx in range(3)]


def conv3x3_forward(x, w):
    """Same-padded 3x3 convolution without bias; ``w`` has shape (3, 3, C, O)."""
    b, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((b, h, wd, 9, c), dtype=x.dtype)
    for k, (dy, dx) in enumerate(_OFFSETS):
        cols[:, :, :, k, :] = xp[:, dy:dy + h, dx:dx + wd, :]
    cols = cols.reshape(b * h * wd, 9 * c)
    out = cols @ w.reshape(9 * c, -1)
    return out.reshape(b, h, wd, -1), (cols, x.shape)


def conv3x3_backward(dout, w, cache):
    cols, shape = cache
    b, h, wd, c = shape
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = (cols.T @ d2).reshape(w.shape)
    dcols = (d2 @ w.reshape(9 * c, -1).T).reshape(b, h, wd, 9, c)
    dxp = np.zeros((b, h + 2, wd + 2, c), dtype=dout.dtype)
    for k, (dy, dx) in enumerate(_OFFSETS):
        dxp[:, dy:dy + h, dx:dx + wd, :] += dcols[:, :, :, k, :]
    return dxp[:, 1:-1, 1:-1, :], dw


def conv1x1_forward(x, w, bias):
    out = x.reshape(-1, x.shape[-1]) @ w + bias
    return out.reshape(*x.shape[:-1], -1), x


def conv1x1_backward(dout, w, x):
    d2 = dout.reshape(-1, dout.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return (d2 @ w.T).reshape(x.shape), x2.T @ d2, d2.sum(axis=0)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, eps, momentum):
    """Per-channel normalisation over (B, H, W).

    Returns ``(out, cache, new_running_mean, new_running_var)``. The running
    variance is updated with the unbiased batch variance.
    """
    if train:
        n = x.shape[0] * x.shape[1] * x.shape[2]
        mean = x.mean(axis=(0, 1, 2))
        centred = x - mean
        var = (centred * centred).mean(axis=(0, 1, 2))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centred * inv_std
        new_mean = (1 - momentum) * running_mean + momentum * mean
        unbiased = var * n / max(n - 1, 1)
        new_var = (1 - momentum) * running_var + momentum * unbiased
        return gamma * xhat + beta, (xhat, inv_std, gamma), new_mean, new_var
    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x - running_mean) * inv_std
    return gamma * xhat + beta, None, running_mean, running_var


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma = cache
    n = xhat.shape[0] * xhat.shape[1] * xhat.shape[2]
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool2_forward(x):
    b, h, w, c = x.shape
    blocks = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(dout, cache):
    idx, (b, h, w, c) = cache
    d = np.zeros((*dout.shape, 4), dtype=dout.dtype)
    np.put_along_axis(d, idx[..., None], dout[..., None], axis=-1)
    d = d.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return d.reshape(b, h, w, c)


def upconv2_forward(x, w, bias):
    """Stride-2 2x2 transposed convolution; ``w`` has shape (C, 2, 2, O)."""
    b, h, wd, c = x.shape
    o = w.shape[-1]
    y = x.reshape(-1, c) @ w.reshape(c, 4 * o)
    y = y.reshape(b, h, wd, 2, 2, o).transpose(0, 1, 3, 2, 4, 5).reshape(b, 2 * h, 2 * wd, o)
    return y + bias, x


def upconv2_backward(dout, w, x):
    b, h, wd, c = x.shape
    o = w.shape[-1]
    d = dout.reshape(b, h, 2, wd, 2, o).transpose(0, 1, 3, 2, 4, 5).reshape(-1, 4 * o)
    x2 = x.reshape(-1, c)
    dw = (x2.T @ d).reshape(w.shape)
    dx = (d @ w.reshape(c, 4 * o).T).reshape(x.shape)
    return dx, dw, dout.sum(axis=(0, 1, 2))


def dropout_forward(x, p, rng):
    """Inverted dropout: survivors are scaled by 1 / (1 - p)."""
    if p <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def dropout_backward(dout, keep):
    return dout if keep is None else dout * keep


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
